"""scikit-learn style wrappers around the integrator and the state functionals."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import _kernels
from .integrate import IntegratorConfig, integrate
from .model import CoefficientScheme, ShellState

__all__ = ["DyadicSimulator", "ShellNormTransformer"]


class DyadicSimulator(BaseEstimator):
    """Integrate an initial shell vector and interpolate the trajectory.

    ``fit(x0)`` takes a single state of shape (N,) or (1, N) and stores the
    sampled trajectory in ``trajectory_``.  ``predict(times)`` returns the
    states at arbitrary times in [0, t_end] using cubic Hermite interpolation
    between samples, with derivatives taken from the model right-hand side.
    """

    def __init__(self, t_end=1.0, sample_every=0.01, base=2.0, scale=1.0, bound=1.0,
                 abs_tol=1e-10, rel_tol=1e-8, stepper="adaptive_rk"):
        self.t_end = t_end
        self.sample_every = sample_every
        self.base = base
        self.scale = scale
        self.bound = bound
        self.abs_tol = abs_tol
        self.rel_tol = rel_tol
        self.stepper = stepper

    def fit(self, X, y=None):
        x0 = check_array(X, ensure_2d=False, dtype=np.float64)
        if x0.ndim == 2:
            if x0.shape[0] != 1:
                raise ValueError(f"fit expects one initial state, got {x0.shape[0]} rows")
            x0 = x0[0]
        n = x0.size
        self.scheme_ = CoefficientScheme(self.base, self.scale, self.bound, n_max=n)
        self.config_ = IntegratorConfig(abs_tol=self.abs_tol, rel_tol=self.rel_tol,
                                        scheme_choice=self.stepper)
        self.trajectory_ = integrate(ShellState(0.0, x0), self.scheme_, self.config_,
                                     self.t_end, self.sample_every)
        self.n_features_in_ = n
        k = self.scheme_.for_shells(n)
        self._slopes = np.empty_like(self.trajectory_.x)
        for i, row in enumerate(self.trajectory_.x):
            _kernels.rhs_into(row, k, self._slopes[i])
        return self

    def predict(self, times):
        check_is_fitted(self, "trajectory_")
        t = np.asarray(times, dtype=np.float64).ravel()
        ts, xs = self.trajectory_.t, self.trajectory_.x
        if t.size and (t.min() < ts[0] or t.max() > ts[-1]):
            raise ValueError(f"times must lie in [{ts[0]}, {ts[-1]}]")
        idx = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, max(len(ts) - 2, 0))
        out = np.empty((t.size, xs.shape[1]))
        if len(ts) == 1:
            out[:] = xs[0]
            return out
        h = ts[idx + 1] - ts[idx]
        s = ((t - ts[idx]) / h)[:, None]
        h = h[:, None]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        out[:] = (h00 * xs[idx] + h10 * h * self._slopes[idx]
                  + h01 * xs[idx + 1] + h11 * h * self._slopes[idx + 1])
        return out


class ShellNormTransformer(TransformerMixin, BaseEstimator):
    """Map states (rows) to ``[energy, h1_sq, a]``."""

    def __init__(self, base=2.0, scale=1.0, bound=1.0):
        self.base = base
        self.scale = scale
        self.bound = bound

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        self.k_ = CoefficientScheme(self.base, self.scale, self.bound,
                                    n_max=X.shape[1]).for_shells(X.shape[1])
        return self

    def transform(self, X):
        check_is_fitted(self, "k_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} shells, got {X.shape[1]}")
        k = self.k_[1:]
        energy = np.array([_kernels.neumaier_cumsum(r * r)[-1] for r in X])
        h1 = np.array([_kernels.neumaier_cumsum((k * r) ** 2)[-1] for r in X])
        nxt = np.concatenate([X[:, 1:], np.zeros((X.shape[0], 1))], axis=1)
        a = np.maximum(0.0, np.max(-k * nxt, axis=1))
        return np.column_stack([energy, h1, a])
