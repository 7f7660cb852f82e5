"""Coefficients, truncated states and pointwise functionals of the dyadic model.

The truncated system for shells 1..N reads

    dX_n/dt = k_{n-1} X_{n-1}^2 - k_n X_n X_{n+1},

with X_0 = X_{N+1} = 0, so the last shell only receives energy and the total
E_N = sum X_j^2 is conserved.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._validation import ConfigurationError, check_positive, check_shell_vector

__all__ = [
    "CoefficientScheme",
    "ShellState",
    "NormReport",
    "rhs",
    "energy",
    "partial_energy",
    "partial_energies",
    "h1_norm_sq",
    "class_k_a",
    "flux_identity_residual",
    "norm_report",
]


@dataclass(frozen=True)
class CoefficientScheme:
    """Coefficients ``k_n = scale * base**n`` with the growth bound ``k_n <= bound * 2**n``.

    Parameters
    ----------
    base : float
        Geometric ratio of the coefficients (2 gives the classical dyadic model).
    scale : float
        Prefactor of the coefficients.
    bound : float
        The constant C of the admissibility condition ``0 <= k_n <= C 2^n``.
    n_max : int
        Largest shell index the scheme supports.
    """

    base: float = 2.0
    scale: float = 1.0
    bound: float = 1.0
    n_max: int = 64
    values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        check_positive(self.base, "base")
        check_positive(self.scale, "scale")
        check_positive(self.bound, "bound")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ConfigurationError(f"n_max must be a positive integer, got {self.n_max!r}")
        n = np.arange(self.n_max + 1, dtype=float)
        with np.errstate(over="ignore"):
            k = self.scale * self.base ** n
        k[0] = 0.0
        if not np.all(np.isfinite(k)):
            raise ConfigurationError("coefficients overflow; reduce n_max or base")
        limit = self.bound * 2.0 ** n
        bad = np.nonzero(k[1:] > limit[1:])[0]
        if bad.size:
            first = int(bad[0]) + 1
            raise ConfigurationError(
                f"coefficient k_{first} = {float(k[first])!r} exceeds bound * 2**{first} = "
                f"{float(limit[first])!r} (base={self.base}, scale={self.scale}, bound={self.bound})")
        k.setflags(write=False)
        object.__setattr__(self, "values", k)

    def k(self, n):
        """Coefficient of shell ``n`` (``k(0) == 0``)."""
        if not 0 <= n <= self.n_max:
            raise IndexError(f"shell index {n} outside 0..{self.n_max}")
        return float(self.values[n])

    def for_shells(self, n_shells):
        """Coefficient array ``k_0..k_N`` for an N-shell state."""
        if n_shells > self.n_max:
            raise ConfigurationError(
                f"state has {n_shells} shells but the scheme supports at most {self.n_max}")
        return self.values[: n_shells + 1]

    def to_dict(self):
        return {"base": self.base, "scale": self.scale, "bound": self.bound, "n_max": self.n_max}


@dataclass(frozen=True)
class ShellState:
    """Truncated shell vector ``X_1..X_N`` at time ``t``."""

    t: float
    x: np.ndarray

    def __post_init__(self):
        t = float(self.t)
        if not np.isfinite(t) or t < 0:
            raise ValueError(f"time must be finite and nonnegative, got {self.t!r}")
        x = check_shell_vector(self.x).copy()
        x.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)

    @property
    def n_shells(self):
        return self.x.size

    def shell(self, n):
        """Value of shell ``n`` with the boundary conventions X_0 = X_{N+1} = 0."""
        if n == 0 or n == self.x.size + 1:
            return 0.0
        if not 1 <= n <= self.x.size:
            raise IndexError(f"shell index {n} outside 0..{self.x.size + 1}")
        return float(self.x[n - 1])

    def __eq__(self, other):
        if not isinstance(other, ShellState):
            return NotImplemented
        return self.t == other.t and np.array_equal(self.x, other.x)

    def __hash__(self):
        return hash((self.t, self.x.tobytes()))


@dataclass(frozen=True)
class NormReport:
    energy: float
    partial_energies: np.ndarray
    h1_sq: float
    a_value: float


def _as_vector(state):
    if isinstance(state, ShellState):
        return state.x
    return check_shell_vector(state)


def rhs(state, scheme):
    """Right-hand side of the truncated system at ``state``."""
    x = _as_vector(state)
    k = scheme.for_shells(x.size)
    out = np.empty(x.size)
    _kernels.rhs_into(x, k, out)
    return out


def partial_energies(state):
    """Compensated prefix sums ``E_1..E_N`` of the squared shells."""
    x = _as_vector(state)
    return _kernels.neumaier_cumsum(x * x)


def partial_energy(state, n):
    x = _as_vector(state)
    if not 1 <= n <= x.size:
        raise IndexError(f"partial energy index {n} outside 1..{x.size}")
    return float(partial_energies(x)[n - 1])


def energy(state):
    x = _as_vector(state)
    return float(partial_energies(x)[-1])


def h1_norm_sq(state, scheme):
    x = _as_vector(state)
    k = scheme.for_shells(x.size)[1:]
    kx = k * x
    return float(_kernels.neumaier_cumsum(kx * kx)[-1])


def class_k_a(state, scheme):
    """Finite-N value of ``sup_n (-k_n X_{n+1})``.

    The maximum runs over n = 1..N with X_{N+1} = 0, so the result is never
    negative.  For the infinite system this is only a lower bound on the
    supremum.
    """
    x = _as_vector(state)
    k = scheme.for_shells(x.size)[1:]
    terms = -k[:-1] * x[1:]
    if terms.size == 0:
        return 0.0
    return max(0.0, float(terms.max()))


def flux_identity_residual(state, scheme, n):
    """``sum_{j<=n} 2 X_j f_j + 2 k_n X_n^2 X_{n+1}`` evaluated in floating point."""
    x = _as_vector(state)
    if not 1 <= n <= x.size:
        raise IndexError(f"shell index {n} outside 1..{x.size}")
    k = scheme.for_shells(x.size)
    f = rhs(x, scheme)
    lhs = _kernels.neumaier_cumsum(2.0 * x[:n] * f[:n])[-1]
    x_next = x[n] if n < x.size else 0.0
    return float(lhs - (-2.0 * k[n] * x[n - 1] * x[n - 1] * x_next))


def flux_identity_residuals(state, scheme):
    """Residuals for every n = 1..N, plus the scale sum |2 X_j f_j| per prefix."""
    x = _as_vector(state)
    k = scheme.for_shells(x.size)
    f = rhs(x, scheme)
    terms = 2.0 * x * f
    lhs = _kernels.neumaier_cumsum(terms)
    x_next = np.append(x[1:], 0.0)
    flux = -2.0 * k[1:] * x * x * x_next
    return lhs - flux, _kernels.neumaier_cumsum(np.abs(terms))


def norm_report(state, scheme):
    x = _as_vector(state)
    pe = partial_energies(x)
    return NormReport(
        energy=float(pe[-1]),
        partial_energies=pe,
        h1_sq=h1_norm_sq(x, scheme),
        a_value=class_k_a(x, scheme),
    )
