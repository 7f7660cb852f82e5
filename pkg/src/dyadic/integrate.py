"""Time stepping for truncated shell systems.

Two steppers are provided:

``adaptive_rk``
    Dormand-Prince 5(4) with a PI step-size controller (safety 0.9, step
    ratio clamped to [0.2, 5]), an explicit-stability cap
    ``dt <= stiffness_cap_factor / rho(X)`` where ``rho`` is the Gershgorin
    bound on the Jacobian, and detect-and-reject handling of sign dips.
    Samples between accepted steps come from cubic Hermite interpolation.

``positivity_voc``
    Exponential stepping from the variation-of-constants form of each shell
    equation with the damping rate frozen over the step.  Nonnegative states
    stay exactly nonnegative.  First order; samples are linearly interpolated
    so that they inherit the sign guarantee.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels
from ._validation import ConfigurationError, check_positive
from .model import CoefficientScheme, ShellState

__all__ = [
    "IntegratorConfig",
    "StepStats",
    "Event",
    "Trajectory",
    "IntegrationError",
    "StiffnessError",
    "step_adaptive",
    "step_positivity",
    "integrate",
    "sample_grid",
]

SCHEMES = ("adaptive_rk", "positivity_voc")
_NO_ACCEPT_LIMIT = 2 ** 62


@dataclass(frozen=True)
class IntegratorConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    dt_init: float = 1e-3
    dt_min: float = 1e-13
    dt_max: float = 0.005
    stiffness_cap_factor: float = 0.5
    scheme_choice: str = "adaptive_rk"
    positivity_floor: float = 0.0
    max_steps: int = 100_000_000

    def __post_init__(self):
        for name in ("abs_tol", "rel_tol", "dt_init", "dt_min", "dt_max", "stiffness_cap_factor"):
            check_positive(getattr(self, name), name)
        check_positive(self.positivity_floor, "positivity_floor", allow_zero=True)
        if not self.dt_min <= self.dt_init <= self.dt_max:
            raise ConfigurationError(
                f"need dt_min <= dt_init <= dt_max, got {self.dt_min}, {self.dt_init}, {self.dt_max}")
        if self.scheme_choice not in SCHEMES:
            raise ConfigurationError(
                f"scheme_choice must be one of {SCHEMES}, got {self.scheme_choice!r}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ConfigurationError(f"max_steps must be a positive integer, got {self.max_steps!r}")

    @property
    def sign_tolerance(self):
        """How far below zero a shell that started nonnegative may go."""
        return 0.0 if self.scheme_choice == "positivity_voc" else 10.0 * self.abs_tol

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_tolerance(self, tol):
        """Copy with ``rel_tol = tol`` and ``abs_tol = tol / 100``."""
        return replace(self, rel_tol=tol, abs_tol=tol / 100.0)


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    dt_min_used: float = math.inf
    dt_max_used: float = 0.0


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    shell: int
    value: float


@dataclass
class Trajectory:
    """Samples ``x[i]`` (shells 1..N) at strictly increasing times ``t[i]``."""

    t: np.ndarray
    x: np.ndarray
    scheme: CoefficientScheme
    config: IntegratorConfig | None = None
    step_stats: StepStats = field(default_factory=StepStats)
    events: list = field(default_factory=list)
    status: str = "complete"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2 or self.t.ndim != 1 or self.x.shape[0] != self.t.size:
            raise ValueError(
                f"trajectory needs t of shape (S,) and x of shape (S, N); got {self.t.shape}, {self.x.shape}")
        if self.t.size > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("trajectory time stamps must be strictly increasing")
        if self.x.shape[1] > self.scheme.n_max:
            raise ConfigurationError(
                f"trajectory has {self.x.shape[1]} shells, scheme supports {self.scheme.n_max}")

    @property
    def n_shells(self):
        return self.x.shape[1]

    def __len__(self):
        return self.t.size

    def __getitem__(self, i):
        return ShellState(self.t[i], self.x[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def states(self):
        return list(self)

    @property
    def sign_tolerance(self):
        return self.config.sign_tolerance if self.config is not None else 0.0


class IntegrationError(RuntimeError):
    """Integration stopped early; ``trajectory`` holds the samples reached."""

    def __init__(self, message, t_fail, trajectory=None):
        super().__init__(message)
        self.t_fail = t_fail
        self.trajectory = trajectory


class StiffnessError(IntegrationError):
    """The step size required for stability or accuracy fell below ``dt_min``."""


def sample_grid(t0, t_end, sample_every):
    """Uniform grid ``t0 + i * sample_every`` plus ``t_end`` itself."""
    if t_end == t0:
        return np.array([t0])
    check_positive(sample_every, "sample_every")
    count = int(math.floor((t_end - t0) / sample_every * (1 + 1e-12)))
    grid = t0 + sample_every * np.arange(count + 1)
    grid = grid[grid < t_end - 1e-12 * max(1.0, abs(t_end))]
    return np.append(grid, t_end)


def _events_from(ev_t, ev_kind, ev_shell, ev_val, n_ev):
    kinds = {_kernels.EV_UNDERSHOOT: "undershoot", _kernels.EV_FLOOR: "floor"}
    return [Event(float(ev_t[i]), kinds[int(ev_kind[i])], int(ev_shell[i]), float(ev_val[i]))
            for i in range(n_ev)]


def _coefficients(initial, scheme):
    return np.ascontiguousarray(scheme.for_shells(initial.n_shells), dtype=np.float64)


def step_adaptive(state, scheme, config=IntegratorConfig()):
    """Take one accepted Dormand-Prince step starting from trial size ``dt_init``.

    Returns ``(new_state, dt_used, error_estimate)`` where ``error_estimate`` is
    the max-norm local error estimate of the accepted step.
    """
    k = _coefficients(state, scheme)
    x0 = np.ascontiguousarray(state.x)
    out = _kernels.run_rk(x0, k, state.t, state.t + config.dt_init, config.dt_init, config.dt_min,
                          config.dt_max, config.abs_tol, config.rel_tol,
                          config.stiffness_cap_factor, config.positivity_floor,
                          np.empty(0), config.max_steps, 0.0, 1)
    (_, _, status, t_reached, x_reached, n_acc, _, _, _, _, _, _, _, _, _, err) = out
    if n_acc == 0:
        raise StiffnessError(f"step size fell below dt_min={config.dt_min} at t={state.t}", state.t)
    return ShellState(t_reached, x_reached.copy()), float(t_reached - state.t), float(err)


def step_positivity(state, scheme, config=IntegratorConfig(scheme_choice="positivity_voc")):
    """One exponential step of size ``min(dt_max, cap)``; returns ``(new_state, dt_used)``."""
    k = _coefficients(state, scheme)
    x = np.ascontiguousarray(state.x)
    h = config.dt_max
    rho = _kernels.exponential_rate(x, k)
    if rho > 0.0:
        h = min(h, config.stiffness_cap_factor / rho)
    if h < config.dt_min:
        raise StiffnessError(f"step size {h:.3e} below dt_min={config.dt_min} at t={state.t}", state.t)
    y = np.empty_like(x)
    _kernels.exponential_step(x, k, h, y)
    return ShellState(state.t + h, y), h


def integrate(initial, scheme, config=IntegratorConfig(), t_end=1.0, sample_every=0.01, *,
              fixed_step=None):
    """Integrate from ``initial`` to ``t_end`` and sample on a uniform grid.

    ``fixed_step`` switches the Runge-Kutta core to constant steps without
    error control (used for order checks).  Raises :class:`StiffnessError` or
    :class:`IntegrationError` with the partial trajectory attached.
    """
    if t_end < initial.t:
        raise ValueError(f"t_end={t_end} precedes the initial time {initial.t}")
    times = sample_grid(initial.t, float(t_end), sample_every)
    if t_end == initial.t:
        return Trajectory(times, initial.x[np.newaxis, :].copy(), scheme, config)
    k = _coefficients(initial, scheme)
    x0 = np.ascontiguousarray(initial.x, dtype=np.float64)
    stats = StepStats()
    events = []
    if config.scheme_choice == "positivity_voc" and fixed_step is None:
        samples, n_done, status, t_reached, _, n_acc, h_lo, h_hi = _kernels.run_exponential(
            x0, k, initial.t, float(t_end), config.dt_min, config.dt_max,
            config.stiffness_cap_factor, times, config.max_steps)
        stats.accepted = int(n_acc)
    else:
        out = _kernels.run_rk(
            x0, k, initial.t, float(t_end), config.dt_init, config.dt_min, config.dt_max,
            config.abs_tol, config.rel_tol, config.stiffness_cap_factor, config.positivity_floor,
            times, config.max_steps, float(fixed_step or 0.0), _NO_ACCEPT_LIMIT)
        (samples, n_done, status, t_reached, _, n_acc, n_rej, h_lo, h_hi,
         ev_t, ev_kind, ev_shell, ev_val, n_ev, _, _) = out
        stats.accepted, stats.rejected = int(n_acc), int(n_rej)
        events = _events_from(ev_t, ev_kind, ev_shell, ev_val, n_ev)
    stats.dt_min_used, stats.dt_max_used = float(h_lo), float(h_hi)
    if status == _kernels.STIFF:
        events.append(Event(float(t_reached), "dt_min_failure", 0, config.dt_min))
    traj = Trajectory(times[:n_done], samples[:n_done], scheme, config, stats, events)
    if status != _kernels.OK:
        traj.status = {_kernels.STIFF: "stiff", _kernels.BUDGET: "budget",
                       _kernels.NONFINITE: "nonfinite"}[status]
        msg = {
            _kernels.STIFF: f"required step below dt_min={config.dt_min:g} at t={t_reached:.9g}",
            _kernels.BUDGET: f"step budget of {config.max_steps} exhausted at t={t_reached:.9g}",
            _kernels.NONFINITE: f"state became non-finite at t={t_reached:.9g}",
        }[status]
        cls = StiffnessError if status == _kernels.STIFF else IntegrationError
        raise cls(msg, float(t_reached), traj)
    return traj
