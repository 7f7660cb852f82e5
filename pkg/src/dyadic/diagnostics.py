"""Checks of the energy identities and inequalities along sampled trajectories.

All checks work at sample resolution: a continuous-time statement such as
"E is non-increasing" becomes a comparison between consecutive samples with
an explicit tolerance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .integrate import Trajectory
from .model import CoefficientScheme

__all__ = [
    "EnergyCheck",
    "SignReport",
    "LemmaCheck",
    "ClassKBound",
    "DiagnosticsReport",
    "PairCertificate",
    "energy_series",
    "partial_energy_series",
    "check_energy_monotonicity",
    "check_sign_preservation",
    "check_h_plus_energy_lemmas",
    "simple_bound_check",
    "class_k_bound_check",
    "flux_residual_series",
    "diagnose",
    "pair_certificate",
    "envelope_constant",
]

ENERGY_RTOL = 1e-7
FLUX_RTOL = 1e-9


def partial_energy_series(traj):
    """(S, N) compensated prefix sums of X_j^2 at every sample."""
    sq = traj.x * traj.x
    out = np.empty_like(sq)
    for i in range(sq.shape[0]):
        out[i] = _kernels.neumaier_cumsum(sq[i])
    return out


def energy_series(traj):
    if len(traj) == 0:
        return np.empty(0)
    return partial_energy_series(traj)[:, -1]


def _coeffs(traj):
    return traj.scheme.for_shells(traj.n_shells)


def h1_series(traj):
    kx = traj.x * _coeffs(traj)[1:]
    sq = kx * kx
    return np.array([_kernels.neumaier_cumsum(row)[-1] for row in sq]) if len(traj) else np.empty(0)


def a_series(traj):
    """max(0, max_n -k_n X_{n+1}) per sample."""
    if len(traj) == 0:
        return np.empty(0)
    k = _coeffs(traj)[1:]
    terms = -k[:-1] * traj.x[:, 1:]
    if terms.shape[1] == 0:
        return np.zeros(len(traj))
    return np.maximum(terms.max(axis=1), 0.0)


def flux_residual_series(traj):
    """Telescoping residuals (S, N) and their scales sum_{j<=n} |2 X_j f_j|."""
    k = _coeffs(traj)
    n = traj.n_shells
    res = np.empty((len(traj), n))
    scale = np.empty((len(traj), n))
    f = np.empty(n)
    for i in range(len(traj)):
        x = traj.x[i]
        _kernels.rhs_into(x, k, f)
        terms = 2.0 * x * f
        x_next = np.append(x[1:], 0.0)
        res[i] = _kernels.neumaier_cumsum(terms) + 2.0 * k[1:] * x * x * x_next
        scale[i] = _kernels.neumaier_cumsum(np.abs(terms))
    return res, scale


@dataclass(frozen=True)
class EnergyCheck:
    weak_ok: bool
    strong_ok: bool
    weak_witness: tuple | None = None
    strong_witness: tuple | None = None
    tol: float = 0.0

    @property
    def implication_ok(self):
        """weak => strong at sample resolution."""
        return (not self.weak_ok) or self.strong_ok


def check_energy_monotonicity(traj, rtol=ENERGY_RTOL):
    """Weak (E(t) <= E(0)) and strong (E non-increasing) inequalities.

    Witnesses are the first violating pair of sample times.
    """
    e = energy_series(traj)
    if e.size == 0:
        return EnergyCheck(True, True)
    tol = rtol * e[0]
    weak_bad = np.nonzero(e > e[0] + tol)[0]
    strong_bad = np.nonzero(e[1:] > e[:-1] + tol)[0]
    weak_w = (float(traj.t[0]), float(traj.t[weak_bad[0]])) if weak_bad.size else None
    strong_w = ((float(traj.t[strong_bad[0]]), float(traj.t[strong_bad[0] + 1]))
                if strong_bad.size else None)
    return EnergyCheck(weak_bad.size == 0, strong_bad.size == 0, weak_w, strong_w, float(tol))


@dataclass(frozen=True)
class SignViolation:
    shell: int
    index: int
    t: float
    value: float


@dataclass
class SignReport:
    """Per-shell sign history.

    ``first_nonnegative[j]`` is the first sample index at which shell j+1 is
    >= 0 (or -1 if never); ``settled_time[j]`` is the first time from which the
    shell stays >= -eps until the end of the horizon (NaN if it never settles).
    """

    eps: float
    first_nonnegative: np.ndarray
    settled_time: np.ndarray
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations


def check_sign_preservation(traj, eps=None):
    """Once a shell is >= 0 it must stay >= -eps at all later samples."""
    if eps is None:
        eps = traj.sign_tolerance
    x = traj.x
    n_s, n = x.shape
    first = np.full(n, -1, dtype=np.int64)
    settled = np.full(n, np.nan)
    violations = []
    for j in range(n):
        col = x[:, j]
        nonneg = np.nonzero(col >= 0.0)[0]
        if nonneg.size:
            i0 = int(nonneg[0])
            first[j] = i0
            dips = np.nonzero(col[i0:] < -eps)[0]
            for d in dips:
                idx = i0 + int(d)
                violations.append(SignViolation(j + 1, idx, float(traj.t[idx]), float(col[idx])))
        below = np.nonzero(col < -eps)[0]
        start = int(below[-1]) + 1 if below.size else 0
        if start < n_s:
            settled[j] = traj.t[start]
    violations.sort(key=lambda v: (v.index, v.shell))
    return SignReport(float(eps), first, settled, violations)


@dataclass(frozen=True)
class LemmaCheck:
    lemma3_consistent: bool
    lemma4_consistent: bool
    lemma3_witness: tuple | None = None
    lemma4_witness: tuple | None = None


def check_h_plus_energy_lemmas(traj, rtol=ENERGY_RTOL, eps=None):
    """Sample-level sign/energy consistency between each shell and the energy below it.

    For consecutive samples s < t and every shell m (with X_{N+1} = 0 standing
    for the shell past the truncation):

    * if X_m(t) < -eps, the shell was negative on all of [s, t], so the
      partial energy E_{m-1} may not have decreased;
    * if X_m(s) >= 0, the shell stays nonnegative on [s, t], so E_{m-1} may
      not have increased.  For m = N+1 this is the statement that the total
      energy does not increase.

    Witnesses are ``(t_s, t_t, m)`` for the first violation.
    """
    if eps is None:
        eps = traj.sign_tolerance
    if len(traj) < 2:
        return LemmaCheck(True, True)
    pe = partial_energy_series(traj)
    tol = rtol * max(pe[0, -1], 0.0)
    n_s, n = traj.x.shape
    # partial energies E_0..E_N with E_0 = 0; shell m bounds E_{m-1}
    ep = np.concatenate([np.zeros((n_s, 1)), pe], axis=1)
    xs = np.concatenate([traj.x, np.zeros((n_s, 1))], axis=1)  # X_1..X_{N+1}
    d_e = ep[1:] - ep[:-1]  # change of E_{m-1}, column m-1
    neg_now = xs[1:] < -eps
    l3 = neg_now & (d_e < -tol)
    nonneg_before = xs[:-1] >= 0.0
    l4 = nonneg_before & (d_e > tol)

    def witness(mask):
        hits = np.argwhere(mask)
        if hits.size == 0:
            return None
        i, col = hits[0]
        return (float(traj.t[i]), float(traj.t[i + 1]), int(col) + 1)

    w3, w4 = witness(l3), witness(l4)
    return LemmaCheck(w3 is None, w4 is None, w3, w4)


def simple_bound_check(traj, rtol=ENERGY_RTOL):
    """Every |X_n(t)| <= sqrt(E(0)) (+ relative slack)."""
    if len(traj) == 0:
        return True
    root = math.sqrt(energy_series(traj)[0])
    return bool(np.all(np.abs(traj.x) <= root * (1.0 + rtol)))


@dataclass(frozen=True)
class ClassKBound:
    """Result of the a(t) <= k_{n0} sqrt(E(0)) check.

    ``holds`` is None when the precondition (every shell above n0 nonnegative
    along the trajectory) fails, which is distinct from a violated bound.
    """

    n0: int
    applicable: bool
    holds: bool | None
    bound: float
    max_a: float
    witness: tuple | None = None

    def __bool__(self):
        return bool(self.holds)


def class_k_bound_check(traj, n0, tol=1e-9, eps=None):
    if eps is None:
        eps = traj.sign_tolerance
    if not 1 <= n0 <= traj.n_shells:
        raise ValueError(f"n0={n0} outside 1..{traj.n_shells}")
    a = a_series(traj)
    bound = traj.scheme.k(n0) * math.sqrt(energy_series(traj)[0]) if len(traj) else 0.0
    max_a = float(a.max()) if a.size else 0.0
    tail = traj.x[:, n0:]
    if tail.size and np.any(tail < -eps):
        i, j = np.argwhere(tail < -eps)[0]
        return ClassKBound(n0, False, None, bound, max_a,
                           (float(traj.t[i]), int(j) + n0 + 1, float(tail[i, j])))
    bad = np.nonzero(a > bound + tol)[0]
    w = (float(traj.t[bad[0]]), float(a[bad[0]])) if bad.size else None
    return ClassKBound(n0, True, bad.size == 0, float(bound), max_a, w)


@dataclass
class DiagnosticsReport:
    t: np.ndarray
    energy: np.ndarray
    partial_energies: np.ndarray
    h1_sq: np.ndarray
    a_value: np.ndarray
    flux_residuals: np.ndarray
    flux_scale: np.ndarray
    min_component: np.ndarray
    settled_time: np.ndarray
    weak_energy_ok: bool
    strong_energy_ok: bool
    lemma3_consistent: bool
    lemma4_consistent: bool
    sign_ok: bool = True
    simple_bound_ok: bool = True
    flux_ok: bool = True
    energy_drift: float = 0.0
    witnesses: dict = field(default_factory=dict)

    @property
    def n_shells(self):
        return self.partial_energies.shape[1] if self.partial_energies.ndim == 2 else 0

    def summary(self):
        return {
            "weak_energy_ok": self.weak_energy_ok,
            "strong_energy_ok": self.strong_energy_ok,
            "weak_implies_strong": (not self.weak_energy_ok) or self.strong_energy_ok,
            "lemma3_consistent": self.lemma3_consistent,
            "lemma4_consistent": self.lemma4_consistent,
            "sign_ok": self.sign_ok,
            "simple_bound_ok": self.simple_bound_ok,
            "flux_ok": self.flux_ok,
            "energy_drift": self.energy_drift,
            "max_h1_sq": float(self.h1_sq.max()) if self.h1_sq.size else 0.0,
            "max_a": float(self.a_value.max()) if self.a_value.size else 0.0,
        }


def diagnose(traj, energy_rtol=ENERGY_RTOL, flux_rtol=FLUX_RTOL):
    """Evaluate every single-trajectory diagnostic."""
    n = traj.n_shells
    if len(traj) == 0:
        empty = np.empty((0, n))
        return DiagnosticsReport(np.empty(0), np.empty(0), empty, np.empty(0), np.empty(0),
                                 empty, empty, np.empty(0), np.full(n, np.nan),
                                 True, True, True, True)
    pe = partial_energy_series(traj)
    e = pe[:, -1]
    h1 = h1_series(traj)
    res, scale = flux_residual_series(traj)
    k_top = _coeffs(traj)[-1]
    flux_bad = np.abs(res) > flux_rtol * (1.0 + k_top * e)[:, None]
    en = check_energy_monotonicity(traj, energy_rtol)
    signs = check_sign_preservation(traj)
    lem = check_h_plus_energy_lemmas(traj, energy_rtol)
    drift = float(np.max(np.abs(e - e[0])) / e[0]) if e[0] > 0 else float(np.max(np.abs(e)))
    witnesses = {}
    if en.weak_witness:
        witnesses["weak_energy"] = en.weak_witness
    if en.strong_witness:
        witnesses["strong_energy"] = en.strong_witness
    if signs.violations:
        v = signs.violations[0]
        witnesses["sign"] = (v.t, v.shell, v.value)
    if lem.lemma3_witness:
        witnesses["lemma3"] = lem.lemma3_witness
    if lem.lemma4_witness:
        witnesses["lemma4"] = lem.lemma4_witness
    if flux_bad.any():
        i, j = np.argwhere(flux_bad)[0]
        witnesses["flux"] = (float(traj.t[i]), int(j) + 1, float(res[i, j]))
    return DiagnosticsReport(
        t=traj.t.copy(), energy=e, partial_energies=pe, h1_sq=h1, a_value=a_series(traj),
        flux_residuals=res, flux_scale=scale, min_component=traj.x.min(axis=1),
        settled_time=signs.settled_time,
        weak_energy_ok=en.weak_ok, strong_energy_ok=en.strong_ok,
        lemma3_consistent=lem.lemma3_consistent, lemma4_consistent=lem.lemma4_consistent,
        sign_ok=signs.ok, simple_bound_ok=simple_bound_check(traj, energy_rtol),
        flux_ok=not flux_bad.any(), energy_drift=drift, witnesses=witnesses,
    )


def envelope_constant(scheme, e0):
    """K = 2 C sqrt(E(0)).

    With |Z_{n+1}| <= 2 sqrt(E(0)) and k_n / 2^n <= C,
    |k_n / 2^n Y_n Z_n Z_{n+1}| <= 2 C sqrt(E(0)) |X_n^(1)^2 - X_n^(2)^2|
    <= K (X_n^(1)^2 + X_n^(2)^2).
    """
    return 2.0 * scheme.bound * math.sqrt(e0)


@dataclass
class PairCertificate:
    t: np.ndarray
    z: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    a: np.ndarray
    envelope: np.ndarray
    K: float
    slack_rtol: float = 1e-8

    @property
    def violation(self):
        """psi_N(t) - G(t) per sample."""
        if self.psi.shape[0] == 0:
            return np.empty(0)
        return self.psi[:, -1] - self.envelope

    @property
    def max_psi(self):
        return float(self.psi[:, -1].max()) if self.psi.shape[0] else 0.0

    @property
    def max_violation(self):
        v = self.violation
        return float(v.max()) if v.size else 0.0

    @property
    def envelope_ok(self):
        """psi_N <= G + slack_rtol (1 + G) at every sample."""
        if self.psi.shape[0] == 0:
            return True
        return bool(np.all(self.violation <= self.slack_rtol * (1.0 + self.envelope)))


def pair_certificate(traj1, traj2, scheme=None, K=None, slack_rtol=1e-8):
    """Difference functional psi_n and its Gronwall envelope for two trajectories.

    psi_n(t) = sum_{i<=n} Z_i(t)^2 / 2^i with Z = X1 - X2, and
    G(t) = int_0^t exp(int_s^t 2 a(r) dr) K (X_N^(1)(s)^2 + X_N^(2)(s)^2) ds,
    discretised with the trapezoidal rule on the shared sample grid.
    """
    if scheme is None:
        scheme = traj1.scheme
    if traj1.scheme != traj2.scheme or traj1.scheme != scheme:
        raise ValueError("both trajectories must use the given coefficient scheme")
    if traj1.x.shape != traj2.x.shape:
        raise ValueError(f"shape mismatch: {traj1.x.shape} vs {traj2.x.shape}")
    if not np.array_equal(traj1.t, traj2.t):
        raise ValueError("trajectories are sampled on different time grids")
    z = traj1.x - traj2.x
    y = traj1.x + traj2.x
    n = traj1.n_shells
    weights = 0.5 ** np.arange(1, n + 1)
    wz = z * z * weights
    psi = np.empty_like(wz)
    for i in range(wz.shape[0]):
        psi[i] = _kernels.neumaier_cumsum(wz[i])
    a = np.maximum(a_series(traj1), a_series(traj2))
    if K is None:
        e0 = max(energy_series(traj1)[0], energy_series(traj2)[0]) if len(traj1) else 0.0
        K = envelope_constant(scheme, e0)
    q = K * (traj1.x[:, -1] ** 2 + traj2.x[:, -1] ** 2)
    g = np.zeros(len(traj1))
    for i in range(1, len(traj1)):
        dt = traj1.t[i] - traj1.t[i - 1]
        growth = math.exp(dt * (a[i - 1] + a[i]))  # exp of trapezoid for int 2a
        g[i] = growth * g[i - 1] + 0.5 * dt * (growth * q[i - 1] + q[i])
    return PairCertificate(traj1.t.copy(), z, y, psi, a, g, float(K), slack_rtol)
