"""Canned, reproducible scenarios built on the integrator and the diagnostics.

Each runner takes an :class:`ExperimentSpec` and returns an
:class:`ExperimentResult`.  Passing ``out_dir`` also writes the trajectories,
reports and the result itself; file contents depend only on the ExperimentSpec, so
re-running produces byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import ConfigurationError
from .diagnostics import (
    ENERGY_RTOL,
    a_series,
    check_sign_preservation,
    class_k_bound_check,
    diagnose,
    energy_series,
    h1_series,
    pair_certificate,
    partial_energy_series,
)
from .initial import InitialCondition, parse_initial_condition
from .integrate import IntegrationError, IntegratorConfig, integrate
from .model import CoefficientScheme, ShellState

__all__ = [
    "EXPERIMENTS",
    "ExperimentSpec",
    "ExperimentResult",
    "ExperimentError",
    "default_spec",
    "ic_family_suite",
    "run_experiment",
    "run_uniqueness_pair",
    "run_truncation_convergence",
    "run_h1_growth",
    "run_finite_negative_class_k",
    "run_invariant_suite",
]

EXPERIMENTS = (
    "uniqueness_pair",
    "truncation_convergence",
    "h1_growth",
    "finite_negative_class_k",
    "invariant_suite",
)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one experiment run.

    ``options`` holds per-experiment knobs (thresholds, shell index, ...);
    see the individual runners for the recognised keys.
    """

    name: str
    n_shells: int = 16
    base: float = 2.0
    scale: float = 1.0
    bound: float = 1.0
    ic: InitialCondition = InitialCondition("unit_shell", (1,))
    t_end: float = 1.0
    configs: tuple = (IntegratorConfig(),)
    seed: int = 0
    sample_every: float = 0.01
    options: tuple = ()
    origin: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.name!r}; expected one of {EXPERIMENTS}")
        if int(self.n_shells) != self.n_shells or self.n_shells < 1:
            raise ConfigurationError(f"n_shells must be a positive integer, got {self.n_shells!r}")
        if not self.t_end >= 0:
            raise ConfigurationError(f"t_end must be nonnegative, got {self.t_end!r}")
        if isinstance(self.ic, str):
            object.__setattr__(self, "ic", parse_initial_condition(self.ic))
        if isinstance(self.configs, IntegratorConfig):
            object.__setattr__(self, "configs", (self.configs,))
        object.__setattr__(self, "configs", tuple(self.configs))
        if not 1 <= len(self.configs) <= 2:
            raise ConfigurationError("an experiment takes one or two integrator configs")
        if isinstance(self.options, dict):
            object.__setattr__(self, "options", tuple(sorted(self.options.items())))
        self.scheme()  # validates the coefficient constraint early

    @property
    def opts(self):
        return dict(self.options)

    def option(self, key, default):
        return self.opts.get(key, default)

    def scheme(self, n_shells=None):
        n = max(self.n_shells * 4, 1) if n_shells is None else n_shells
        return CoefficientScheme(self.base, self.scale, self.bound, n_max=n)

    def initial_vector(self, n_shells=None):
        return self.ic.build(self.n_shells, self.seed) if n_shells is None else _padded(
            self.ic.build(self.n_shells, self.seed), n_shells)

    def to_dict(self):
        return {
            "name": self.name,
            "n_shells": self.n_shells,
            "base": self.base,
            "scale": self.scale,
            "bound": self.bound,
            "ic": str(self.ic),
            "t_end": self.t_end,
            "configs": [c.to_dict() for c in self.configs],
            "seed": self.seed,
            "sample_every": self.sample_every,
            "options": dict(self.options),
        }

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def provenance(self):
        prov = {"spec": self.to_dict(), "spec_digest": self.digest(), "version": __version__,
                "seed": self.seed}
        if self.origin:
            prov["origin"] = dict(self.origin)
        return prov


@dataclass
class ExperimentResult:
    name: str
    passed: bool
    criteria: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    degenerate: bool = False

    def to_dict(self):
        d = asdict(self)
        d["files"] = [str(Path(f).name) for f in self.files]
        return d


class ExperimentError(IntegrationError):
    """An integration leg failed; ``result`` holds what was computed before the failure."""

    def __init__(self, message, t_fail, result):
        super().__init__(message, t_fail, None)
        self.result = result


def _padded(x, n):
    if n < x.size:
        raise ConfigurationError(f"cannot truncate a {x.size}-shell state to {n} shells")
    out = np.zeros(n)
    out[: x.size] = x
    return out


def _require(spec, name):
    if spec.name != name:
        raise ConfigurationError(f"spec is for {spec.name!r}, not {name!r}")


def _finish(result, spec, out_dir, fmt, trajs=(), reports=()):
    """Assemble ``passed`` and optionally write everything to ``out_dir``."""
    failing = [k for k, v in result.criteria.items() if v is False]
    for key in failing:
        result.witnesses.setdefault(key, {"note": "no sample-level witness available"})
    result.passed = not failing
    if out_dir is None:
        return result
    from .io import emit_report, write_trajectory

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = spec.provenance()
    for label, traj in trajs:
        result.files.append(str(write_trajectory(traj, out / f"{spec.name}_{label}.{fmt}", fmt, prov)))
    for label, rep in reports:
        result.files.append(str(emit_report(rep, out / f"{spec.name}_{label}.{fmt}", fmt, prov)))
    path = out / f"{spec.name}_result.{fmt}"
    result.files.append(str(path))
    emit_report(result, path, fmt, prov)
    return result


def _scheme_for(spec, n_shells):
    return spec.scheme() if n_shells <= 4 * spec.n_shells else spec.scheme(n_shells)


def _run(spec, n_shells, config):
    """Integrate the experiment's IC at ``n_shells`` (zero-padded); returns (traj, error)."""
    x0 = spec.initial_vector(n_shells)
    try:
        return integrate(ShellState(0.0, x0), _scheme_for(spec, n_shells), config, spec.t_end, spec.sample_every), None
    except IntegrationError as exc:
        return exc.trajectory, exc


def _fail(spec, result, err, out_dir, fmt, trajs=()):
    result.criteria["integration_complete"] = False
    result.witnesses["integration_complete"] = {"t": err.t_fail, "message": str(err)}
    _finish(result, spec, out_dir, fmt, trajs)
    raise ExperimentError(f"{spec.name}: {err}", err.t_fail, result)


def run_uniqueness_pair(spec, out_dir=None, fmt="csv"):
    """Integrate one IC with two configs and certify the pair.

    Options: ``psi_threshold`` (relative to E(0), default 1e-9) and
    ``slack_rtol`` for the envelope comparison (default 1e-8).
    """
    _require(spec, "uniqueness_pair")
    if len(spec.configs) != 2:
        raise ConfigurationError("uniqueness_pair needs two integrator configs")
    result = ExperimentResult(spec.name, False)
    trajs = []
    for i, cfg in enumerate(spec.configs, 1):
        traj, err = _run(spec, spec.n_shells, cfg)
        trajs.append((f"traj{i}", traj))
        if err is not None:
            _fail(spec, result, err, out_dir, fmt, trajs)
    t1, t2 = trajs[0][1], trajs[1][1]
    cert = pair_certificate(t1, t2, slack_rtol=spec.option("slack_rtol", 1e-8))
    e0 = float(energy_series(t1)[0])
    threshold = spec.option("psi_threshold", 1e-9) * e0
    psi_n = cert.psi[:, -1]
    result.metrics.update(max_psi=cert.max_psi, psi_threshold=threshold, E0=e0, K=cert.K,
                          max_violation=cert.max_violation,
                          max_a=float(cert.a.max()) if cert.a.size else 0.0)
    result.criteria["psi_small"] = cert.max_psi <= threshold
    if not result.criteria["psi_small"]:
        i = int(np.argmax(psi_n))
        j = int(np.argmax(np.abs(cert.z[i])))
        result.witnesses["psi_small"] = {"t": float(cert.t[i]), "shell": j + 1,
                                         "psi_N": float(psi_n[i]), "z": float(cert.z[i, j])}
    result.criteria["envelope"] = cert.envelope_ok
    if not cert.envelope_ok:
        i = int(np.argmax(cert.violation))
        result.witnesses["envelope"] = {"t": float(cert.t[i]), "shell": t1.n_shells,
                                        "psi_N": float(psi_n[i]), "G": float(cert.envelope[i])}
    return _finish(result, spec, out_dir, fmt, trajs, [("certificate", cert)])


def run_truncation_convergence(spec, out_dir=None, fmt="csv"):
    """Self-convergence of E_n under doubling of the truncation.

    Options: ``shell_index`` (n, default 4) and ``doublings`` (default 2).
    Runs N, 2N, ..., compares consecutive levels on the common sample grid.
    """
    _require(spec, "truncation_convergence")
    n = int(spec.option("shell_index", 4))
    doublings = int(spec.option("doublings", 2))
    if not 1 <= n <= spec.n_shells:
        raise ConfigurationError(f"shell_index={n} outside 1..{spec.n_shells}")
    sizes = [spec.n_shells * 2 ** i for i in range(doublings + 1)]
    result = ExperimentResult(spec.name, False)
    result.metrics["sizes"] = sizes
    trajs = []
    for size in sizes:
        traj, err = _run(spec, size, spec.configs[0])
        trajs.append((f"N{size}", traj))
        if err is not None:
            result.witnesses["integration_complete"] = {"t": err.t_fail, "N": size}
            result.metrics["t_reached"] = {lbl: float(tr.t[-1]) if len(tr) else 0.0
                                           for lbl, tr in trajs}
            _convergence_metrics(result, trajs, n, spec.n_shells, partial=True)
            _fail(spec, result, err, out_dir, fmt, trajs)
    diffs = _convergence_metrics(result, trajs, n, spec.n_shells)
    if not spec.initial_vector().any():
        result.degenerate = True
        result.notes["degenerate"] = "zero initial condition; every difference vanishes"
        result.criteria["decreasing"] = all(d == 0.0 for d in diffs)
    else:
        if all(d == 0.0 for d in diffs):
            result.notes["decreasing"] = "levels agree to the last bit over the horizon"
        steps = [b < a or (a == 0.0 and b == 0.0) for a, b in zip(diffs, diffs[1:])]
        result.criteria["decreasing"] = all(steps)
        if not all(steps):
            i = steps.index(False)
            result.witnesses["decreasing"] = {
                "t": result.metrics["argmax_t"][i + 1], "shell": n,
                "N": sizes[i + 1], "values": [diffs[i], diffs[i + 1]]}
    return _finish(result, spec, out_dir, fmt, trajs)


def _convergence_metrics(result, trajs, n, n_base, partial=False):
    diffs, at, per_shell, rates = [], [], [], []
    common = min(len(tr) for _, tr in trajs)
    for (_, a), (_, b) in zip(trajs, trajs[1:]):
        m = common if partial else min(len(a), len(b))
        if m == 0:
            break
        ea = partial_energy_series(a)[:m, n - 1]
        eb = partial_energy_series(b)[:m, n - 1]
        d = np.abs(ea - eb)
        i = int(np.argmax(d))
        diffs.append(float(d[i]))
        at.append(float(a.t[i]))
        per_shell.append(np.max(np.abs(a.x[:m, :n_base] - b.x[:m, :n_base]), axis=0).tolist())
    for d0, d1 in zip(diffs, diffs[1:]):
        rates.append(math.log2(d0 / d1) if d0 > 0 and d1 > 0 else None)
    result.metrics.update(sup_diff=diffs, argmax_t=at, per_shell_sup_diff=per_shell,
                          convergence_rate=rates, shell_index=n)
    if partial:
        result.notes["partial"] = "differences computed on the horizon every level reached"
        result.metrics["common_time"] = float(trajs[0][1].t[common - 1]) if common else None
    return diffs


def run_h1_growth(spec, out_dir=None, fmt="csv"):
    """Track the H^1 norm from a positive, finitely supported IC.

    Options: ``growth_min`` (default 10) and ``refine_n`` (also run that
    larger truncation and require the growth factor at T not to decrease).  A stiffness failure
    ends the run, but the result still reports the growth reached so far.
    """
    _require(spec, "h1_growth")
    x0 = spec.initial_vector()
    if np.any(x0 < 0):
        raise ConfigurationError("h1_growth needs a nonnegative initial condition")
    growth_min = float(spec.option("growth_min", 10.0))
    result = ExperimentResult(spec.name, False)
    result.notes["growth_min"] = "artifact choice; no quantitative blow-up rate is available"
    refine_n = spec.option("refine_n", None)
    sizes = [spec.n_shells]
    if refine_n is not None:
        if int(refine_n) <= spec.n_shells:
            raise ConfigurationError(f"refine_n={refine_n} must exceed n_shells={spec.n_shells}")
        sizes.append(int(refine_n))
    trajs, growth_at_t = [], {}
    for size in sizes:
        traj, err = _run(spec, size, spec.configs[0])
        trajs.append((f"N{size}", traj))
        h1 = h1_series(traj)
        k_top = _scheme_for(spec, size).k(size)
        e0 = float(energy_series(traj)[0]) if len(traj) else 0.0
        tag = f"N{size}"
        m = result.metrics.setdefault(tag, {})
        m["h1_sq_0"] = float(h1[0]) if h1.size else 0.0
        m["ceiling"] = float(k_top ** 2 * e0 / h1[0]) if h1.size and h1[0] > 0 else None
        m["t_reached"] = float(traj.t[-1]) if len(traj) else 0.0
        m["status"] = traj.status
        if err is not None:
            result.notes[f"{tag}_failure"] = str(err)
        if not h1.size or h1[0] == 0.0:
            result.degenerate = True
            result.notes["degenerate"] = "h1_sq(0) = 0, growth factor is 0/0"
            m["growth_factor"] = None
            continue
        g = h1 / h1[0]
        m["growth_factor"] = float(g[-1])
        m["max_growth"] = float(g.max())
        hit = np.nonzero(g >= growth_min)[0]
        m["time_to_threshold"] = float(traj.t[hit[0]]) if hit.size else None
        growth_at_t[size] = float(g[-1]) if err is None else None
    if result.degenerate:
        result.criteria["growth"] = True
        return _finish(result, spec, out_dir, fmt, trajs)
    base = result.metrics[f"N{spec.n_shells}"]
    result.criteria["growth"] = base["time_to_threshold"] is not None
    if not result.criteria["growth"]:
        result.witnesses["growth"] = {"t": base["t_reached"], "values": base["max_growth"]}
    if len(sizes) == 2:
        lo, hi = sizes
        (_, ta), (_, tb) = trajs
        m = min(len(ta), len(tb))
        if m:
            ga = h1_series(ta)[:m] / h1_series(ta)[0]
            gb = h1_series(tb)[:m] / h1_series(tb)[0]
            result.metrics["common_time"] = float(ta.t[m - 1])
            result.metrics["growth_at_common_time"] = {f"N{lo}": float(ga[-1]), f"N{hi}": float(gb[-1])}
        if growth_at_t[lo] is None or growth_at_t[hi] is None:
            result.criteria["refinement_monotone"] = False
            result.witnesses["refinement_monotone"] = {
                "t": spec.t_end, "note": "growth factor at T unavailable: a run stopped early",
                "t_reached": {f"N{s}": result.metrics[f"N{s}"]["t_reached"] for s in sizes}}
        else:
            ok = growth_at_t[hi] >= growth_at_t[lo]
            result.criteria["refinement_monotone"] = ok
            if not ok:
                result.witnesses["refinement_monotone"] = {
                    "t": spec.t_end, "values": [growth_at_t[lo], growth_at_t[hi]]}
    return _finish(result, spec, out_dir, fmt, trajs)


def run_finite_negative_class_k(spec, out_dir=None, fmt="csv"):
    """Sign preservation, the class-K bound and late energy monotonicity.

    n0 is the largest initially negative shell index; with no negative
    shell the bound degenerates to a(t) = 0.  Option ``tol`` (default 1e-9).
    """
    _require(spec, "finite_negative_class_k")
    x0 = spec.initial_vector()
    neg = np.nonzero(x0 < 0)[0]
    if neg.size >= spec.n_shells:
        raise ConfigurationError("finite_negative_class_k needs fewer than N negative shells")
    n0 = int(neg[-1]) + 1 if neg.size else 0
    tol = float(spec.option("tol", 1e-9))
    result = ExperimentResult(spec.name, False)
    traj, err = _run(spec, spec.n_shells, spec.configs[0])
    if err is not None:
        _fail(spec, result, err, out_dir, fmt, [("traj", traj)])
    eps = traj.sign_tolerance
    signs = check_sign_preservation(traj, eps)
    result.criteria["sign_preservation"] = signs.ok
    if not signs.ok:
        v = signs.violations[0]
        result.witnesses["sign_preservation"] = {"t": v.t, "shell": v.shell, "values": v.value}
    result.metrics["n0"] = n0
    result.metrics["negative_count"] = int(neg.size)
    if n0 == 0:
        a = a_series(traj)
        bound, max_a = 0.0, float(a.max())
        ok = max_a <= tol
        result.criteria["class_k_bound"] = ok
        if not ok:
            i = int(np.argmax(a))
            result.witnesses["class_k_bound"] = {"t": float(traj.t[i]), "shell": 0, "values": max_a}
    else:
        ck = class_k_bound_check(traj, n0, tol=tol, eps=eps)
        bound, max_a = ck.bound, ck.max_a
        result.criteria["class_k_bound"] = bool(ck.holds)
        if not ck.applicable:
            t, shell, value = ck.witness
            result.witnesses["class_k_bound"] = {"t": t, "shell": shell, "values": value,
                                                 "note": "a shell above n0 went negative"}
        elif not ck.holds:
            t, value = ck.witness
            result.witnesses["class_k_bound"] = {"t": t, "shell": n0, "values": value}
    result.metrics.update(bound=bound, max_a=max_a)
    # energy monotone from the first sample at which every shell is nonnegative
    all_pos = np.nonzero(np.all(traj.x >= -eps, axis=1))[0]
    if all_pos.size:
        i0 = int(all_pos[0])
        e = energy_series(traj)[i0:]
        etol = ENERGY_RTOL * float(energy_series(traj)[0])
        bad = np.nonzero(e[1:] > e[:-1] + etol)[0]
        result.criteria["energy_nonincreasing"] = bad.size == 0
        result.metrics["all_nonnegative_from"] = float(traj.t[i0])
        if bad.size:
            j = i0 + int(bad[0])
            result.witnesses["energy_nonincreasing"] = {
                "t": float(traj.t[j + 1]), "values": [float(e[bad[0]]), float(e[bad[0] + 1])]}
    else:
        result.criteria["energy_nonincreasing"] = True
        result.metrics["all_nonnegative_from"] = None
        result.notes["energy_nonincreasing"] = "vacuous: some shell stays negative over the horizon"
    return _finish(result, spec, out_dir, fmt, [("traj", traj)])


def run_invariant_suite(spec, out_dir=None, fmt="csv"):
    """All single-trajectory diagnostics plus an energy-drift criterion.

    Option ``drift_max``: relative energy drift allowed (default: the
    energy-check tolerance, 1e-7).
    """
    _require(spec, "invariant_suite")
    result = ExperimentResult(spec.name, False)
    traj, err = _run(spec, spec.n_shells, spec.configs[0])
    if err is not None:
        _fail(spec, result, err, out_dir, fmt, [("traj", traj)])
    rep = diagnose(traj)
    summary = rep.summary()
    drift_max = float(spec.option("drift_max", ENERGY_RTOL))
    for key in ("weak_energy_ok", "strong_energy_ok", "weak_implies_strong", "lemma3_consistent",
                "lemma4_consistent", "sign_ok", "simple_bound_ok", "flux_ok"):
        result.criteria[key] = bool(summary[key])
    result.criteria["energy_drift"] = rep.energy_drift <= drift_max
    result.metrics.update(energy_drift=rep.energy_drift, drift_max=drift_max,
                          max_h1_sq=summary["max_h1_sq"], max_a=summary["max_a"])
    names = {"weak_energy_ok": "weak_energy", "strong_energy_ok": "strong_energy",
             "weak_implies_strong": "strong_energy", "lemma3_consistent": "lemma3",
             "lemma4_consistent": "lemma4", "sign_ok": "sign", "flux_ok": "flux"}
    for crit, wkey in names.items():
        if not result.criteria[crit] and wkey in rep.witnesses:
            result.witnesses[crit] = {"values": list(rep.witnesses[wkey])}
    if not result.criteria["simple_bound_ok"]:
        i, j = np.unravel_index(int(np.argmax(np.abs(traj.x))), traj.x.shape)
        result.witnesses["simple_bound_ok"] = {"t": float(traj.t[i]), "shell": int(j) + 1,
                                               "values": float(traj.x[i, j])}
    if not result.criteria["energy_drift"]:
        e = energy_series(traj)
        i = int(np.argmax(np.abs(e - e[0])))
        result.witnesses["energy_drift"] = {"t": float(traj.t[i]), "values": [float(e[0]), float(e[i])]}
    return _finish(result, spec, out_dir, fmt, [("traj", traj)], [("diagnostics", rep)])


RUNNERS = {
    "uniqueness_pair": run_uniqueness_pair,
    "truncation_convergence": run_truncation_convergence,
    "h1_growth": run_h1_growth,
    "finite_negative_class_k": run_finite_negative_class_k,
    "invariant_suite": run_invariant_suite,
}


def run_experiment(spec, out_dir=None, fmt="csv"):
    return RUNNERS[spec.name](spec, out_dir, fmt)


_DEFAULTS = {
    # name: (N, IC, T, configs, sample_every, options)
    "uniqueness_pair": (16, "unit_shell(1)", 2.0,
                        (IntegratorConfig().with_tolerance(1e-8), IntegratorConfig().with_tolerance(1e-12)),
                        0.01, {}),
    "truncation_convergence": (12, "unit_shell(1)", 1.0, (IntegratorConfig(max_steps=20_000_000),),
                               0.01, {"shell_index": 4, "doublings": 2}),
    "h1_growth": (40, "unit_shell(1)", 5.0, (IntegratorConfig(max_steps=20_000_000),), 0.001,
                  {"growth_min": 10.0}),
    "finite_negative_class_k": (16, "signed(1, geometric(0.5, 8))", 2.0, (IntegratorConfig(),), 0.01, {}),
    "invariant_suite": (16, "random_positive(8)", 2.0, (IntegratorConfig(),), 0.01, {}),
}


def default_spec(name, **overrides):
    """Canonical ExperimentSpec for ``name``; keyword arguments replace fields."""
    if name not in _DEFAULTS:
        raise ConfigurationError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    n, ic, t_end, configs, every, opts = _DEFAULTS[name]
    spec = ExperimentSpec(name, n_shells=n, ic=parse_initial_condition(ic), t_end=t_end,
                          configs=configs, sample_every=every, options=opts)
    return replace(spec, **overrides) if overrides else spec


def ic_family_suite():
    """Twenty named initial conditions covering every family."""
    texts = [
        "zero()", "unit_shell(1)", "unit_shell(2)", "unit_shell(3)", "unit_shell(5)",
        "geometric(0.5, 8)", "geometric(0.7, 12)", "geometric(0.3, 4)", "geometric(0.9, 6)",
        "random_positive(1, 8)", "random_positive(2, 12)", "random_positive(3, 4)",
        "random_positive(4, 16)",
        "signed(1, geometric(0.5, 8))", "signed(2, geometric(0.5, 8))",
        "signed(3, geometric(0.5, 8))", "signed(1, unit_shell(1))",
        "signed(2, random_positive(5, 8))", "signed(4, geometric(0.8, 10))",
        "signed(1, random_positive(6, 16))",
    ]
    return [parse_initial_condition(t) for t in texts]
