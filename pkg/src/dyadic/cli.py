"""Command-line entry point: ``dyadic simulate | compare | experiment <name> | check``.

Exit codes: 0 all checks pass, 1 a check failed, 2 usage error,
3 integration failure.

Spec files are flat ``key = value`` lines; ``#`` starts a comment.  Flags
given on the command line override file values, and every override is
recorded in the provenance header of the output files.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import __version__
from ._validation import ConfigurationError
from .diagnostics import diagnose
from .experiments import EXPERIMENTS, ExperimentError, ExperimentSpec, default_spec, run_experiment
from .initial import parse_initial_condition
from .integrate import IntegrationError, IntegratorConfig, integrate
from .io import TrajectoryFormatError, emit_report, read_trajectory, write_trajectory
from .model import ShellState

log = logging.getLogger("dyadic")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_INTEGRATION = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


# key -> converter
SPEC_KEYS = {
    "n_shells": _int,
    "base": float,
    "scale": float,
    "C": float,
    "ic.family": str,
    "ic.params": str,
    "t_end": float,
    "tol.abs": float,
    "tol.rel": float,
    "tol2.abs": float,
    "tol2.rel": float,
    "stepper": str,
    "stepper2": str,
    "seed": _int,
    "sample_every": float,
    "dt.max": float,
    "max_steps": _int,
}
OPTION_KEYS = {
    "psi_threshold": float,
    "slack_rtol": float,
    "shell_index": _int,
    "doublings": _int,
    "growth_min": float,
    "refine_n": _int,
    "tol": float,
    "drift_max": float,
}


def parse_spec_text(text, source="<spec>"):
    """Parse ``key = value`` lines into a dict of typed values (unknown keys rejected)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = _convert(key, value, f"{source}:{lineno}")
    return values


def _convert(key, value, where):
    if key.startswith("option."):
        name = key[len("option."):]
        conv = OPTION_KEYS.get(name)
    else:
        conv = SPEC_KEYS.get(key)
    if conv is None:
        known = sorted(SPEC_KEYS) + [f"option.{k}" for k in sorted(OPTION_KEYS)]
        raise UsageError(f"{where}: unknown key {key!r}; known keys: {', '.join(known)}")
    try:
        return conv(value)
    except ValueError as exc:
        raise UsageError(f"{where}: bad value for {key!r}: {exc}") from None


@dataclass
class RunConfig:
    subcommand: str
    spec_path: str | None
    out_dir: Path
    fmt: str
    verbosity: int
    values: dict = field(default_factory=dict)
    overrides: list = field(default_factory=list)
    spec_file_digest: str | None = None


FLAG_KEYS = {
    "n_shells": "n_shells", "base": "base", "scale": "scale", "C": "C", "ic": "ic",
    "t_end": "t_end", "abs_tol": "tol.abs", "rel_tol": "tol.rel", "abs_tol2": "tol2.abs",
    "rel_tol2": "tol2.rel", "stepper": "stepper", "stepper2": "stepper2", "seed": "seed",
    "sample_every": "sample_every", "dt_max": "dt.max", "max_steps": "max_steps",
}


def parse_config(args):
    """Merge the key = value file (if any) with command-line flags; flags win."""
    values, digest = {}, None
    if args.spec:
        try:
            text = Path(args.spec).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read spec file {args.spec}: {exc}") from None
        values = parse_spec_text(text, args.spec)
        digest = hashlib.sha256(text.encode()).hexdigest()[:16]
    overrides = []
    for attr, key in FLAG_KEYS.items():
        raw = getattr(args, attr, None)
        if raw is None:
            continue
        if key == "ic":
            try:
                ic = parse_initial_condition(raw)
            except ConfigurationError as exc:
                raise UsageError(f"--ic: {exc}") from None
            new = {"ic.family": ic.family, "ic.params": ", ".join(str(p) for p in ic.params)}
        else:
            new = {key: _convert(key, raw, f"--{attr.replace('_', '-')}")}
        for k, v in new.items():
            if k in values and values[k] != v:
                overrides.append(k)
            values[k] = v
    for item in getattr(args, "option", None) or []:
        if "=" not in item:
            raise UsageError(f"--option expects key=value, got {item!r}")
        name, raw = (s.strip() for s in item.split("=", 1))
        key = f"option.{name}"
        v = _convert(key, raw, "--option")
        if key in values and values[key] != v:
            overrides.append(key)
        values[key] = v
    return RunConfig(args.command, args.spec, Path(args.out), args.format, args.verbose - args.quiet,
                     values, sorted(set(overrides)), digest)


def build_spec(cfg, name):
    """ExperimentSpec for ``name``: experiment defaults, then file, then flags."""
    v = cfg.values
    base = default_spec(name) if name in EXPERIMENTS and cfg.subcommand == "experiment" else None
    if base is None:
        base = ExperimentSpec(name, configs=(IntegratorConfig(), IntegratorConfig().with_tolerance(1e-12))
                              if name == "uniqueness_pair" else (IntegratorConfig(),))
    try:
        fields = {}
        for key, attr in (("n_shells", "n_shells"), ("base", "base"), ("scale", "scale"),
                          ("C", "bound"), ("t_end", "t_end"), ("seed", "seed"),
                          ("sample_every", "sample_every")):
            if key in v:
                fields[attr] = v[key]
        if "ic.family" in v:
            fields["ic"] = parse_initial_condition(v["ic.family"], v.get("ic.params", ""))
        elif "ic.params" in v:
            raise UsageError("ic.params given without ic.family")
        configs = list(base.configs)
        configs[0] = _config(configs[0], v, "tol", "stepper")
        if len(configs) == 2:
            configs[1] = _config(configs[1], v, "tol2", "stepper2")
        elif any(k in v for k in ("tol2.abs", "tol2.rel", "stepper2")):
            raise UsageError(f"tol2.* and stepper2 only apply to two-config runs, not {name}")
        fields["configs"] = tuple(configs)
        opts = dict(base.options)
        opts.update({k[len("option."):]: val for k, val in v.items() if k.startswith("option.")})
        fields["options"] = opts
        origin = {"overrides": cfg.overrides}
        if cfg.spec_file_digest:
            origin["spec_file_digest"] = cfg.spec_file_digest
        fields["origin"] = origin
        return replace(base, **fields)
    except ConfigurationError as exc:
        raise UsageError(f"invalid spec: {exc}") from None


def _config(cfg, v, tol_key, stepper_key):
    kw = {}
    if f"{tol_key}.abs" in v:
        kw["abs_tol"] = v[f"{tol_key}.abs"]
    if f"{tol_key}.rel" in v:
        kw["rel_tol"] = v[f"{tol_key}.rel"]
    if stepper_key in v:
        kw["scheme_choice"] = v[stepper_key]
    if "dt.max" in v:
        kw["dt_max"] = v["dt.max"]
        kw["dt_init"] = min(cfg.dt_init, v["dt.max"])
    if "max_steps" in v:
        kw["max_steps"] = v["max_steps"]
    return replace(cfg, **kw) if kw else cfg


def _prepare_out(path):
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"output directory {path} is not writable: {exc}") from None
    probe = path / ".write-probe"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {path} is not writable: {exc}") from None


def cmd_simulate(cfg):
    spec = build_spec(cfg, "invariant_suite")
    _prepare_out(cfg.out_dir)
    prov = spec.provenance()
    x0 = spec.initial_vector()
    status = EXIT_OK
    try:
        traj = integrate(ShellState(0.0, x0), spec.scheme(), spec.configs[0], spec.t_end, spec.sample_every)
    except IntegrationError as exc:
        log.error("integration failed: %s", exc)
        traj, status = exc.trajectory, EXIT_INTEGRATION
    write_trajectory(traj, cfg.out_dir / f"trajectory.{cfg.fmt}", cfg.fmt, prov)
    rep = diagnose(traj)
    emit_report(rep, cfg.out_dir / f"diagnostics.{cfg.fmt}", cfg.fmt, prov)
    log.info("wrote %d samples to %s", len(traj), cfg.out_dir)
    if status == EXIT_OK and not all(v for v in rep.summary().values() if isinstance(v, bool)):
        status = EXIT_CHECK
    return status


def _report_result(result):
    for key, ok in result.criteria.items():
        line = f"{'PASS' if ok else 'FAIL'} {result.name}.{key}"
        if not ok:
            line += f" witness={result.witnesses.get(key)}"
        print(line)
    print(f"{'PASS' if result.passed else 'FAIL'} {result.name}" + (" (degenerate)" if result.degenerate else ""))


def _run_spec(spec, cfg):
    _prepare_out(cfg.out_dir)
    try:
        result = run_experiment(spec, cfg.out_dir, cfg.fmt)
    except ExperimentError as exc:
        log.error("%s", exc)
        _report_result(exc.result)
        return EXIT_INTEGRATION
    _report_result(result)
    return EXIT_OK if result.passed else EXIT_CHECK


def cmd_compare(cfg):
    return _run_spec(build_spec(cfg, "uniqueness_pair"), cfg)


def cmd_experiment(cfg, name):
    return _run_spec(build_spec(cfg, name), cfg)


def cmd_check(cfg, path):
    try:
        traj = read_trajectory(path)
    except (OSError, TrajectoryFormatError, ValueError) as exc:
        raise UsageError(f"cannot read trajectory {path}: {exc}") from None
    _prepare_out(cfg.out_dir)
    rep = diagnose(traj)
    prov = {"source": Path(path).name, "version": __version__}
    emit_report(rep, cfg.out_dir / f"check.{cfg.fmt}", cfg.fmt, prov)
    summary = rep.summary()
    witness_keys = {"weak_energy_ok": "weak_energy", "strong_energy_ok": "strong_energy",
                    "weak_implies_strong": "strong_energy", "lemma3_consistent": "lemma3",
                    "lemma4_consistent": "lemma4", "sign_ok": "sign", "flux_ok": "flux"}
    ok = True
    for key, value in summary.items():
        if isinstance(value, bool):
            ok &= value
            line = f"{'PASS' if value else 'FAIL'} check.{key}"
            if not value:
                line += f" witness={rep.witnesses.get(witness_keys.get(key))}"
            print(line)
    print(f"energy_drift {summary['energy_drift']:.3e}")
    return EXIT_OK if ok else EXIT_CHECK


def _add_spec_flags(p):
    p.add_argument("--spec", help="key = value spec file")
    p.add_argument("--n-shells", dest="n_shells")
    p.add_argument("--base")
    p.add_argument("--scale")
    p.add_argument("--C", dest="C", help="growth constant in k_n <= C 2^n")
    p.add_argument("--ic", help="initial condition, e.g. 'unit_shell(1)'")
    p.add_argument("--t-end", dest="t_end")
    p.add_argument("--abs-tol", dest="abs_tol")
    p.add_argument("--rel-tol", dest="rel_tol")
    p.add_argument("--stepper", help="adaptive_rk or positivity_voc")
    p.add_argument("--seed")
    p.add_argument("--sample-every", dest="sample_every")
    p.add_argument("--dt-max", dest="dt_max")
    p.add_argument("--max-steps", dest="max_steps")
    p.add_argument("--option", action="append", metavar="KEY=VALUE", help="experiment option")


def _add_output_flags(p):
    p.add_argument("--out", default=".", help="output directory (default: .)")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="count", default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="dyadic", description="Dyadic shell model laboratory")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="integrate one trajectory and write it with diagnostics")
    _add_spec_flags(p)
    _add_output_flags(p)
    p = sub.add_parser("compare", help="integrate twice and emit the pair certificate")
    _add_spec_flags(p)
    p.add_argument("--abs-tol2", dest="abs_tol2")
    p.add_argument("--rel-tol2", dest="rel_tol2")
    p.add_argument("--stepper2")
    _add_output_flags(p)
    p = sub.add_parser("experiment", help="run a canned experiment")
    p.add_argument("name", choices=EXPERIMENTS)
    _add_spec_flags(p)
    p.add_argument("--abs-tol2", dest="abs_tol2")
    p.add_argument("--rel-tol2", dest="rel_tol2")
    p.add_argument("--stepper2")
    _add_output_flags(p)
    p = sub.add_parser("check", help="run the invariant checks on a trajectory file")
    p.add_argument("trajectory")
    _add_output_flags(p)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    level = logging.WARNING - 10 * (args.verbose - args.quiet)
    logging.basicConfig(level=max(logging.DEBUG, min(logging.CRITICAL, level)),
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "check":
            cfg = RunConfig("check", None, Path(args.out), args.format, args.verbose - args.quiet)
            return cmd_check(cfg, args.trajectory)
        cfg = parse_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "compare":
            return cmd_compare(cfg)
        return cmd_experiment(cfg, args.name)
    except UsageError as exc:
        print(f"dyadic: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
