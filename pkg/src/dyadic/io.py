"""CSV / JSONL serialisation of trajectories, reports and experiment results.

Floats are written with ``repr`` (shortest decimal that round-trips), so
reading a file back reproduces every value bit for bit.  Every file starts
with a header carrying the schema version and provenance; CSV files keep it
in ``#`` comment lines above the column row.
"""
from __future__ import annotations

import json
import math
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import DiagnosticsReport, PairCertificate
from .integrate import Event, IntegratorConfig, StepStats, Trajectory
from .model import CoefficientScheme

__all__ = [
    "SCHEMA_VERSION",
    "TrajectoryFormatError",
    "DigestMismatchWarning",
    "write_trajectory",
    "read_trajectory",
    "emit_report",
    "read_report",
    "infer_format",
]

SCHEMA_VERSION = 1
FORMATS = ("csv", "jsonl")


class TrajectoryFormatError(ValueError):
    """Malformed trajectory or report file."""


class DigestMismatchWarning(UserWarning):
    pass


def infer_format(path, fmt=None):
    if fmt is not None:
        if fmt not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")
        return fmt
    suffix = Path(path).suffix.lower().lstrip(".")
    return "jsonl" if suffix in ("jsonl", "json") else "csv"


def _f(v):
    return repr(float(v))


def _json_default(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, default=_json_default, allow_nan=True)


def _clean(value):
    """JSON-friendly copy; non-finite floats become strings so output stays valid JSON."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    return value


def _trajectory_header(traj, provenance):
    header = {
        "kind": "trajectory",
        "schema": SCHEMA_VERSION,
        "version": __version__,
        "n_shells": traj.n_shells,
        "scheme": traj.scheme.to_dict(),
        "status": traj.status,
        "step_stats": {
            "accepted": traj.step_stats.accepted,
            "rejected": traj.step_stats.rejected,
            "dt_min_used": traj.step_stats.dt_min_used,
            "dt_max_used": traj.step_stats.dt_max_used,
        },
        "events": [[e.t, e.kind, e.shell, e.value] for e in traj.events],
    }
    if traj.config is not None:
        header["config"] = traj.config.to_dict()
        header["config_digest"] = traj.config.digest()
    if provenance:
        header["provenance"] = provenance
    return _clean(header)


def write_trajectory(traj, path, fmt=None, provenance=None):
    """Write ``traj`` to ``path`` (format from ``fmt`` or the file suffix)."""
    fmt = infer_format(path, fmt)
    path = Path(path)
    header = _trajectory_header(traj, provenance)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if fmt == "csv":
            fh.write("# " + _dumps(header) + "\n")
            fh.write(",".join(["t"] + [f"x{j}" for j in range(1, traj.n_shells + 1)]) + "\n")
            for t, row in zip(traj.t.tolist(), traj.x.tolist()):
                fh.write(",".join([repr(t)] + [repr(v) for v in row]) + "\n")
        else:
            fh.write(_dumps({"type": "header", **header}) + "\n")
            for t, row in zip(traj.t.tolist(), traj.x.tolist()):
                fh.write(_dumps({"type": "sample", "t": t, "x": row}) + "\n")
    return path


def _parse_float(text, lineno):
    try:
        return float(text)
    except ValueError:
        raise TrajectoryFormatError(f"line {lineno}: cannot parse {text!r} as a number") from None


def _restore(header, times, rows, path, expected_digest):
    n = header.get("n_shells")
    scheme = CoefficientScheme(**header["scheme"])
    config = None
    if "config" in header:
        config = IntegratorConfig(**header["config"])
        stored = header.get("config_digest")
        if stored is not None and stored != config.digest():
            warnings.warn(f"{path}: config digest {stored} does not match the stored config",
                          DigestMismatchWarning, stacklevel=3)
        if expected_digest is not None and expected_digest != config.digest():
            warnings.warn(f"{path}: config digest {config.digest()} differs from the expected "
                          f"{expected_digest}", DigestMismatchWarning, stacklevel=3)
    stats = StepStats(**header.get("step_stats", {})) if "step_stats" in header else StepStats()
    events = [Event(float(t), str(k), int(s), float(v)) for t, k, s, v in header.get("events", [])]
    x = np.array(rows, dtype=np.float64).reshape(len(rows), n)
    try:
        traj = Trajectory(np.array(times, dtype=np.float64), x, scheme, config, stats, events,
                          header.get("status", "complete"))
    except ValueError as exc:
        raise TrajectoryFormatError(f"{path}: {exc}") from None
    return traj


def read_trajectory(path, expected_digest=None):
    """Read a trajectory written by :func:`write_trajectory` (either format)."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TrajectoryFormatError(f"{path}: empty file")
    if lines[0].startswith("#"):
        return _read_csv(lines, path, expected_digest)
    return _read_jsonl(lines, path, expected_digest)


def _read_csv(lines, path, expected_digest):
    try:
        header = json.loads(lines[0][1:].strip())
    except json.JSONDecodeError as exc:
        raise TrajectoryFormatError(f"{path}: line 1: bad header ({exc})") from None
    if header.get("kind") != "trajectory":
        raise TrajectoryFormatError(f"{path}: not a trajectory file")
    n = int(header["n_shells"])
    idx = 1
    while idx < len(lines) and lines[idx].startswith("#"):
        idx += 1
    if idx >= len(lines):
        raise TrajectoryFormatError(f"{path}: missing column row")
    columns = lines[idx].split(",")
    if len(columns) != n + 1 or columns[0] != "t":
        raise TrajectoryFormatError(f"line {idx + 1}: expected columns t,x1..x{n}")
    times, rows = [], []
    for lineno in range(idx + 2, len(lines) + 1):
        fields = lines[lineno - 1].split(",")
        if len(fields) != n + 1:
            raise TrajectoryFormatError(
                f"{path}: line {lineno} (row {len(rows) + 1}): expected {n + 1} fields, got {len(fields)}")
        times.append(_parse_float(fields[0], lineno))
        rows.append([_parse_float(v, lineno) for v in fields[1:]])
    return _restore(header, times, rows, path, expected_digest)


def _read_jsonl(lines, path, expected_digest):
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TrajectoryFormatError(f"{path}: line 1: bad header ({exc})") from None
    if header.get("type") != "header" or header.get("kind") != "trajectory":
        raise TrajectoryFormatError(f"{path}: not a trajectory file")
    n = int(header["n_shells"])
    times, rows = [], []
    for lineno in range(2, len(lines) + 1):
        try:
            obj = json.loads(lines[lineno - 1])
            t, x = float(obj["t"]), [float(v) for v in obj["x"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise TrajectoryFormatError(
                f"{path}: line {lineno} (row {len(rows) + 1}): malformed sample ({exc})") from None
        if len(x) != n:
            raise TrajectoryFormatError(
                f"{path}: line {lineno} (row {len(rows) + 1}): expected {n} shells, got {len(x)}")
        times.append(t)
        rows.append(x)
    return _restore(header, times, rows, path, expected_digest)


# ---------------------------------------------------------------- reports

def _report_table(obj):
    """(kind, columns, rows, summary) for any supported report object."""
    if isinstance(obj, DiagnosticsReport):
        n = obj.n_shells
        cols = (["t", "energy", "h1_sq", "a", "min_component"]
                + [f"E_{j}" for j in range(1, n + 1)] + [f"flux_{j}" for j in range(1, n + 1)])
        rows = [
            [obj.t[i], obj.energy[i], obj.h1_sq[i], obj.a_value[i], obj.min_component[i],
             *obj.partial_energies[i], *obj.flux_residuals[i]]
            for i in range(obj.t.size)
        ]
        summary = obj.summary()
        summary["witnesses"] = obj.witnesses
        summary["settled_time"] = obj.settled_time
        return "diagnostics", cols, rows, summary
    if isinstance(obj, PairCertificate):
        n = obj.psi.shape[1]
        cols = ["t"] + [f"psi_{j}" for j in range(1, n + 1)] + ["a", "envelope", "violation"]
        viol = obj.violation
        rows = [[obj.t[i], *obj.psi[i], obj.a[i], obj.envelope[i], viol[i]]
                for i in range(obj.t.size)]
        summary = {"max_psi": obj.max_psi, "max_violation": obj.max_violation,
                   "envelope_ok": obj.envelope_ok, "K": obj.K, "slack_rtol": obj.slack_rtol}
        return "pair_certificate", cols, rows, summary
    from .experiments import ExperimentResult

    if isinstance(obj, ExperimentResult):
        cols = ["section", "key", "value"]
        rows = ([["criterion", k, v] for k, v in obj.criteria.items()]
                + [["metric", k, v] for k, v in obj.metrics.items()])
        return "experiment", cols, rows, obj.to_dict()
    raise TypeError(f"no report schema for {type(obj).__name__}")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return _f(v)
    if v is None:
        return ""
    return str(v)


def emit_report(obj, path, fmt=None, provenance=None):
    """Write a diagnostics report, pair certificate or experiment result.

    CSV: ``#`` header line (schema, summary), column row, one row per sample.
    JSONL: header object, one object per sample, then one summary object.
    """
    fmt = infer_format(path, fmt)
    kind, cols, rows, summary = _report_table(obj)
    header = {"kind": kind, "schema": SCHEMA_VERSION, "version": __version__, "columns": cols}
    if provenance:
        header["provenance"] = provenance
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if fmt == "csv":
            fh.write("# " + _dumps(_clean(header)) + "\n")
            fh.write("# summary " + _dumps(_clean(summary)) + "\n")
            fh.write(",".join(cols) + "\n")
            for row in rows:
                fh.write(",".join(_cell(v) for v in row) + "\n")
        else:
            fh.write(_dumps(_clean({"type": "header", **header})) + "\n")
            for row in rows:
                fh.write(_dumps(_clean({"type": "sample", **dict(zip(cols, row))})) + "\n")
            fh.write(_dumps(_clean({"type": "summary", **summary})) + "\n")
    return path


def read_report(path):
    """Return ``(header, columns, rows, summary)`` from an emitted report."""
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").split("\n") if ln]
    if lines[0].startswith("#"):
        header = json.loads(lines[0][2:])
        summary = json.loads(lines[1][len("# summary "):])
        cols = lines[2].split(",")
        rows = [ln.split(",") for ln in lines[3:]]
        return header, cols, rows, summary
    objs = [json.loads(ln) for ln in lines]
    header = objs[0]
    summary = objs[-1] if objs[-1].get("type") == "summary" else {}
    samples = [o for o in objs[1:] if o.get("type") == "sample"]
    cols = header.get("columns", [])
    return header, cols, [[s.get(c) for c in cols] for s in samples], summary
