import json
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dyadic import CoefficientScheme, IntegratorConfig, ShellState, Trajectory, integrate
from dyadic.diagnostics import diagnose, pair_certificate
from dyadic.experiments import ExperimentResult
from dyadic.io import (
    SCHEMA_VERSION,
    DigestMismatchWarning,
    TrajectoryFormatError,
    emit_report,
    read_report,
    read_trajectory,
    write_trajectory,
)

SCHEME = CoefficientScheme()


@pytest.fixture
def traj():
    x0 = np.zeros(8)
    x0[0] = 1.0
    return integrate(ShellState(0.0, x0), SCHEME, IntegratorConfig(), 1.0, 0.05)


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_round_trip_bit_exact(tmp_path, traj, fmt):
    path = write_trajectory(traj, tmp_path / f"t.{fmt}", provenance={"seed": 3})
    back = read_trajectory(path)
    assert back.t.tobytes() == traj.t.tobytes()
    assert back.x.tobytes() == traj.x.tobytes()
    assert back.config == traj.config and back.scheme == traj.scheme
    assert back.events == traj.events
    assert back.step_stats == traj.step_stats


awkward = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(suppress_health_check=[HealthCheck.function_scoped_fixture], max_examples=30)
@given(arrays(np.float64, (4, 3), elements=awkward), st.sampled_from(["csv", "jsonl"]))
def test_round_trip_any_floats(tmp_path, x, fmt):
    tr = Trajectory(np.array([0.0, 1e-300, 0.1 + 0.2, 7.0]), x, SCHEME)
    back = read_trajectory(write_trajectory(tr, tmp_path / f"h.{fmt}"))
    assert back.x.tobytes() == x.tobytes() and back.t.tobytes() == tr.t.tobytes()


def test_special_values(tmp_path):
    x = np.array([[-0.0, 5e-324, 1.0 / 3.0, -1.7976931348623157e308]])
    tr = Trajectory([0.0], x, SCHEME)
    back = read_trajectory(write_trajectory(tr, tmp_path / "s.csv"))
    assert back.x.tobytes() == x.tobytes()


def test_header_contents(tmp_path, traj):
    path = write_trajectory(traj, tmp_path / "t.csv", provenance={"seed": 3, "spec_digest": "abc"})
    header = json.loads(path.read_text().splitlines()[0][2:])
    assert header["n_shells"] == 8
    assert header["scheme"]["base"] == 2.0 and header["scheme"]["scale"] == 1.0
    assert header["config_digest"] == traj.config.digest()
    assert header["version"] and header["schema"] == SCHEMA_VERSION
    assert header["provenance"]["seed"] == 3


def test_truncated_row_names_row(tmp_path, traj):
    path = write_trajectory(traj, tmp_path / "t.csv")
    text = path.read_text()
    cut = text[: text.rstrip("\n").rfind(",") - 5]
    path.write_text(cut)
    with pytest.raises(TrajectoryFormatError, match=rf"row {len(traj)}\b"):
        read_trajectory(path)


def test_truncated_jsonl(tmp_path, traj):
    path = write_trajectory(traj, tmp_path / "t.jsonl")
    text = path.read_text()
    path.write_text(text[: len(text) - 40])
    with pytest.raises(TrajectoryFormatError, match="row"):
        read_trajectory(path)


def test_bad_number(tmp_path, traj):
    path = write_trajectory(traj, tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    lines[3] = lines[3].replace(lines[3].split(",")[1], "abc", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(TrajectoryFormatError, match="line 4"):
        read_trajectory(path)


def test_digest_mismatch_is_warning(tmp_path, traj):
    path = write_trajectory(traj, tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    lines[0] = lines[0].replace(traj.config.digest(), "0000000000000000")
    path.write_text("\n".join(lines) + "\n")
    with pytest.warns(DigestMismatchWarning):
        back = read_trajectory(path)
    assert back.x.tobytes() == traj.x.tobytes()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        read_trajectory(write_trajectory(traj, tmp_path / "u.csv"))
    with pytest.warns(DigestMismatchWarning):
        read_trajectory(tmp_path / "u.csv", expected_digest="ffff")


def test_larger_n_allowed(tmp_path):
    x0 = np.zeros(30)
    x0[0] = 1.0
    tr = integrate(ShellState(0.0, x0), SCHEME, IntegratorConfig(), 0.1, 0.05)
    back = read_trajectory(write_trajectory(tr, tmp_path / "big.csv"))
    assert back.n_shells == 30
    assert diagnose(back).n_shells == 30


def test_not_a_trajectory(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("")
    with pytest.raises(TrajectoryFormatError):
        read_trajectory(p)
    p.write_text('# {"kind": "other"}\n')
    with pytest.raises(TrajectoryFormatError):
        read_trajectory(p)


def test_empty_report_header_only(tmp_path):
    empty = Trajectory(np.empty(0), np.empty((0, 3)), SCHEME)
    path = emit_report(diagnose(empty), tmp_path / "r.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 3 and lines[2].startswith("t,energy,h1_sq,a,min_component,E_1")
    header, cols, rows, summary = read_report(path)
    assert rows == [] and header["schema"] == SCHEMA_VERSION


def test_pair_certificate_schema(tmp_path, traj):
    cert = pair_certificate(traj, traj)
    path = emit_report(cert, tmp_path / "c.csv")
    header, cols, rows, summary = read_report(path)
    assert cols == ["t"] + [f"psi_{j}" for j in range(1, 9)] + ["a", "envelope", "violation"]
    assert len(rows) == len(traj)
    assert float(rows[-1][0]) == traj.t[-1]
    path = emit_report(cert, tmp_path / "c.jsonl")
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert lines[0]["type"] == "header" and lines[0]["schema"] == SCHEMA_VERSION
    assert sum(1 for x in lines if x["type"] == "sample") == len(traj)
    summary = lines[-1]
    assert summary["type"] == "summary"
    assert {"max_psi", "max_violation", "envelope_ok"} <= set(summary)


def test_diagnostics_report_values_exact(tmp_path, traj):
    rep = diagnose(traj)
    _, cols, rows, summary = read_report(emit_report(rep, tmp_path / "d.csv"))
    e_col = cols.index("energy")
    assert [float(r[e_col]) for r in rows] == rep.energy.tolist()
    assert summary["weak_energy_ok"] is True


def test_experiment_result_report(tmp_path):
    res = ExperimentResult("h1_growth", False, criteria={"growth": False}, metrics={"x": float("inf")},
                           witnesses={"growth": {"t": 1.0}})
    for fmt in ("csv", "jsonl"):
        _, cols, rows, summary = read_report(emit_report(res, tmp_path / f"r.{fmt}"))
        assert cols == ["section", "key", "value"]
        assert summary["passed"] is False and summary["witnesses"]["growth"]["t"] == 1.0
        assert summary["metrics"]["x"] == "inf"


def test_bad_format(tmp_path, traj):
    with pytest.raises(ValueError):
        write_trajectory(traj, tmp_path / "t.csv", fmt="xml")


def test_unknown_report_type(tmp_path):
    with pytest.raises(TypeError):
        emit_report(object(), tmp_path / "r.csv")
