import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dyadic import (
    CoefficientScheme,
    ConfigurationError,
    IntegrationError,
    IntegratorConfig,
    ShellState,
    StiffnessError,
    Trajectory,
    integrate,
    step_adaptive,
    step_positivity,
)
from dyadic._kernels import gershgorin_rate
from dyadic.diagnostics import energy_series
from dyadic.integrate import sample_grid
from dyadic.model import energy, rhs

SCHEME = CoefficientScheme()
VOC = IntegratorConfig(scheme_choice="positivity_voc")


def rk4_oracle(x0, k, t_end, dt):
    """Classical fixed-step RK4 written independently of the package kernels."""

    def f(x):
        xp = np.concatenate(([0.0], x, [0.0]))
        return k[:-1] * xp[:-2] ** 2 - k[1:] * xp[1:-1] * xp[2:]

    x = np.array(x0, dtype=float)
    for _ in range(int(round(t_end / dt))):
        a = f(x)
        b = f(x + 0.5 * dt * a)
        c = f(x + 0.5 * dt * b)
        d = f(x + dt * c)
        x = x + dt / 6.0 * (a + 2 * b + 2 * c + d)
    return x


class TestConfig:
    def test_defaults_valid(self):
        c = IntegratorConfig()
        assert c.sign_tolerance == pytest.approx(1e-9)
        assert VOC.sign_tolerance == 0.0

    @pytest.mark.parametrize("kw", [
        {"abs_tol": 0.0}, {"rel_tol": -1.0}, {"dt_min": 1.0, "dt_init": 0.1},
        {"dt_init": 1.0}, {"scheme_choice": "euler"}, {"max_steps": 0},
        {"positivity_floor": -1.0}, {"stiffness_cap_factor": float("inf")},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            IntegratorConfig(**kw)

    def test_digest_stable_and_sensitive(self):
        assert IntegratorConfig().digest() == IntegratorConfig().digest()
        assert IntegratorConfig().digest() != IntegratorConfig(rel_tol=1e-9).digest()

    def test_with_tolerance(self):
        c = IntegratorConfig().with_tolerance(1e-6)
        assert (c.rel_tol, c.abs_tol) == (1e-6, 1e-8)


class TestSampleGrid:
    def test_endpoints(self):
        g = sample_grid(0.0, 1.0, 0.3)
        assert g[0] == 0.0 and g[-1] == 1.0 and np.all(np.diff(g) > 0)
        assert len(sample_grid(0.0, 1.0, 0.01)) == 101

    def test_degenerate(self):
        assert sample_grid(2.0, 2.0, 0.1).tolist() == [2.0]


class TestTrajectory:
    def test_rejects_unordered_times(self):
        with pytest.raises(ValueError):
            Trajectory([0.0, 0.0], np.zeros((2, 3)), SCHEME)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            Trajectory([0.0, 1.0], np.zeros((3, 3)), SCHEME)

    def test_indexing(self):
        tr = Trajectory([0.0, 1.0], [[1.0, 0.0], [0.5, 0.5]], SCHEME)
        assert len(tr) == 2 and tr.n_shells == 2
        assert tr[1] == ShellState(1.0, [0.5, 0.5])
        assert [s.t for s in tr] == [0.0, 1.0]


class TestStepAdaptive:
    def test_error_within_tolerance(self, rng):
        cfg = IntegratorConfig()
        for _ in range(20):
            s = ShellState(0.0, rng.normal(size=10) * 0.3)
            new, dt, err = step_adaptive(s, SCHEME, cfg)
            assert 0 < dt <= cfg.dt_init
            assert err <= cfg.abs_tol + cfg.rel_tol * np.max(np.abs(s.x)) * 1.0001 or err <= 1.0

    def test_zero_fixed_point(self):
        new, dt, err = step_adaptive(ShellState(0.0, np.zeros(4)), SCHEME, IntegratorConfig())
        assert not new.x.any() and dt == IntegratorConfig().dt_init and err == 0.0

    def test_initial_growth_rate(self):
        new, dt, _ = step_adaptive(ShellState(0.0, [1.0, 0.0]), SCHEME, IntegratorConfig(dt_init=1e-6))
        assert new.x[1] / dt == pytest.approx(2.0, rel=1e-5)
        assert new.x[0] == pytest.approx(1.0, abs=1e-11)

    def test_stability_cap(self):
        x = np.zeros(20)
        x[-2] = 1.0
        s = ShellState(0.0, x)
        k = SCHEME.for_shells(20)
        _, dt, _ = step_adaptive(s, SCHEME, IntegratorConfig(dt_init=0.005))
        assert dt <= 0.5 / gershgorin_rate(x, k) * (1 + 1e-12)

    def test_matches_oracle_single_step(self):
        s = ShellState(0.0, [1.0, 0.0, 0.0])
        new, dt, _ = step_adaptive(s, SCHEME, IntegratorConfig(dt_init=1e-4))
        ref = rk4_oracle(s.x, SCHEME.for_shells(3), dt, dt)
        assert np.allclose(new.x, ref, atol=1e-14)
        assert new.t == pytest.approx(dt)


class TestStepPositivity:
    @given(st.lists(st.floats(0, 2, allow_nan=False), min_size=1, max_size=20))
    def test_nonnegative(self, xs):
        new, dt = step_positivity(ShellState(0.0, xs), SCHEME, VOC)
        assert np.all(new.x >= 0.0) and dt > 0

    def test_cap_and_stiffness_error(self):
        x = np.zeros(30)
        x[-1] = 1e3
        x[-2] = 1.0
        with pytest.raises(StiffnessError):
            step_positivity(ShellState(0.0, x), SCHEME, IntegratorConfig(
                scheme_choice="positivity_voc", dt_min=1e-3, dt_init=1e-3))


class TestIntegrate:
    def test_rk4_oracle(self):
        x0 = np.array([1.0, 0, 0, 0, 0, 0])
        traj = integrate(ShellState(0.0, x0), SCHEME, IntegratorConfig(), 1.0, 0.25)
        ref = rk4_oracle(x0, SCHEME.for_shells(6), 1.0, 1e-5)
        assert np.max(np.abs(traj.x[-1] - ref)) <= 1e-6

    def test_samples_on_grid(self):
        traj = integrate(ShellState(0.0, [1.0, 0.5]), SCHEME, IntegratorConfig(), 1.0, 0.1)
        assert np.array_equal(traj.t, sample_grid(0.0, 1.0, 0.1))
        assert np.array_equal(traj.x[0], [1.0, 0.5])

    def test_zero_horizon(self):
        traj = integrate(ShellState(1.0, [1.0]), SCHEME, IntegratorConfig(), 1.0)
        assert len(traj) == 1

    def test_backwards_rejected(self):
        with pytest.raises(ValueError):
            integrate(ShellState(1.0, [1.0]), SCHEME, IntegratorConfig(), 0.5)

    def test_deterministic(self):
        args = (ShellState(0.0, np.linspace(1, 0.1, 12)), SCHEME, IntegratorConfig(), 1.5, 0.01)
        a, b = integrate(*args), integrate(*args)
        assert a.x.tobytes() == b.x.tobytes() and a.t.tobytes() == b.t.tobytes()

    def test_energy_conserved(self):
        traj = integrate(ShellState(0.0, [1.0] + [0.0] * 11), SCHEME, IntegratorConfig(), 3.0, 0.05)
        e = energy_series(traj)
        assert np.max(np.abs(e - 1.0)) <= 1e-8

    def test_observed_order(self):
        x0 = np.array([1.0, 0, 0, 0, 0, 0])
        ref = integrate(ShellState(0.0, x0), SCHEME, IntegratorConfig().with_tolerance(1e-14), 0.5, 0.5).x[-1]
        errs = [np.max(np.abs(integrate(ShellState(0.0, x0), SCHEME, IntegratorConfig(), 0.5, 0.5,
                                        fixed_step=h).x[-1] - ref)) for h in (0.02, 0.01)]
        # fifth-order propagation: halving the step divides the error by about 32
        assert math.log2(errs[0] / errs[1]) > 4.5

    def test_voc_close_to_rk(self):
        x0 = 0.5 ** np.arange(1, 7)
        ref = integrate(ShellState(0.0, x0), SCHEME, IntegratorConfig().with_tolerance(1e-12), 1.0, 0.1)
        voc = integrate(ShellState(0.0, x0), SCHEME,
                        IntegratorConfig(scheme_choice="positivity_voc", dt_max=1e-4, dt_init=1e-4), 1.0, 0.1)
        assert np.max(np.abs(voc.x - ref.x)) <= 1e-4

    def test_voc_first_order(self):
        x0 = 0.5 ** np.arange(1, 7)
        ref = integrate(ShellState(0.0, x0), SCHEME, IntegratorConfig().with_tolerance(1e-12), 1.0, 1.0)
        errs = []
        for h in (1e-3, 5e-4):
            cfg = IntegratorConfig(scheme_choice="positivity_voc", dt_max=h, dt_init=h)
            errs.append(np.max(np.abs(integrate(ShellState(0.0, x0), SCHEME, cfg, 1.0, 1.0).x[-1] - ref.x[-1])))
        assert 1.7 < errs[0] / errs[1] < 2.3

    def test_voc_exactly_nonnegative(self):
        x0 = np.zeros(20)
        x0[0] = 1.0
        traj = integrate(ShellState(0.0, x0), SCHEME, VOC, 2.0, 0.01)
        assert np.all(traj.x >= 0.0)

    def test_rk_undershoots_logged(self):
        x0 = np.zeros(16)
        x0[0] = 1.0
        traj = integrate(ShellState(0.0, x0), SCHEME, IntegratorConfig(), 2.0, 0.01)
        assert traj.x.min() >= -traj.sign_tolerance
        assert all(e.kind in ("undershoot", "floor") and e.value < 0 for e in traj.events)
        assert traj.events, "the cascade front produces tiny undershoots that must be logged"

    def test_budget_failure_keeps_partial(self):
        x0 = np.zeros(10)
        x0[0] = 1.0
        with pytest.raises(IntegrationError) as info:
            integrate(ShellState(0.0, x0), SCHEME, IntegratorConfig(max_steps=50), 5.0, 0.01)
        partial = info.value.trajectory
        assert partial.status == "budget" and 0 < len(partial) < 501
        assert info.value.t_fail < 5.0

    def test_stiffness_failure(self):
        x0 = np.zeros(40)
        x0[0] = 1.0
        with pytest.raises(StiffnessError) as info:
            integrate(ShellState(0.0, x0), SCHEME, IntegratorConfig(dt_min=1e-5, dt_init=1e-4), 2.0, 0.01)
        assert info.value.trajectory.status == "stiff"
        assert info.value.trajectory.events[-1].kind == "dt_min_failure"
        assert info.value.t_fail < 1.0

    def test_stats(self):
        traj = integrate(ShellState(0.0, [1.0, 0.0, 0.0]), SCHEME, IntegratorConfig(), 1.0, 0.1)
        st_ = traj.step_stats
        assert st_.accepted > 0 and 0 < st_.dt_min_used <= st_.dt_max_used <= 0.005

    def test_rhs_consistency_of_initial_slope(self):
        x0 = np.array([0.6, 0.3, 0.1])
        traj = integrate(ShellState(0.0, x0), SCHEME, IntegratorConfig().with_tolerance(1e-12), 1e-4, 1e-4)
        slope = (traj.x[1] - traj.x[0]) / 1e-4
        assert np.allclose(slope, rhs(x0, SCHEME), atol=1e-3)
        assert energy(traj[1]) == pytest.approx(energy(traj[0]), rel=1e-12)
