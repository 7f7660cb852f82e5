from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dyadic import CoefficientScheme, ConfigurationError, ShellState
from dyadic.model import (
    class_k_a,
    energy,
    flux_identity_residual,
    flux_identity_residuals,
    h1_norm_sq,
    norm_report,
    partial_energies,
    partial_energy,
    rhs,
)

SCHEME = CoefficientScheme()
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vectors = st.integers(1, 24).flatmap(lambda n: arrays(np.float64, n, elements=finite))


def rhs_oracle(x, k):
    """Direct transcription of the shell equation with X_0 = X_{N+1} = 0."""
    n = len(x)
    xs = [0.0] + list(x) + [0.0]
    return [k[j - 1] * xs[j - 1] * xs[j - 1] - k[j] * xs[j] * xs[j + 1] for j in range(1, n + 1)]


class TestCoefficientScheme:
    def test_defaults(self):
        s = CoefficientScheme()
        assert s.k(0) == 0.0
        assert [s.k(n) for n in range(1, 5)] == [2.0, 4.0, 8.0, 16.0]

    def test_values_read_only(self):
        with pytest.raises(ValueError):
            CoefficientScheme().values[1] = 5.0

    def test_rejects_superdyadic_growth(self):
        with pytest.raises(ConfigurationError, match="k_1"):
            CoefficientScheme(base=3.0, scale=1.0, bound=1.0)

    def test_superdyadic_needs_bound(self):
        # 3^n <= C 2^n fails for large n whatever C is, with n_max large enough
        with pytest.raises(ConfigurationError):
            CoefficientScheme(base=3.0, bound=100.0, n_max=20)
        assert CoefficientScheme(base=3.0, bound=100.0, n_max=5).k(5) == 243.0

    def test_subdyadic_ok(self):
        s = CoefficientScheme(base=1.5, scale=2.0, bound=2.0, n_max=30)
        assert np.all(np.diff(s.values[1:]) >= 0)

    @pytest.mark.parametrize("kw", [{"base": 0.0}, {"scale": -1.0}, {"bound": float("nan")},
                                    {"n_max": 0}, {"n_max": 2.5}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            CoefficientScheme(**kw)

    def test_for_shells_limit(self):
        with pytest.raises(ConfigurationError):
            CoefficientScheme(n_max=4).for_shells(5)

    def test_overflow_rejected(self):
        with pytest.raises(ConfigurationError, match="overflow"):
            CoefficientScheme(base=2.0, n_max=2000)


class TestShellState:
    def test_boundaries(self):
        s = ShellState(0.0, [1.0, 2.0, 3.0])
        assert s.shell(0) == 0.0 and s.shell(4) == 0.0 and s.shell(2) == 2.0
        with pytest.raises(IndexError):
            s.shell(5)

    def test_immutable_copy(self):
        x = np.array([1.0, 2.0])
        s = ShellState(0.0, x)
        x[0] = 9.0
        assert s.x[0] == 1.0
        with pytest.raises(ValueError):
            s.x[0] = 3.0

    @pytest.mark.parametrize("x", [[], [np.nan], [1.0, np.inf], [[1.0, 2.0], [3.0, 4.0]]])
    def test_invalid_vectors(self, x):
        with pytest.raises(ValueError):
            ShellState(0.0, x)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            ShellState(-1.0, [1.0])

    def test_equality_hash(self):
        a, b = ShellState(0.5, [1.0, 2.0]), ShellState(0.5, [1.0, 2.0])
        assert a == b and hash(a) == hash(b)


class TestRhs:
    def test_zero_fixed_point(self):
        assert np.array_equal(rhs(np.zeros(5), SCHEME), np.zeros(5))

    def test_unit_shell_example(self):
        assert rhs([1.0, 0.0, 0.0], SCHEME).tolist() == [0.0, 2.0, 0.0]

    def test_last_component(self):
        x = np.array([0.3, -0.7, 0.2])
        assert rhs(x, SCHEME)[-1] == SCHEME.k(2) * x[1] ** 2

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            rhs(np.ones(5), CoefficientScheme(n_max=3))

    @given(vectors)
    def test_matches_oracle_exactly(self, x):
        k = SCHEME.values
        assert rhs(x, SCHEME).tolist() == rhs_oracle(x, k)

    @given(vectors, st.floats(-4, 4, allow_nan=False))
    def test_quadratic_homogeneity(self, x, c):
        # rhs(c x) = c^2 rhs(x) up to rounding
        lhs = rhs(c * x, SCHEME)
        ref = c * c * rhs(x, SCHEME)
        scale = c * c * (np.abs(SCHEME.values[1:x.size + 1]) * (x * x + np.abs(x * np.append(x[1:], 0)))).sum()
        assert np.all(np.abs(lhs - ref) <= 1e-12 * (1 + scale))

    @given(vectors)
    def test_energy_conserving_vector_field(self, x):
        f = rhs(x, SCHEME)
        bound = 1e-12 * (1 + np.sum(np.abs(2 * x * f)))
        assert abs(np.sum(2 * x * f)) <= bound


class TestNorms:
    def test_energy_fraction_oracle(self, rng):
        for _ in range(50):
            x = rng.normal(size=rng.integers(1, 30)) * 10.0 ** rng.integers(-8, 8)
            exact = sum(Fraction(v) ** 2 for v in x)
            # compensated sum is within a couple of ulps of the exact value
            assert abs(Fraction(energy(x)) - exact) <= Fraction(2 * np.spacing(float(exact)))

    def test_compensation_beats_naive(self):
        x = np.array([1.0, 1e-8, 1e-8, 1e-8, 1e-8] + [1e-9] * 1000)
        exact = sum(Fraction(v) ** 2 for v in x)
        assert Fraction(energy(x)) == Fraction(float(exact))

    def test_partial_energy(self):
        x = [1.0, 2.0, 3.0]
        assert partial_energy(x, 1) == 1.0 and partial_energy(x, 3) == energy(x) == 14.0
        with pytest.raises(IndexError):
            partial_energy(x, 0)
        with pytest.raises(IndexError):
            partial_energy(x, 4)

    def test_h1_example(self):
        assert h1_norm_sq([1.0, 1.0], SCHEME) == 4.0 + 16.0

    def test_class_k_examples(self):
        assert class_k_a([1.0, 2.0, 3.0], SCHEME) == 0.0
        assert class_k_a([1.0, -2.0, 3.0], SCHEME) == 4.0
        assert class_k_a([-5.0], SCHEME) == 0.0

    @given(vectors)
    def test_report_invariants(self, x):
        r = norm_report(x, SCHEME)
        assert r.energy == r.partial_energies[-1]
        assert np.all(np.diff(r.partial_energies) >= 0)
        assert r.a_value >= 0
        kn = SCHEME.k(len(x))
        assert r.h1_sq <= kn * kn * r.energy * (1 + 1e-12)

    def test_partial_energies_from_state(self):
        s = ShellState(1.0, [3.0, 4.0])
        assert partial_energies(s).tolist() == [9.0, 25.0]


class TestFluxIdentity:
    def test_exact_in_rationals(self, rng):
        k = SCHEME.values
        for _ in range(20):
            x = [Fraction(v) for v in rng.normal(size=8)]
            xs = [Fraction(0)] + x + [Fraction(0)]
            f = [int(k[j - 1]) * xs[j - 1] ** 2 - int(k[j]) * xs[j] * xs[j + 1] for j in range(1, 9)]
            for n in range(1, 9):
                lhs = sum(2 * xs[j] * f[j - 1] for j in range(1, n + 1))
                assert lhs == -2 * int(k[n]) * xs[n] ** 2 * xs[n + 1]

    def test_residual_small(self, rng):
        for _ in range(100):
            x = rng.normal(size=16)
            res, scale = flux_identity_residuals(x, SCHEME)
            assert np.all(np.abs(res) <= 1e-10 * (1 + scale))
            assert flux_identity_residual(x, SCHEME, 16) == pytest.approx(res[-1], abs=1e-9 * (1 + scale[-1]))

    def test_residual_index_check(self):
        with pytest.raises(IndexError):
            flux_identity_residual([1.0, 2.0], SCHEME, 3)
