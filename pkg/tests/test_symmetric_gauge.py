import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nlcapacity.symmetric_gauge import (
    LorentzP1,
    Lp,
    MagnitudeProfile,
    Weights,
    evaluate_norm,
    evaluate_norm_rows,
    evaluate_singular_norm,
    make_lorentz_weights,
    parse_phi,
    subgradient_singular,
    subgradient_vector,
)

ALL_PHIS = [Lp(1), Lp(1.5), Lp(2), Lp(3), LorentzP1(1), LorentzP1(1.5), LorentzP1(2), LorentzP1(4),
            Weights([1.0, 0.5, 0.25])]

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 12), elements=finite)


def direct_norm(phi, x):
    """Reference evaluation straight from the definitions."""
    a = sorted((abs(v) for v in x), reverse=True)
    if phi.kind == "lp":
        return sum(v ** phi.p for v in a) ** (1 / phi.p)
    if phi.kind == "lorentz":
        return sum(v * (k + 1) ** (-1 + 1 / phi.p) for k, v in enumerate(a))
    w = list(phi.weights)
    return sum(v * w[min(k, len(w) - 1)] for k, v in enumerate(a))


class TestEvaluate:
    def test_lorentz_one_is_l1(self):
        assert evaluate_norm(LorentzP1(1), [3, 1, 2]) == 6

    def test_unit_vector(self):
        assert evaluate_norm(Lp(2), [1, 0, 0]) == 1

    def test_lorentz_two_on_ones(self):
        expected = sum(k ** -0.5 for k in range(1, 5))
        assert evaluate_norm(LorentzP1(2), [1, 1, 1, 1]) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(2.78446, abs=1e-5)

    def test_empty_is_zero(self):
        for phi in ALL_PHIS:
            assert evaluate_norm(phi, []) == 0.0

    def test_weights_extend_with_last_value(self):
        phi = Weights([1, 0.5])
        assert evaluate_norm(phi, [4, 3, 2, 1]) == 4 + 0.5 * (3 + 2 + 1)

    def test_complex_argument_uses_moduli(self):
        assert evaluate_norm(Lp(2), [3j, 4]) == pytest.approx(5.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            evaluate_norm(Lp(2), [1.0, np.inf])

    @pytest.mark.parametrize("phi", ALL_PHIS, ids=str)
    def test_matches_direct_definition(self, phi, rng):
        for _ in range(20):
            x = rng.normal(size=rng.integers(1, 9))
            assert evaluate_norm(phi, x) == pytest.approx(direct_norm(phi, x), rel=1e-12)

    @pytest.mark.parametrize("phi", ALL_PHIS, ids=str)
    def test_rows_agree_with_scalar(self, phi, rng):
        a = rng.normal(size=(5, 7))
        rows = evaluate_norm_rows(phi, a)
        assert np.allclose(rows, [evaluate_norm(phi, r) for r in a], rtol=1e-13)

    def test_large_p_does_not_overflow(self):
        assert evaluate_norm(Lp(50), [1e200, 1e200]) == pytest.approx(1e200 * 2 ** (1 / 50))


class TestSingularNorm:
    def test_lorentz_diag(self):
        val = evaluate_singular_norm(LorentzP1(2), np.diag([2.0, 1.0]))
        assert val == pytest.approx(2 + 2 ** -0.5, rel=1e-14)
        assert val == pytest.approx(2.70711, abs=1e-5)

    def test_zero_matrix(self):
        assert evaluate_singular_norm(Lp(1), np.zeros((3, 3))) == 0

    def test_swap(self):
        assert evaluate_singular_norm(Lp(2), [[0, 1], [1, 0]]) == pytest.approx(math.sqrt(2))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            evaluate_singular_norm(Lp(2), [[np.nan, 0], [0, 1]])

    def test_schatten_two_is_frobenius(self, rng):
        m = rng.normal(size=(4, 6))
        assert evaluate_singular_norm(Lp(2), m) == pytest.approx(np.linalg.norm(m))

    @pytest.mark.parametrize("phi", ALL_PHIS, ids=str)
    def test_unitary_invariance(self, phi, rng):
        m = rng.normal(size=(5, 5))
        q1, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        q2, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        assert evaluate_singular_norm(phi, q1 @ m @ q2) == pytest.approx(evaluate_singular_norm(phi, m))

    @pytest.mark.parametrize("phi", ALL_PHIS, ids=str)
    def test_pinching(self, phi, rng):
        for _ in range(30):
            d = int(rng.integers(1, 9))
            m = rng.normal(size=(d, d))
            assert evaluate_singular_norm(phi, np.diag(np.diag(m))) <= evaluate_singular_norm(phi, m) + 1e-12


class TestSubgradient:
    def test_l2_gradient(self):
        assert np.allclose(subgradient_vector(Lp(2), [3, 4]), [0.6, 0.8])

    def test_l1_signs(self):
        assert np.array_equal(subgradient_vector(LorentzP1(1), [-2, 5]), [-1, 1])

    def test_lorentz_ranks(self, rng):
        phi = LorentzP1(2)
        x = np.array([5.0, 2.0])
        g = subgradient_vector(phi, x)
        assert np.allclose(g, [1, 2 ** -0.5])
        for _ in range(100):
            y = rng.normal(scale=5, size=2)
            assert evaluate_norm(phi, y) >= evaluate_norm(phi, x) + g @ (y - x) - 1e-12

    def test_ties_ranked_by_index(self):
        g = subgradient_vector(LorentzP1(2), [1.0, -1.0, 1.0])
        assert np.allclose(g, [1, -(2 ** -0.5), 3 ** -0.5])

    def test_lp_at_zero(self):
        assert np.array_equal(subgradient_vector(Lp(3), [0.0, 0.0]), [0.0, 0.0])

    @pytest.mark.parametrize("phi", ALL_PHIS, ids=str)
    def test_inequality_and_euler(self, phi, rng):
        for _ in range(50):
            n = int(rng.integers(1, 8))
            x = rng.normal(size=n) * (rng.random(n) > 0.2)
            g = subgradient_vector(phi, x)
            fx = evaluate_norm(phi, x)
            assert g @ x == pytest.approx(fx, abs=1e-12)
            for _ in range(5):
                y = rng.normal(size=n) * 3
                assert evaluate_norm(phi, y) >= fx + g @ (y - x) - 1e-10

    def test_singular_trace_norm(self):
        assert np.allclose(subgradient_singular(Lp(1), np.diag([2.0, 3.0])), np.eye(2))

    def test_singular_frobenius(self, rng):
        m = rng.normal(size=(3, 4))
        assert np.allclose(subgradient_singular(Lp(2), m), m / np.linalg.norm(m))

    def test_singular_lorentz_diag(self):
        g = subgradient_singular(LorentzP1(2), np.diag([5.0, 2.0]))
        assert np.allclose(g, np.diag([1, 2 ** -0.5]))

    @pytest.mark.parametrize("phi", ALL_PHIS, ids=str)
    def test_singular_inequality(self, phi, rng):
        for _ in range(20):
            m = rng.normal(size=(4, 4))
            if rng.random() < 0.3:
                m[:, 0] = 0  # rank deficient
            g = subgradient_singular(phi, m)
            fm = evaluate_singular_norm(phi, m)
            assert np.sum(g * m) == pytest.approx(fm, rel=1e-10)
            for _ in range(5):
                y = rng.normal(size=(4, 4)) * 2
                assert evaluate_singular_norm(phi, y) >= fm + np.sum(g * (y - m)) - 1e-9

    def test_singular_complex(self, rng):
        m = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        g = subgradient_singular(Lp(1), m)
        assert np.real(np.vdot(g, m)) == pytest.approx(evaluate_singular_norm(Lp(1), m))


class TestWeights:
    def test_p_one(self):
        assert np.array_equal(make_lorentz_weights(1, 3), [1, 1, 1])

    def test_p_two(self):
        assert np.allclose(make_lorentz_weights(2, 3), [1, 0.70711, 0.57735], atol=1e-5)

    def test_quasi_norm_rejected(self):
        with pytest.raises(ValueError):
            make_lorentz_weights(0.5, 2)

    @pytest.mark.parametrize("bad", [[0.5, 0.25], [1, 2], [1, -0.1], []])
    def test_invalid_weight_sequences(self, bad):
        with pytest.raises(ValueError):
            Weights(bad)

    def test_profile_validation(self):
        assert list(MagnitudeProfile.of_vector([1, -3, 2]).values) == [3, 2, 1]
        assert np.allclose(MagnitudeProfile.of_matrix(np.diag([1.0, 4.0])).values, [4, 1])
        with pytest.raises(ValueError):
            MagnitudeProfile(np.array([1.0, 2.0]))


class TestParse:
    @pytest.mark.parametrize("text", ["l1", "l2", "lp:3", "lorentz:2", "lorentz:1.5", "weights:1,0.5,0.25"])
    def test_round_trip(self, text):
        assert str(parse_phi(text)) == text

    @pytest.mark.parametrize("text", ["lorentz:0.5", "lp:0.9", "lp:", "foo:2", "weights:1,x", "l3", "lp:nan"])
    def test_rejected(self, text):
        with pytest.raises(ValueError):
            parse_phi(text)


@settings(max_examples=150, deadline=None)
@given(x=vectors, y=vectors, c=finite, k=st.integers(0, len(ALL_PHIS) - 1))
def test_norm_axioms(x, y, c, k):
    phi = ALL_PHIS[k]
    n = min(x.size, y.size)
    x, y = x[:n], y[:n]
    fx, fy = evaluate_norm(phi, x), evaluate_norm(phi, y)
    assert evaluate_norm(phi, x + y) <= fx + fy + 1e-9 * (1 + fx + fy)
    assert evaluate_norm(phi, c * x) == pytest.approx(abs(c) * fx, rel=1e-9, abs=1e-9)
    assert (fx == 0) == (not np.any(x))


@settings(max_examples=150, deadline=None)
@given(x=vectors, k=st.integers(0, len(ALL_PHIS) - 1), seed=st.integers(0, 2 ** 32 - 1))
def test_rearrangement_invariance(x, k, seed):
    phi = ALL_PHIS[k]
    perm = np.random.default_rng(seed).permutation(x.size)
    fx = evaluate_norm(phi, x)
    assert evaluate_norm(phi, x[perm]) == pytest.approx(fx, rel=1e-12, abs=1e-12)
    assert evaluate_norm(phi, np.abs(x)) == pytest.approx(fx, rel=1e-12, abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(x=vectors, k=st.integers(0, len(ALL_PHIS) - 1), seed=st.integers(0, 2 ** 32 - 1))
def test_monotone_in_magnitudes(x, k, seed):
    phi = ALL_PHIS[k]
    grow = 1 + np.random.default_rng(seed).random(x.size)
    assert evaluate_norm(phi, x) <= evaluate_norm(phi, x * grow) + 1e-9


@settings(max_examples=150, deadline=None)
@given(x=vectors, p=st.floats(1, 6))
def test_lp_dominated_by_lorentz(x, p):
    assert evaluate_norm(Lp(p), x) <= evaluate_norm(LorentzP1(p), x) * (1 + 1e-12) + 1e-12


@pytest.mark.parametrize("phi", [Lp(2), Lp(3), Lp(1.5)])
@pytest.mark.parametrize("scale", [1e-200, 1e200])
def test_extreme_magnitudes(phi, scale):
    x = np.array([3.0, 4.0]) * scale
    expected = scale * (3.0 ** phi.p + 4.0 ** phi.p) ** (1 / phi.p)
    assert evaluate_norm(phi, x) == pytest.approx(expected, rel=1e-12)
    assert evaluate_norm_rows(phi, x[None, :])[0] == pytest.approx(expected, rel=1e-12)
