import warnings

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from subsde import (
    SdeModel,
    bracket_hierarchy,
    check_Hn,
    kalman_rank,
    kinetic_linear,
    linear,
    pendulum,
    uniform_h1_constant,
    uniform_hn_constant,
    zero_drift,
)
from subsde.hormander import numerical_rank, rank_report_csv


def _pendulum_without_hessian():
    p = pendulum()
    return SdeModel(2, p.drift, p.jacobian, p.A, name="pendulum-fd")


def _sine_1d():
    return SdeModel(1, lambda x: np.sin(x), lambda x: np.cos(x)[..., None], np.eye(1))


# high-precision reference: B_n = d/dtau B_{n-1}(x + tau b(x)) - grad b(x) B_{n-1}(x)
def _mp_drift(x):
    return mp.matrix([x[1], mp.sin(x[0])])


def _mp_jac(x):
    return mp.matrix([[0, 1], [mp.cos(x[0]), 0]])


def _mp_bracket(n, x):
    if n == 1:
        return _mp_jac(x)
    b = _mp_drift(x)
    out = mp.matrix(2, 2)
    for r in range(2):
        for c in range(2):
            out[r, c] = mp.diff(lambda tau: _mp_bracket(n - 1, [x[0] + tau * b[0], x[1] + tau * b[1]])[r, c], 0)
    return out - _mp_jac(x) * _mp_bracket(n - 1, x)


def _mp_reference(n, x):
    with mp.workdps(40):
        M = _mp_bracket(n, [mp.mpf(float(x[0])), mp.mpf(float(x[1]))])
        return np.array([[float(M[r, c]) for c in range(2)] for r in range(2)])


class TestBrackets:
    def test_first_is_jacobian(self):
        x = np.array([0.7, -0.3])
        H = bracket_hierarchy(pendulum(), x, 1)
        np.testing.assert_array_equal(H.matrices[0], pendulum().jacobian(x))
        np.testing.assert_array_equal(H.stacked[:, :2], pendulum().A)

    @pytest.mark.parametrize("x", [[0.7, -0.3], [2.0, 1.5], [-1.0, 0.0]])
    def test_pendulum_against_high_precision(self, x):
        x = np.asarray(x)
        ref2, ref3 = _mp_reference(2, x), _mp_reference(3, x)
        analytic = bracket_hierarchy(pendulum(), x, 3)
        fd = bracket_hierarchy(_pendulum_without_hessian(), x, 3)
        np.testing.assert_allclose(analytic.matrices[1], ref2, atol=1e-12)
        np.testing.assert_allclose(fd.matrices[1], ref2, atol=1e-6)
        np.testing.assert_allclose(analytic.matrices[2], ref3, atol=1e-6)
        np.testing.assert_allclose(fd.matrices[2], ref3, atol=1e-5)
        assert not fd.any_unstable

    @pytest.mark.parametrize("x", [0.3, 1.1, -2.0])
    def test_sine_alternates(self, x):
        # b = sin: B_1 = cos, B_2 = -1, B_3 = cos, B_4 = -1
        H = bracket_hierarchy(_sine_1d(), np.array([x]), 4)
        vals = [float(B[0, 0]) for B in H.matrices]
        np.testing.assert_allclose(vals, [np.cos(x), -1.0, np.cos(x), -1.0], atol=1e-5)

    def test_linear_powers(self):
        rng = np.random.default_rng(0)
        B = rng.standard_normal((3, 3))
        H = bracket_hierarchy(linear(B, np.eye(3)), rng.standard_normal(3), 4)
        for k, M in enumerate(H.matrices, start=1):
            expected = (-1) ** (k - 1) * np.linalg.matrix_power(B, k)
            np.testing.assert_allclose(M, expected, atol=1e-9 * np.abs(expected).max())

    def test_rank_bounded_by_dimension(self):
        H = bracket_hierarchy(pendulum(), np.array([0.2, 0.1]), 3)
        assert H.stacked.shape == (2, 8)
        assert H.singular_values.size <= 2

    def test_high_order_warns(self):
        with pytest.warns(RuntimeWarning):
            bracket_hierarchy(_sine_1d(), np.array([0.3]), 5)

    def test_invalid_order(self):
        with pytest.raises(ValueError):
            bracket_hierarchy(pendulum(), np.zeros(2), 0)


def _random_system(rng, d):
    """Random (B, A), a third of them with an uncontrolled invariant block."""
    B = rng.standard_normal((d, d))
    A = np.zeros((d, d))
    A[:, : rng.integers(1, d + 1)] = rng.standard_normal((d, 1))
    if d > 1 and rng.random() < 1 / 3:
        k = int(rng.integers(1, d))
        B[k:, :k] = 0.0  # span(e_1..e_k) is invariant
        A[k:, :] = 0.0
        Q = ortho_group.rvs(d, random_state=rng)
        B, A = Q @ B @ Q.T, Q @ A
    return B, A


class TestKalman:
    def test_hn_agrees_with_kalman(self):
        rng = np.random.default_rng(11)
        agree, deficient = 0, 0
        for _ in range(200):
            d = int(rng.integers(1, 6))
            B, A = _random_system(rng, d)
            kr = kalman_rank(B, A)
            deficient += kr < d
            hn = check_Hn(linear(B, A), rng.standard_normal(d), d - 1)
            agree += hn.passed == (kr == d)
        assert agree == 200
        assert deficient >= 30

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_point_independent_and_orthogonal_invariant(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 5))
        B, A = _random_system(rng, d)
        r0 = check_Hn(linear(B, A), np.zeros(d), d - 1).rank
        assert check_Hn(linear(B, A), 10 * rng.standard_normal(d), d - 1).rank == r0
        Q = ortho_group.rvs(d, random_state=rng)
        assert check_Hn(linear(Q @ B @ Q.T, Q @ A), np.zeros(d), d - 1).rank == r0
        assert kalman_rank(B, A) == r0

    def test_kinetic(self):
        m = kinetic_linear()
        assert kalman_rank(m.drift(np.eye(2)).T, m.A) == 2
        assert not check_Hn(m, np.zeros(2), 0).passed
        assert check_Hn(m, np.zeros(2), 1).passed

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            kalman_rank(np.eye(2), np.eye(3))

    def test_tol_positive(self):
        with pytest.raises(ValueError):
            check_Hn(pendulum(), np.zeros(2), 1, tol=0.0)
        with pytest.raises(ValueError):
            numerical_rank(np.eye(2), tol=-1.0)

    def test_zero_matrix(self):
        res = numerical_rank(np.zeros((2, 2)))
        assert res == (False, 0, 0.0)


class TestUniformConstants:
    def test_pendulum(self):
        pts = np.random.default_rng(0).uniform(-5, 5, (200, 2))
        assert uniform_h1_constant(pendulum(), pts) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate(self):
        pts = np.zeros((3, 2))
        assert uniform_h1_constant(zero_drift(2, np.diag([0.0, 1.0])), pts) == 0.0

    def test_brute_force_minimum(self):
        # direct minimisation over unit covectors a of |aA|^2 + |a grad b A|^2
        model = linear([[0.3, 1.0], [-0.5, -0.2]], [[0.0, 0.0], [0.4, 1.0]])
        th = np.linspace(0, np.pi, 20001)
        a = np.stack([np.cos(th), np.sin(th)], -1)
        GA = model.jacobian(np.zeros(2)) @ model.A
        brute = np.min(np.sum((a @ model.A) ** 2, -1) + np.sum((a @ GA) ** 2, -1))
        assert uniform_h1_constant(model, np.zeros((1, 2))) == pytest.approx(brute, rel=1e-6)

    def test_hn_diagnostic_dominates(self):
        pts = np.random.default_rng(1).uniform(-2, 2, (10, 2))
        c1 = uniform_h1_constant(pendulum(), pts)
        assert uniform_hn_constant(pendulum(), pts, 2) >= c1 - 1e-9

    def test_empty_points(self):
        with pytest.raises(ValueError):
            uniform_h1_constant(pendulum(), np.zeros((0, 2)))


def test_rank_report_csv():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        text = rank_report_csv(pendulum(), [[0.0, 0.0], [1.0, 2.0]], 1)
    lines = text.splitlines()
    assert lines[0] == "x_0,x_1,rank,smallest_sv,pass"
    assert len(lines) == 3
    for line in lines[1:]:
        fields = line.split(",")
        assert fields[2] == "2" and fields[4] == "1"
