from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ddyk.stable_ops import (LyapunovNet, Mlp, ParameterizationError, QuadraticLyapunov,
                             StableLinearOperator, StableMatrixParams, StableNonlinearOperator,
                             from_matrix, lmi_max_eig, lyapunov_certificate, lyapunov_eval,
                             q_lti_step, q_nonlinear_step, stable_matrix, stable_step)


def _rho(A):
    return float(np.max(np.abs(np.linalg.eigvals(A))))


# -- stable matrices ---------------------------------------------------------------

def test_zero_raw_matrix_gives_zero():
    A = stable_matrix(StableMatrixParams(np.zeros((3, 3)), np.random.default_rng(0)
                                         .standard_normal((3, 3))))
    assert np.all(A == 0) and _rho(A) == 0.0


def test_scaled_identity():
    # T = I needs softplus(d) + floor = 1 on the diagonal
    from ddyk.stable_ops import T_DIAG_FLOOR, softplus_inv
    d = softplus_inv(1.0 - T_DIAG_FLOOR)
    p = StableMatrixParams(0.7 * np.eye(3), d * np.eye(3))
    np.testing.assert_allclose(p.T(), np.eye(3), atol=1e-15)
    A = stable_matrix(p)
    np.testing.assert_allclose(A, np.tanh(0.7) * (1 - 1e-6) * np.eye(3), atol=1e-12)


@pytest.mark.parametrize("n", range(2, 9))
def test_random_draws_stable_with_lmi(n):
    rng = np.random.default_rng(n)
    for _ in range(200):
        p = StableMatrixParams.random(n, rng, scale=float(rng.choice([0.1, 1.0, 10.0])))
        A = stable_matrix(p)
        assert _rho(A) < 1.0
        assert lmi_max_eig(A, p) < 0.0


def test_lyapunov_certificate_direct_form():
    p = StableMatrixParams.random(3, np.random.default_rng(1))
    A, P = lyapunov_certificate(p)
    assert np.max(np.linalg.eigvalsh(A @ P @ A.T - P)) < 0


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 9 + 6, elements=st.floats(-50, 50)))
def test_any_finite_parameters_stable_or_singular(v):
    # extreme values either give a certified stable matrix or a T singular to
    # working precision, never a silently unstable one
    p = StableMatrixParams.from_vector(v, 3)
    np.testing.assert_array_equal(p.to_vector(), v)
    try:
        A = stable_matrix(p)
    except ParameterizationError:
        assert np.linalg.cond(p.T()) >= 1e14
        return
    assert _rho(A) < 1.0
    assert lmi_max_eig(A, p) < 0.0


@pytest.mark.parametrize("seed", range(5))
def test_ill_conditioned_scaling_still_stable(seed):
    rng = np.random.default_rng(seed)
    p = StableMatrixParams(20 * rng.standard_normal((5, 5)), -3 * np.tril(np.ones((5, 5))))
    assert 1e5 < np.linalg.cond(p.T()) < 1e14
    A = stable_matrix(p)
    assert _rho(A) < 1.0 and lmi_max_eig(A, p) < 0.0


def test_nonfinite_parameters_rejected():
    with pytest.raises(ParameterizationError):
        StableMatrixParams(np.full((2, 2), np.nan), np.zeros((2, 2)))
    with pytest.raises(ParameterizationError):
        StableMatrixParams.from_vector(np.zeros(4), 2)


@pytest.mark.parametrize("seed", range(10))
def test_from_matrix_roundtrip(seed):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 5
    A = rng.standard_normal((n, n))
    A *= 0.97 / _rho(A)
    np.testing.assert_allclose(stable_matrix(from_matrix(A)), A, atol=1e-8)


def test_from_matrix_rejects_unstable():
    with pytest.raises(ParameterizationError):
        from_matrix(np.diag([0.5, 1.01]))


# -- LTI operator ----------------------------------------------------------------------

def test_q_lti_step_zero():
    op = StableLinearOperator.random(3, np.random.default_rng(0))
    assert q_lti_step(op, 0.0) == 0.0 and not np.any(op.z)


def test_q_lti_step_readout_only():
    op = StableLinearOperator.random(2, np.random.default_rng(0))
    op.C_q, op.D_q, op.z = np.array([1.0, 0.0]), 0.0, np.array([3.0, -1.0])
    assert q_lti_step(op, 5.0) == 3.0


def test_impulse_response_matches_matrix_powers():
    op = StableLinearOperator.random(4, np.random.default_rng(3))
    h = op.impulse_response(51)
    assert h[0] == pytest.approx(op.D_q)
    Ak = np.eye(4)
    for t in range(1, 51):
        assert h[t] == pytest.approx(op.C_q @ Ak @ op.B_q, abs=1e-10)
        Ak = Ak @ op.A_q


def test_linear_operator_vector_roundtrip():
    op = StableLinearOperator.random(3, np.random.default_rng(4))
    back = op.from_vector(op.to_vector())
    np.testing.assert_array_equal(back.A_q, op.A_q)
    assert back.D_q == op.D_q


# -- Lyapunov network --------------------------------------------------------------------

def test_lyapunov_zero_and_lower_bound():
    rng = np.random.default_rng(0)
    V = LyapunovNet(3, rng=rng)
    assert lyapunov_eval(V, np.zeros(3)) == 0.0
    z = rng.standard_normal((1000, 3)) * 10 ** rng.uniform(-3, 2, (1000, 1))
    assert np.all(lyapunov_eval(V, z) >= V.eps_quad * np.sum(z * z, axis=1))


def test_lyapunov_convexity_spot_check():
    rng = np.random.default_rng(1)
    V = LyapunovNet(4, rng=rng)
    a = 3 * rng.standard_normal((10_000, 4))
    b = 3 * rng.standard_normal((10_000, 4))
    lhs = V(0.5 * (a + b))
    rhs = 0.5 * V(a) + 0.5 * V(b)
    assert np.all(lhs <= rhs + 1e-12 * (1 + np.abs(rhs)))


def test_lyapunov_vector_roundtrip():
    V = LyapunovNet(2, rng=np.random.default_rng(2))
    z = np.array([0.3, -1.2])
    assert V.from_vector(V.to_vector())(z) == V(z)


def test_mlp_centered():
    f = Mlp(3, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(f(np.zeros(3)), np.zeros(3))


# -- stable step -----------------------------------------------------------------------

def _quad_op(f, beta):
    return SimpleNamespace(f_hat=f, V=QuadraticLyapunov(np.eye(2)), beta=beta)


def test_stable_step_decrease_case_untouched():
    op = _quad_op(lambda z: 0.5 * z, 0.5)
    z = np.array([1.0, -2.0])
    np.testing.assert_array_equal(stable_step(op, z), 0.5 * z)


def test_stable_step_scaled_case():
    op = _quad_op(lambda z: 2.0 * z, 0.25)
    z2 = stable_step(op, np.array([2.0, 0.0]))
    np.testing.assert_allclose(z2, [0.25, 0.0], rtol=1e-15)
    assert op.V(z2) == pytest.approx(0.0625)
    assert op.V(z2) <= 0.25 * op.V(np.array([2.0, 0.0]))


def test_stable_step_origin_is_fixed():
    op = StableNonlinearOperator.random(3, np.random.default_rng(0))
    np.testing.assert_array_equal(stable_step(op, np.zeros(3)), np.zeros(3))


def test_stable_step_guard_nonzero_state():
    # V(f(z)) = 0 while V(z) > 0: the decrease holds already, return f(z)
    op = _quad_op(lambda z: np.zeros(2), 0.9)
    np.testing.assert_array_equal(stable_step(op, np.array([1.0, 1.0])), np.zeros(2))


def test_stable_step_decrease_property():
    rng = np.random.default_rng(7)
    worst = -np.inf
    for _ in range(2000):
        n = int(rng.integers(1, 5))
        op = StableNonlinearOperator(Mlp(n, 8, rng=rng, gain=float(rng.uniform(0.1, 5))),
                                     LyapunovNet(n, 8, rng=rng), np.zeros(n), np.zeros(n),
                                     0.0, float(rng.uniform(0.01, 0.999)))
        z = rng.standard_normal(n) * 10 ** rng.uniform(-3, 2)
        z2 = stable_step(op, z)
        worst = max(worst, float(op.V(z2) - op.beta * op.V(z)))
    assert worst <= 1e-12


def test_nonlinear_reduces_to_linear():
    rng = np.random.default_rng(3)
    lin = StableLinearOperator.random(3, rng, scale=0.3)
    A = lin.A_q
    _, P = lyapunov_certificate(lin.params)
    # V(z) = z^T P^{-1} z decreases by rho' < 1 along A; beta above it never triggers scaling
    Pinv = np.linalg.inv(P)
    contraction = np.max(np.linalg.eigvals(np.linalg.solve(Pinv, A.T @ Pinv @ A)).real)
    f = SimpleNamespace(__call__=None)
    op = StableNonlinearOperator(lambda z: A @ z, QuadraticLyapunov(Pinv), lin.B_q.copy(),
                                 lin.C_q.copy(), lin.D_q, beta=min(0.999, contraction + 1e-3))
    del f
    r = rng.uniform(-1, 1, 50)
    u_lin = [q_lti_step(lin, v) for v in r]
    u_nl = [q_nonlinear_step(op, v) for v in r]
    np.testing.assert_allclose(u_nl, u_lin, rtol=0, atol=1e-12)


def test_bounded_input_bounded_state():
    rng = np.random.default_rng(5)
    for _ in range(10):
        op = StableNonlinearOperator.random(3, rng, width=8, io_scale=1.0)
        peak = 0.0
        for v in rng.uniform(-1, 1, 1000):
            q_nonlinear_step(op, v)
            peak = max(peak, float(np.linalg.norm(op.z)))
        assert np.isfinite(peak) and peak < 1e3


def test_nonlinear_zero_state_zero_input():
    op = StableNonlinearOperator.random(2, np.random.default_rng(0))
    assert q_nonlinear_step(op, 0.0) == 0.0
    assert not np.any(op.z)


def test_nonlinear_vector_roundtrip():
    op = StableNonlinearOperator.random(2, np.random.default_rng(1), width=4, v_width=4)
    v = op.to_vector()
    np.testing.assert_array_equal(op.from_vector(v).to_vector(), v)
    with pytest.raises(ParameterizationError):
        op.from_vector(v[:-1])


def test_beta_range_checked():
    with pytest.raises(ParameterizationError):
        StableNonlinearOperator.random(2, np.random.default_rng(0), beta=1.0)
