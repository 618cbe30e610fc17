import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose

from rticert import ocp, optimizer, plant
from rticert.ocp import (DareDivergenceError, Iterate, chen_ocp,
                         dare_terminal_weight, discretize_linearization,
                         eval_constraints, eval_objective, kkt_residual)


# ---------------------------------------------------------------- DARE

def test_dare_zero_dynamics_gives_stage_weight():
    Q = np.array([[2.0, 0.3], [0.3, 1.0]])
    P = dare_terminal_weight(np.zeros((2, 2)), np.array([[1.0], [0.5]]), Q,
                             np.eye(1))
    assert_allclose(P, Q, atol=1e-14)


def test_dare_scalar_closed_form():
    # a=0.5, b=0: P = q / (1 - a^2) = 4/3
    P = dare_terminal_weight(np.array([[0.5]]), np.array([[0.0]]),
                             np.array([[1.0]]), np.array([[1.0]]))
    assert_allclose(P[0, 0], 4.0 / 3.0, rtol=1e-12)
    # cross-check with an explicit long recursion
    p = 1.0
    for _ in range(1000):
        p = 0.25 * p + 1.0
    assert_allclose(P[0, 0], p, rtol=1e-12)


def test_dare_chen_residual_and_scipy_oracle():
    spec = chen_ocp()
    A_c, B_c = plant.evaluate_jacobians(spec.plant, np.zeros(2), np.zeros(1))
    A, B = discretize_linearization(A_c, B_c, spec.T_d)
    P = spec.P
    res = A.T @ P @ A - (A.T @ P @ B) @ np.linalg.solve(
        B.T @ P @ B + spec.R, B.T @ P @ A) + spec.Q - P
    assert np.linalg.norm(res, "fro") <= 1e-10
    P_ref = scipy.linalg.solve_discrete_are(A, B, spec.Q, spec.R)
    assert_allclose(P, P_ref, rtol=1e-9, atol=1e-11)


def test_dare_unstabilizable_pair_raises():
    # unstable mode a=2 with no input authority
    with pytest.raises(DareDivergenceError):
        dare_terminal_weight(np.array([[2.0]]), np.array([[0.0]]),
                             np.eye(1), np.eye(1))


def test_dare_is_local_clf_for_linearization():
    spec = chen_ocp()
    A_c, B_c = plant.evaluate_jacobians(spec.plant, np.zeros(2), np.zeros(1))
    A, B = discretize_linearization(A_c, B_c, spec.T_d)
    P = spec.P
    K = np.linalg.solve(spec.R + B.T @ P @ B, B.T @ P @ A)
    rng = np.random.default_rng(5)
    for _ in range(50):
        x = rng.standard_normal(2)
        xn = (A - B @ K) @ x
        assert xn @ P @ xn - x @ P @ x <= -x @ spec.Q @ x + 1e-10


# ------------------------------------------------------- discretization

def test_discretize_zero_matrix():
    B_c = np.array([[1.0], [2.0]])
    A, B = discretize_linearization(np.zeros((2, 2)), B_c, 0.3)
    assert_allclose(A, np.eye(2), atol=1e-14)
    assert_allclose(B, 0.3 * B_c, atol=1e-14)


def test_discretize_scalar_closed_form():
    A, B = discretize_linearization(np.array([[1.0]]), np.array([[1.0]]), 1.0)
    assert_allclose(A[0, 0], np.e, rtol=1e-12)
    assert_allclose(B[0, 0], np.e - 1.0, rtol=1e-12)


def test_discretize_chen_cosh_sinh():
    A_c = np.array([[0.0, 1.0], [1.0, 0.0]])
    for T_d in (0.06, 0.3):
        A, _ = discretize_linearization(A_c, np.ones((2, 1)), T_d)
        expected = np.array([[np.cosh(T_d), np.sinh(T_d)],
                             [np.sinh(T_d), np.cosh(T_d)]])
        assert_allclose(A, expected, rtol=1e-12)


# ------------------------------------------------------------ objective

def _random_iterate(spec, rng, scale=1.0):
    z = Iterate.zeros(spec)
    z.s = rng.standard_normal(z.s.shape) * scale
    z.u = rng.standard_normal(z.u.shape) * scale
    z.lam = rng.standard_normal(z.lam.shape) * scale
    z.mu_lo = np.abs(rng.standard_normal(z.mu_lo.shape)) * scale
    z.mu_hi = np.abs(rng.standard_normal(z.mu_hi.shape)) * scale
    return z


def test_objective_zero_iterate():
    spec = chen_ocp()
    assert eval_objective(spec, Iterate.zeros(spec)) == 0.0


def test_objective_hand_example():
    # N=1, T_d=1, Q=I2, R=1, P=I2, s0=(1,0), u0=2, s1=(0,1) -> 1 + 4 + 1
    model = plant.linear_model(np.zeros((2, 2)), np.array([[1.0], [1.0]]))
    spec = ocp.OcpSpec(plant=model, N=1, T_f=1.0, Q=np.eye(2), R=np.eye(1),
                       P=np.eye(2), u_lo=np.array([-10.0]),
                       u_hi=np.array([10.0]))
    z = Iterate.zeros(spec)
    z.s[0] = (1.0, 0.0)
    z.u[0] = 2.0
    z.s[1] = (0.0, 1.0)
    assert_allclose(eval_objective(spec, z), 6.0, rtol=1e-15)


def test_objective_matches_loop_oracle():
    spec = chen_ocp()
    rng = np.random.default_rng(7)
    for _ in range(5):
        z = _random_iterate(spec, rng)
        expected = 0.0
        for i in range(spec.N):
            expected += spec.T_d * (z.s[i] @ spec.Q @ z.s[i]
                                    + z.u[i] @ spec.R @ z.u[i])
        expected += z.s[-1] @ spec.P @ z.s[-1]
        assert_allclose(eval_objective(spec, z), expected, rtol=1e-12)


def test_objective_quadratic_scaling():
    spec = chen_ocp()
    rng = np.random.default_rng(9)
    z = _random_iterate(spec, rng)
    z2 = Iterate.from_vector(spec, z.to_vector() * 2.0)
    # alpha = 2 scales every product exactly in floating point
    assert eval_objective(spec, z2) == 4.0 * eval_objective(spec, z)
    z17 = Iterate.from_vector(spec, z.to_vector() * 1.7)
    assert_allclose(eval_objective(spec, z17),
                    1.7 ** 2 * eval_objective(spec, z), rtol=1e-14)


# ----------------------------------------------------------- constraints

def _forward_sim_iterate(spec, x0, u_seq):
    z = Iterate.zeros(spec)
    z.s[0] = x0
    z.u[:] = u_seq
    for i in range(spec.N):
        z.s[i + 1] = ocp.shoot_interval(spec, z.s[i], z.u[i])
    return z


def test_constraints_vanish_on_forward_simulation():
    spec = chen_ocp()
    rng = np.random.default_rng(13)
    x0 = np.array([0.1, -0.2])
    z = _forward_sim_iterate(spec, x0, rng.uniform(-1, 1, (spec.N, 1)))
    eq, slack = eval_constraints(spec, x0, z)
    assert np.max(np.abs(eq)) <= 1e-12
    assert np.all(slack >= 0)


def test_constraints_first_block():
    spec = chen_ocp()
    z = Iterate.zeros(spec)
    eq, _ = eval_constraints(spec, np.array([1.0, 1.0]), z)
    assert_allclose(eq[:2], [-1.0, -1.0], atol=1e-15)


def test_constraints_match_recompute_oracle():
    spec = chen_ocp()
    rng = np.random.default_rng(17)
    z = _random_iterate(spec, rng, scale=0.3)
    x = rng.standard_normal(2) * 0.1
    eq, slack = eval_constraints(spec, x, z)
    expected = [z.s[0] - x]
    for i in range(spec.N):
        f = plant.simulate_zoh(spec.plant, z.s[i], z.u[i], spec.T_d,
                               spec.rk4_substeps).final_state
        expected.append(f - z.s[i + 1])
    assert_allclose(eq, np.concatenate(expected), atol=1e-12)
    assert_allclose(slack, np.minimum(z.u - spec.u_lo, spec.u_hi - z.u),
                    atol=1e-15)


def test_shooting_residual_iff_rollout(fast_scenario):
    spec = fast_scenario.build_spec()
    rng = np.random.default_rng(19)
    x0 = np.array([0.05, 0.02])
    z = _forward_sim_iterate(spec, x0, rng.uniform(-0.5, 0.5, (spec.N, 1)))
    eq, _ = eval_constraints(spec, x0, z)
    assert np.max(np.abs(eq)) <= 1e-12
    z.s[2] += 1e-6
    eq, _ = eval_constraints(spec, x0, z)
    assert np.max(np.abs(eq)) > 1e-7


# ------------------------------------------------------------------ KKT

def test_kkt_zero_at_origin():
    spec = chen_ocp()
    r = kkt_residual(spec, np.zeros(2), Iterate.zeros(spec))
    assert r.stationarity == 0.0
    assert r.primal_feas == 0.0
    assert r.complementarity == 0.0


def test_kkt_small_after_converged_solve(chen_spec, chen_settings):
    res = optimizer.solve_converged(chen_spec, np.array([0.02, 0.01]),
                                    Iterate.zeros(chen_spec), chen_settings)
    r = kkt_residual(chen_spec, np.array([0.02, 0.01]), res.z_bar)
    assert r.stationarity <= 1e-8
    assert r.primal_feas <= 1e-8
    assert r.complementarity <= 1e-8


def test_kkt_linear_in_multiplier_perturbation(chen_spec, chen_settings):
    x = np.array([0.015, -0.01])
    res = optimizer.solve_converged(chen_spec, x, Iterate.zeros(chen_spec),
                                    chen_settings)
    base = kkt_residual(chen_spec, x, res.z_bar).stationarity
    grads = []
    for delta in (1e-4, 2e-4):
        z = res.z_bar.copy()
        z.lam[1, 0] += delta
        grads.append(kkt_residual(chen_spec, x, z).stationarity - base)
    # doubling the perturbation doubles the residual growth
    assert grads[0] > 10 * base
    assert_allclose(grads[1] / grads[0], 2.0, rtol=1e-3)


def test_spec_validation():
    model = plant.chen_model()
    with pytest.raises(ValueError):
        ocp.OcpSpec(plant=model, N=0, T_f=0.3, Q=np.eye(2), R=np.eye(1),
                    P=np.eye(2), u_lo=[-2.0], u_hi=[2.0])
    with pytest.raises(ValueError):
        ocp.OcpSpec(plant=model, N=5, T_f=0.3, Q=-np.eye(2), R=np.eye(1),
                    P=np.eye(2), u_lo=[-2.0], u_hi=[2.0])
    with pytest.raises(ValueError):
        ocp.OcpSpec(plant=model, N=5, T_f=0.3, Q=np.eye(2), R=np.eye(1),
                    P=np.eye(2), u_lo=[2.0], u_hi=[-2.0])


def test_iterate_vector_round_trip():
    spec = chen_ocp()
    rng = np.random.default_rng(23)
    v = rng.standard_normal(spec.dim_z)
    z = Iterate.from_vector(spec, v)
    assert np.array_equal(z.to_vector(), v)
    assert spec.dim_z == (spec.N + 1) * 2 + spec.N + (spec.N + 1) * 2 + 2 * spec.N
