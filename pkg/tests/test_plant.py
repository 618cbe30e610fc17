import numpy as np
import pytest
from numpy.testing import assert_allclose

from rticert import plant
from rticert.plant import (IntegrationDivergedError, chen_model,
                           evaluate_jacobians, linear_model, simulate_zoh)


def test_equilibrium_simulation_stays_at_origin():
    model = chen_model()
    res = simulate_zoh(model, np.zeros(2), np.zeros(1), 0.0012, 10)
    assert_allclose(res.final_state, np.zeros(2), atol=1e-15)
    assert res.x_traj[0] is not res.final_state
    assert np.array_equal(res.x_traj[0], np.zeros(2))


def test_chen_rhs_at_unit_state():
    # f((1,0), 0) = (0, 1): the second state grows first
    model = chen_model()
    assert_allclose(model.dynamics(np.array([1.0, 0.0]), np.zeros(1)),
                    np.array([0.0, 1.0]), atol=1e-15)
    res = simulate_zoh(model, np.array([1.0, 0.0]), np.zeros(1), 1e-6, 1)
    assert_allclose(res.final_state[1], 1e-6, rtol=1e-6)
    assert res.final_state[1] > 0.0


def test_rk4_matches_fine_euler_oracle():
    model = chen_model()
    x0 = np.array([0.4, -0.3])
    u0 = np.array([1.0])
    T = 0.01
    res = simulate_zoh(model, x0, u0, T, 16)

    h = 1e-7
    x = x0.copy()
    for _ in range(int(round(T / h))):
        x = x + h * model.dynamics(x, u0)
    assert np.linalg.norm(res.final_state - x) <= 1e-8


def test_simulation_composes():
    model = chen_model()
    x0 = np.array([0.2, 0.1])
    u0 = np.array([0.5])
    a = simulate_zoh(model, x0, u0, 0.01, 10)
    b = simulate_zoh(model, a.final_state, u0, 0.005, 5)
    c = simulate_zoh(model, x0, u0, 0.015, 15)
    assert np.linalg.norm(b.final_state - c.final_state) <= 1e-10


def test_rk4_convergence_order():
    model = chen_model()
    x0 = np.array([0.3, -0.2])
    u0 = np.array([1.5])
    T = 0.2
    ref = simulate_zoh(model, x0, u0, T, 4096).final_state
    errs = [np.linalg.norm(simulate_zoh(model, x0, u0, T, n).final_state - ref)
            for n in (8, 16, 32)]
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    for p in orders:
        assert 3.7 <= p <= 4.3, f"measured order {p}"


def test_time_grid_and_first_point():
    model = chen_model()
    x0 = np.array([0.1, 0.2])
    res = simulate_zoh(model, x0, np.zeros(1), 0.5, 7)
    assert np.all(np.diff(res.t_grid) > 0)
    assert res.n_steps == 7
    assert np.array_equal(res.x_traj[0], x0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_last_finite_time():
    # dx/dt = x^3 blows up in finite time from x0 = 2 (t* = 1/8)
    model = plant.PlantModel(
        n_x=1, n_u=1, dynamics=lambda x, u: x ** 3, vectorized=True)
    with pytest.raises(IntegrationDivergedError) as err:
        simulate_zoh(model, np.array([2.0]), np.zeros(1), 1.0, 64)
    assert 0.0 <= err.value.last_finite_time < 1.0


def test_preconditions():
    model = chen_model()
    with pytest.raises(ValueError):
        simulate_zoh(model, np.zeros(2), np.zeros(1), -1.0, 10)
    with pytest.raises(ValueError):
        simulate_zoh(model, np.zeros(2), np.zeros(1), 1.0, 0)
    with pytest.raises(ValueError):
        simulate_zoh(model, np.zeros(3), np.zeros(1), 1.0, 10)


def test_origin_equilibrium_enforced():
    with pytest.raises(ValueError):
        plant.PlantModel(n_x=1, n_u=1, dynamics=lambda x, u: x + 1.0)


def test_chen_jacobians_at_origin():
    model = chen_model(mu_chen=0.5)
    A, B = evaluate_jacobians(model, np.zeros(2), np.zeros(1))
    assert_allclose(A, np.array([[0.0, 1.0], [1.0, 0.0]]), atol=1e-12)
    assert_allclose(B, np.array([[0.5], [0.5]]), atol=1e-12)


def test_jacobians_match_finite_differences():
    model = chen_model()
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.uniform(-1, 1, 2)
        u = rng.uniform(-2, 2, 1)
        A, B = evaluate_jacobians(model, x, u)
        A_fd, B_fd = plant._jacobians_fd(model, x, u)
        assert_allclose(A, A_fd, rtol=1e-6, atol=1e-9)
        assert_allclose(B, B_fd, rtol=1e-6, atol=1e-9)


def test_linear_model_jacobians_exact():
    M = np.array([[0.0, 1.0], [-2.0, -0.5]])
    N = np.array([[0.0], [1.0]])
    model = linear_model(M, N)
    A, B = evaluate_jacobians(model, np.array([0.3, -0.7]), np.array([0.9]))
    assert_allclose(A, M, atol=1e-10)
    assert_allclose(B, N, atol=1e-10)


def test_fd_fallback_path():
    # model without analytic Jacobians takes the central-difference path
    model = plant.PlantModel(
        n_x=2, n_u=1,
        dynamics=lambda x, u: np.stack([x[1], -np.sin(x[0]) + u[0]]),
        vectorized=True)
    A, B = evaluate_jacobians(model, np.array([0.4, 0.1]), np.array([0.2]))
    assert_allclose(A, [[0.0, 1.0], [-np.cos(0.4), 0.0]], rtol=1e-6, atol=1e-8)
    assert_allclose(B, [[0.0], [1.0]], rtol=1e-6, atol=1e-8)


def test_nonfinite_linearization_rejected():
    model = chen_model()
    with pytest.raises(ValueError):
        evaluate_jacobians(model, np.array([np.nan, 0.0]), np.zeros(1))


def test_gronwall_bound_on_samples(fast_bundle):
    # ||psi(T;x,u) - x|| <= T e^{L_x T}(L_u ||u|| + L_x ||x||)
    bundle, _ = fast_bundle
    model = chen_model()
    rng = np.random.default_rng(11)
    for _ in range(200):
        x = rng.uniform(-0.03, 0.03, 2)
        u = rng.uniform(-2, 2, 1)
        T = rng.uniform(1e-4, bundle.T1_horizon)
        xT = simulate_zoh(model, x, u, T, 10).final_state
        lhs = np.linalg.norm(xT - x)
        rhs = T * np.exp(bundle.L_phi_x * T) * (
            bundle.L_phi_u * np.linalg.norm(u)
            + bundle.L_phi_x * np.linalg.norm(x))
        assert lhs <= rhs * 1.001
