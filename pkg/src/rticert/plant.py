"""Continuous-time plant models and fixed-step zero-order-hold simulation."""

from dataclasses import dataclass, field

import numpy as np


class IntegrationDivergedError(RuntimeError):
    """Raised when the integrator produces a non-finite state.

    Carries ``last_finite_time``, the latest grid time at which the state
    was still finite.
    """

    def __init__(self, last_finite_time: float):
        super().__init__(
            f"integration diverged; last finite state at t={last_finite_time:.6g}"
        )
        self.last_finite_time = last_finite_time


def _fd_step(v: np.ndarray) -> np.ndarray:
    return 1e-6 * (1.0 + np.abs(v))


@dataclass(frozen=True)
class PlantModel:
    """Continuous-time control system dx/dt = f(x, u).

    ``dynamics`` maps (state, input) -> state derivative. Optional analytic
    Jacobian callables have the same signature and return matrices of shape
    (n_x, n_x) and (n_x, n_u). ``vectorized`` marks a dynamics function that
    also accepts batches stacked as columns, shape (n_x, m) / (n_u, m);
    callers fall back to a column loop otherwise.

    The origin must be an equilibrium: f(0, 0) = 0.
    """

    n_x: int
    n_u: int
    dynamics: callable
    jacobian_x: callable = None
    jacobian_u: callable = None
    parameters: dict = field(default_factory=dict)
    name: str = "plant"
    vectorized: bool = False

    def __post_init__(self):
        if self.n_x < 1 or self.n_u < 1:
            raise ValueError("state and input dimensions must be positive")
        f0 = np.asarray(self.dynamics(np.zeros(self.n_x), np.zeros(self.n_u)), float)
        if f0.shape != (self.n_x,):
            raise ValueError(f"dynamics returned shape {f0.shape}, expected ({self.n_x},)")
        if np.max(np.abs(f0)) > 1e-12:
            raise ValueError("origin is not an equilibrium: ||f(0,0)|| > 1e-12")
        if self.jacobian_x is not None or self.jacobian_u is not None:
            self._check_jacobians()

    def _check_jacobians(self):
        # analytic Jacobians must agree with central differences on a few
        # fixed pseudo-random samples
        rng = np.random.default_rng(0)
        for _ in range(3):
            x = rng.uniform(-1.0, 1.0, self.n_x)
            u = rng.uniform(-1.0, 1.0, self.n_u)
            A_fd, B_fd = _jacobians_fd(self, x, u)
            if self.jacobian_x is not None:
                A = np.asarray(self.jacobian_x(x, u), float)
                if not np.allclose(A, A_fd, rtol=1e-6, atol=1e-6):
                    raise ValueError("analytic state Jacobian disagrees with finite differences")
            if self.jacobian_u is not None:
                B = np.asarray(self.jacobian_u(x, u), float).reshape(self.n_x, self.n_u)
                if not np.allclose(B, B_fd, rtol=1e-6, atol=1e-6):
                    raise ValueError("analytic input Jacobian disagrees with finite differences")

    def eval_batch(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Evaluate the dynamics on column-stacked batches."""
        if self.vectorized:
            return np.asarray(self.dynamics(X, U), float)
        out = np.empty_like(X)
        for j in range(X.shape[1]):
            out[:, j] = self.dynamics(X[:, j], U[:, j])
        return out


@dataclass(frozen=True)
class SimResult:
    """Trajectory of one constant-input simulation."""

    t_grid: np.ndarray
    x_traj: np.ndarray
    n_steps: int

    @property
    def final_state(self) -> np.ndarray:
        return self.x_traj[-1]


def _rk4_stage(model: PlantModel, X: np.ndarray, U: np.ndarray, h: float) -> np.ndarray:
    k1 = model.eval_batch(X, U)
    k2 = model.eval_batch(X + 0.5 * h * k1, U)
    k3 = model.eval_batch(X + 0.5 * h * k2, U)
    k4 = model.eval_batch(X + h * k3, U)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_zoh(model: PlantModel, x0, u0, T: float, n_steps: int) -> SimResult:
    """Integrate dx/dt = f(x, u0) over [0, T] with constant input u0.

    Fixed-step RK4 with ``n_steps`` uniform substeps. The first trajectory
    point is ``x0`` exactly; the last is the state at time T.
    """
    x0 = np.atleast_1d(np.asarray(x0, float))
    u0 = np.atleast_1d(np.asarray(u0, float))
    if T <= 0.0:
        raise ValueError("T must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if x0.shape != (model.n_x,) or u0.shape != (model.n_u,):
        raise ValueError("state/input dimensions do not match the model")

    h = T / n_steps
    t_grid = np.linspace(0.0, T, n_steps + 1)
    x_traj = np.empty((n_steps + 1, model.n_x))
    x_traj[0] = x0
    X = x0.reshape(-1, 1)
    U = u0.reshape(-1, 1)
    for k in range(n_steps):
        X = _rk4_stage(model, X, U, h)
        if not np.all(np.isfinite(X)):
            raise IntegrationDivergedError(t_grid[k])
        x_traj[k + 1] = X[:, 0]
    return SimResult(t_grid=t_grid, x_traj=x_traj, n_steps=n_steps)


def zoh_step_batch(model: PlantModel, X: np.ndarray, U: np.ndarray, T: float,
                   n_steps: int) -> np.ndarray:
    """Endpoint of the ZOH flow for many (x, u) columns at once."""
    h = T / n_steps
    for _ in range(n_steps):
        X = _rk4_stage(model, X, U, h)
    if not np.all(np.isfinite(X)):
        raise IntegrationDivergedError(float("nan"))
    return X


def _jacobians_fd(model: PlantModel, x: np.ndarray, u: np.ndarray):
    hx = _fd_step(x)
    hu = _fd_step(u)
    A = np.empty((model.n_x, model.n_x))
    for j in range(model.n_x):
        e = np.zeros(model.n_x)
        e[j] = hx[j]
        A[:, j] = (model.dynamics(x + e, u) - model.dynamics(x - e, u)) / (2.0 * hx[j])
    B = np.empty((model.n_x, model.n_u))
    for j in range(model.n_u):
        e = np.zeros(model.n_u)
        e[j] = hu[j]
        B[:, j] = (model.dynamics(x, u + e) - model.dynamics(x, u - e)) / (2.0 * hu[j])
    return A, B


def evaluate_jacobians(model: PlantModel, x, u):
    """Jacobians (df/dx, df/du) at (x, u); analytic if available, else central FD."""
    x = np.atleast_1d(np.asarray(x, float))
    u = np.atleast_1d(np.asarray(u, float))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("non-finite linearization point")
    if model.jacobian_x is not None and model.jacobian_u is not None:
        A = np.asarray(model.jacobian_x(x, u), float)
        B = np.asarray(model.jacobian_u(x, u), float).reshape(model.n_x, model.n_u)
        return A, B
    return _jacobians_fd(model, x, u)


def chen_model(mu_chen: float = 0.5) -> PlantModel:
    """Two-state benchmark plant with a bilinear input coupling.

    f(x, u) = [x2 + u*(mu + (1 - mu)*x2),
               x1 + u*(mu - 4*(1 - mu)*x2)]

    The parameter ``mu_chen`` is dimensionless; 0.5 is the conventional
    choice for this benchmark.
    """
    mu = float(mu_chen)

    def f(x, u):
        # works on single vectors and on column batches alike
        x1, x2 = x[0], x[1]
        uu = u[0]
        return np.stack([x2 + uu * (mu + (1.0 - mu) * x2),
                         x1 + uu * (mu - 4.0 * (1.0 - mu) * x2)])

    def jac_x(x, u):
        uu = u[0]
        return np.array([[0.0, 1.0 + uu * (1.0 - mu)],
                         [1.0, -4.0 * uu * (1.0 - mu)]])

    def jac_u(x, u):
        x2 = x[1]
        return np.array([[mu + (1.0 - mu) * x2],
                         [mu - 4.0 * (1.0 - mu) * x2]])

    return PlantModel(n_x=2, n_u=1, dynamics=f, jacobian_x=jac_x, jacobian_u=jac_u,
                      parameters={"mu_chen": mu}, name="chen", vectorized=True)


def linear_model(M, N) -> PlantModel:
    """Linear plant dx/dt = M x + N u (handy for oracles in tests)."""
    M = np.atleast_2d(np.asarray(M, float))
    N = np.asarray(N, float)
    if N.ndim == 1:
        N = N.reshape(-1, 1)
    n_x, n_u = N.shape

    def f(x, u):
        return M @ x + N @ u

    return PlantModel(n_x=n_x, n_u=n_u, dynamics=f,
                      jacobian_x=lambda x, u: M, jacobian_u=lambda x, u: N,
                      name="linear", vectorized=True)
