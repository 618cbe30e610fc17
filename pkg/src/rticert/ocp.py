"""Multiple-shooting OCP: costs, shooting constraints, KKT residuals.

The discretized problem, parametric in the current state x:

    min  T_d * sum_i (s_i' Q s_i + u_i' R u_i) + s_N' P s_N
    s.t. s_0 - x = 0
         F(s_i, u_i) - s_{i+1} = 0,   i = 0..N-1
         u_lo <= u_i <= u_hi

where F is the RK4 flow of the plant over one discretization interval.
The primal-dual iterate layout is fixed:

    z = (s_0..s_N, u_0..u_{N-1}, lam_0..lam_N, mu_lo, mu_hi)

with lam_0 paired to the initial-value equality and lam_{i+1} to the
i-th continuity equality.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import plant as plant_mod
from .plant import PlantModel, zoh_step_batch, _fd_step


class DareDivergenceError(RuntimeError):
    """Riccati recursion failed to converge (pair likely unstabilizable)."""


def dare_terminal_weight(A, B, Q, R, tol: float = 1e-13, max_iter: int = 100_000):
    """Terminal weight P solving the discrete algebraic Riccati equation.

    Fixed-point recursion started at P = Q, iterated until the successive
    change drops below ``tol`` in the max norm. The returned P satisfies

        P = A'PA - (A'PB)(R + B'PB)^-1 (B'PA) + Q

    with Frobenius residual <= 1e-10.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.asarray(B, float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))

    P = Q.copy()
    for _ in range(max_iter):
        PB = P @ B
        gain = np.linalg.solve(R + B.T @ PB, PB.T @ A)
        P_next = A.T @ P @ A - (A.T @ PB) @ gain + Q
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) <= tol:
            P = P_next
            break
        P = P_next
    else:
        raise DareDivergenceError("Riccati recursion did not converge")

    residual = A.T @ P @ A - (A.T @ P @ B) @ np.linalg.solve(
        R + B.T @ P @ B, B.T @ P @ A) + Q - P
    if np.linalg.norm(residual, "fro") > 1e-10:
        raise DareDivergenceError(
            f"Riccati residual {np.linalg.norm(residual, 'fro'):.3e} above 1e-10")
    return P


def discretize_linearization(A_c, B_c, T_d: float):
    """Exact ZOH discretization (A, B) of dx/dt = A_c x + B_c u.

    Uses the augmented-matrix exponential
        exp([[A_c, B_c], [0, 0]] * T_d) = [[A, B], [0, I]].
    """
    if T_d <= 0.0:
        raise ValueError("T_d must be positive")
    A_c = np.atleast_2d(np.asarray(A_c, float))
    B_c = np.asarray(B_c, float)
    if B_c.ndim == 1:
        B_c = B_c.reshape(-1, 1)
    n, m = B_c.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A_c * T_d
    M[:n, n:] = B_c * T_d
    E = scipy.linalg.expm(M)
    return E[:n, :n], E[:n, n:]


@dataclass(frozen=True)
class OcpSpec:
    """Immutable description of the discretized OCP."""

    plant: PlantModel
    N: int
    T_f: float
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    rk4_substeps: int = 10

    def __post_init__(self):
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, float)))
        object.__setattr__(self, "P", np.atleast_2d(np.asarray(self.P, float)))
        object.__setattr__(self, "u_lo", np.atleast_1d(np.asarray(self.u_lo, float)))
        object.__setattr__(self, "u_hi", np.atleast_1d(np.asarray(self.u_hi, float)))
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.T_f <= 0.0:
            raise ValueError("T_f must be positive")
        if self.rk4_substeps < 1:
            raise ValueError("rk4_substeps must be >= 1")
        for name, W in (("Q", self.Q), ("R", self.R)):
            if not np.allclose(W, W.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(W)) <= 0.0:
                raise ValueError(f"{name} must be positive definite")
        if not np.allclose(self.P, self.P.T, atol=1e-12):
            raise ValueError("P must be symmetric")
        if np.min(np.linalg.eigvalsh(self.P)) < -1e-12:
            raise ValueError("P must be positive semidefinite")
        if not np.all(self.u_lo < self.u_hi):
            raise ValueError("u_lo must be strictly below u_hi componentwise")

    @property
    def n_x(self) -> int:
        return self.plant.n_x

    @property
    def n_u(self) -> int:
        return self.plant.n_u

    @property
    def T_d(self) -> float:
        return self.T_f / self.N

    @property
    def n_primal(self) -> int:
        return (self.N + 1) * self.n_x + self.N * self.n_u

    @property
    def n_eq(self) -> int:
        return (self.N + 1) * self.n_x

    @property
    def n_bounds(self) -> int:
        return self.N * self.n_u

    @property
    def dim_z(self) -> int:
        return self.n_primal + self.n_eq + 2 * self.n_bounds


def chen_ocp(mu_chen: float = 0.5, N: int = 5, T_f: float = 0.3,
             q_weight: float = 0.1, r_weight: float = 0.1,
             u_bound: float = 2.0, rk4_substeps: int = 10) -> OcpSpec:
    """Default benchmark OCP: quadratic cost, DARE terminal weight, input box."""
    model = plant_mod.chen_model(mu_chen)
    A_c, B_c = plant_mod.evaluate_jacobians(model, np.zeros(2), np.zeros(1))
    T_d = T_f / N
    A, B = discretize_linearization(A_c, B_c, T_d)
    Q = q_weight * np.eye(2)
    R = r_weight * np.eye(1)
    P = dare_terminal_weight(A, B, Q, R)
    return OcpSpec(plant=model, N=N, T_f=T_f, Q=Q, R=R, P=P,
                   u_lo=np.array([-u_bound]), u_hi=np.array([u_bound]),
                   rk4_substeps=rk4_substeps)


@dataclass
class Iterate:
    """Primal-dual iterate with the fixed layout documented in the module header.

    Shapes: s (N+1, n_x), u (N, n_u), lam (N+1, n_x), mu_lo / mu_hi (N, n_u).
    """

    s: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    mu_lo: np.ndarray
    mu_hi: np.ndarray

    @classmethod
    def zeros(cls, spec: OcpSpec) -> "Iterate":
        return cls(s=np.zeros((spec.N + 1, spec.n_x)),
                   u=np.zeros((spec.N, spec.n_u)),
                   lam=np.zeros((spec.N + 1, spec.n_x)),
                   mu_lo=np.zeros((spec.N, spec.n_u)),
                   mu_hi=np.zeros((spec.N, spec.n_u)))

    @classmethod
    def from_vector(cls, spec: OcpSpec, vec: np.ndarray) -> "Iterate":
        vec = np.asarray(vec, float)
        if vec.shape != (spec.dim_z,):
            raise ValueError(f"expected vector of length {spec.dim_z}")
        n_s = (spec.N + 1) * spec.n_x
        n_u = spec.N * spec.n_u
        o = 0
        s = vec[o:o + n_s].reshape(spec.N + 1, spec.n_x); o += n_s
        u = vec[o:o + n_u].reshape(spec.N, spec.n_u); o += n_u
        lam = vec[o:o + n_s].reshape(spec.N + 1, spec.n_x); o += n_s
        mu_lo = vec[o:o + n_u].reshape(spec.N, spec.n_u); o += n_u
        mu_hi = vec[o:o + n_u].reshape(spec.N, spec.n_u)
        return cls(s=s, u=u, lam=lam, mu_lo=mu_lo, mu_hi=mu_hi)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.s.ravel(), self.u.ravel(), self.lam.ravel(),
                               self.mu_lo.ravel(), self.mu_hi.ravel()])

    def primal(self) -> np.ndarray:
        return np.concatenate([self.s.ravel(), self.u.ravel()])

    def copy(self) -> "Iterate":
        return Iterate(self.s.copy(), self.u.copy(), self.lam.copy(),
                       self.mu_lo.copy(), self.mu_hi.copy())


def iterate_error(z: Iterate, z_ref: Iterate, norm: str = "full") -> float:
    """Distance ||z - z_ref|| in the full primal-dual vector (default) or primal only."""
    if norm == "full":
        return float(np.linalg.norm(z.to_vector() - z_ref.to_vector()))
    if norm == "primal":
        return float(np.linalg.norm(z.primal() - z_ref.primal()))
    raise ValueError(f"unknown norm {norm!r}")


@dataclass(frozen=True)
class KktResidual:
    """Max-norm first-order optimality residuals."""

    stationarity: float
    primal_feas: float
    complementarity: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.primal_feas, self.complementarity)


def shoot_interval(spec: OcpSpec, s_i, u_i) -> np.ndarray:
    """One-interval RK4 flow F(s_i, u_i) over T_d."""
    X = np.asarray(s_i, float).reshape(-1, 1)
    U = np.asarray(u_i, float).reshape(-1, 1)
    return zoh_step_batch(spec.plant, X, U, spec.T_d, spec.rk4_substeps)[:, 0]


def shooting_sensitivities(spec: OcpSpec, s: np.ndarray, u: np.ndarray):
    """Values and central-difference Jacobians of the interval flow.

    Returns (F_vals, A_list, B_list) with F_vals[i] = F(s_i, u_i),
    A_list[i] = dF/ds_i and B_list[i] = dF/du_i. All N intervals and all
    perturbed columns are integrated in a single batch.
    """
    N, n_x, n_u = spec.N, spec.n_x, spec.n_u
    n_dir = n_x + n_u
    cols = 1 + 2 * n_dir  # nominal plus +/- perturbations

    X0 = np.empty((n_x, N * cols))
    U0 = np.empty((n_u, N * cols))
    steps = np.empty((N, n_dir))
    for i in range(N):
        base = i * cols
        hx = _fd_step(s[i])
        hu = _fd_step(u[i])
        steps[i, :n_x] = hx
        steps[i, n_x:] = hu
        X0[:, base:base + cols] = s[i][:, None]
        U0[:, base:base + cols] = u[i][:, None]
        for j in range(n_x):
            X0[j, base + 1 + 2 * j] += hx[j]
            X0[j, base + 2 + 2 * j] -= hx[j]
        for j in range(n_u):
            c = base + 1 + 2 * n_x + 2 * j
            U0[j, c] += hu[j]
            U0[j, c + 1] -= hu[j]

    XF = zoh_step_batch(spec.plant, X0, U0, spec.T_d, spec.rk4_substeps)

    F_vals = np.empty((N, n_x))
    A_list = np.empty((N, n_x, n_x))
    B_list = np.empty((N, n_x, n_u))
    for i in range(N):
        base = i * cols
        F_vals[i] = XF[:, base]
        for j in range(n_x):
            A_list[i][:, j] = (XF[:, base + 1 + 2 * j] - XF[:, base + 2 + 2 * j]) \
                / (2.0 * steps[i, j])
        for j in range(n_u):
            c = base + 1 + 2 * n_x + 2 * j
            B_list[i][:, j] = (XF[:, c] - XF[:, c + 1]) / (2.0 * steps[i, n_x + j])
    return F_vals, A_list, B_list


def cost_hessian(spec: OcpSpec) -> np.ndarray:
    """Exact Hessian of the (purely quadratic) objective in the primal block."""
    H = np.zeros((spec.n_primal, spec.n_primal))
    n_x, n_u, N = spec.n_x, spec.n_u, spec.N
    for i in range(N):
        o = i * n_x
        H[o:o + n_x, o:o + n_x] = 2.0 * spec.T_d * spec.Q
    o = N * n_x
    H[o:o + n_x, o:o + n_x] = 2.0 * spec.P
    off = (N + 1) * n_x
    for i in range(N):
        o = off + i * n_u
        H[o:o + n_u, o:o + n_u] = 2.0 * spec.T_d * spec.R
    return H


def constraint_jacobian(spec: OcpSpec, A_list, B_list) -> np.ndarray:
    """Dense Jacobian of the stacked equality constraints."""
    N, n_x, n_u = spec.N, spec.n_x, spec.n_u
    J = np.zeros((spec.n_eq, spec.n_primal))
    J[:n_x, :n_x] = np.eye(n_x)
    off_u = (N + 1) * n_x
    for i in range(N):
        r = (i + 1) * n_x
        J[r:r + n_x, i * n_x:(i + 1) * n_x] = A_list[i]
        J[r:r + n_x, off_u + i * n_u:off_u + (i + 1) * n_u] = B_list[i]
        J[r:r + n_x, (i + 1) * n_x:(i + 2) * n_x] = -np.eye(n_x)
    return J


def eval_objective(spec: OcpSpec, iterate: Iterate) -> float:
    """Objective value T_d * sum of stage terms plus terminal term."""
    s, u = iterate.s, iterate.u
    val = 0.0
    for i in range(spec.N):
        val += s[i] @ spec.Q @ s[i] + u[i] @ spec.R @ u[i]
    val *= spec.T_d
    val += s[spec.N] @ spec.P @ s[spec.N]
    return float(val)


def eval_constraints(spec: OcpSpec, x, iterate: Iterate):
    """Equality residuals and box-bound slack of an iterate.

    Returns (eq, slack): eq stacks (s_0 - x, F(s_0,u_0) - s_1, ...) and
    slack[i, j] = min(u_ij - u_lo_j, u_hi_j - u_ij), negative where violated.
    """
    x = np.atleast_1d(np.asarray(x, float))
    eq = np.empty(spec.n_eq)
    eq[:spec.n_x] = iterate.s[0] - x
    for i in range(spec.N):
        eq[(i + 1) * spec.n_x:(i + 2) * spec.n_x] = \
            shoot_interval(spec, iterate.s[i], iterate.u[i]) - iterate.s[i + 1]
    slack = np.minimum(iterate.u - spec.u_lo, spec.u_hi - iterate.u)
    return eq, slack


def equality_residual(spec: OcpSpec, x, F_vals, iterate: Iterate) -> np.ndarray:
    """Equality residuals reusing precomputed interval flows."""
    x = np.atleast_1d(np.asarray(x, float))
    eq = np.empty(spec.n_eq)
    eq[:spec.n_x] = iterate.s[0] - x
    for i in range(spec.N):
        eq[(i + 1) * spec.n_x:(i + 2) * spec.n_x] = F_vals[i] - iterate.s[i + 1]
    return eq


def stationarity_vector(spec: OcpSpec, J: np.ndarray, iterate: Iterate) -> np.ndarray:
    """Gradient of the Lagrangian in the primal variables."""
    grad = cost_hessian(spec) @ iterate.primal()
    grad += J.T @ iterate.lam.ravel()
    off_u = (spec.N + 1) * spec.n_x
    grad[off_u:] += (iterate.mu_hi - iterate.mu_lo).ravel()
    return grad


def kkt_residual(spec: OcpSpec, x, iterate: Iterate) -> KktResidual:
    """First-order optimality residuals of an iterate at parameter x."""
    F_vals, A_list, B_list = shooting_sensitivities(spec, iterate.s, iterate.u)
    J = constraint_jacobian(spec, A_list, B_list)
    eq = equality_residual(spec, x, F_vals, iterate)
    grad = stationarity_vector(spec, J, iterate)
    slack_lo = iterate.u - spec.u_lo
    slack_hi = spec.u_hi - iterate.u
    bound_violation = max(0.0, float(np.max(-slack_lo, initial=0.0)),
                          float(np.max(-slack_hi, initial=0.0)))
    compl = max(float(np.max(np.abs(iterate.mu_lo * slack_lo), initial=0.0)),
                float(np.max(np.abs(iterate.mu_hi * slack_hi), initial=0.0)))
    return KktResidual(
        stationarity=float(np.max(np.abs(grad))),
        primal_feas=max(float(np.max(np.abs(eq))), bound_violation),
        complementarity=compl,
    )
