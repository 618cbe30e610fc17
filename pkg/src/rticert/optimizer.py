"""Optimizer dynamics: one Gauss-Newton SQP step and the converged oracle.

A single real-time iteration linearizes the shooting constraints at the
current iterate, keeps the exact (quadratic) cost Hessian plus a fixed
Levenberg-Marquardt diagonal shift, solves the resulting QP warm-started
from the iterate's active set, and applies the full step. Repeating the
step at a fixed parameter until the KKT residual vanishes yields the
exact solution map z_bar(x) and the optimal cost V(x).
"""

from dataclasses import dataclass

import numpy as np

from . import ocp as ocp_mod
from .ocp import Iterate, KktResidual, OcpSpec
from .qp import DenseQp, solve_qp


class OptimizerStepError(RuntimeError):
    """QP subproblem failed (infeasible linearization or iteration cap)."""


class OracleFailureError(RuntimeError):
    """Converged solve did not reach the KKT tolerance.

    Usually means the warm start left the contraction region. Carries the
    last residual as ``kkt``.
    """

    def __init__(self, kkt: KktResidual, iters: int):
        super().__init__(
            f"oracle did not converge in {iters} iterations; last KKT max "
            f"residual {kkt.max:.3e}")
        self.kkt = kkt
        self.iters = iters


@dataclass(frozen=True)
class RtiSettings:
    """Tuning knobs of the real-time iteration.

    lm_shift: diagonal added to the Gauss-Newton Hessian (fixed per step).
    kkt_tol / max_oracle_iters: stopping rule of the converged oracle.
    shift_warmstart: exploratory option, off by default; the nominal
    optimizer dynamics reuse the previous iterate unshifted.
    error_norm: "full" measures iterate errors in the complete primal-dual
    vector, "primal" restricts to (s, u).
    """

    lm_shift: float = 1e-4
    kkt_tol: float = 1e-10
    max_oracle_iters: int = 200
    shift_warmstart: bool = False
    error_norm: str = "full"

    def __post_init__(self):
        if self.lm_shift < 0.0:
            raise ValueError("lm_shift must be nonnegative")
        if self.kkt_tol <= 0.0:
            raise ValueError("kkt_tol must be positive")


@dataclass
class OracleResult:
    z_bar: Iterate
    V: float
    iters: int
    kkt: KktResidual


class _Linearization:
    """Shared per-iterate quantities: flows, Jacobians, residuals, gradient."""

    __slots__ = ("F_vals", "J", "eq", "grad_f", "H_f")

    def __init__(self, spec: OcpSpec, x, z: Iterate):
        F_vals, A_list, B_list = ocp_mod.shooting_sensitivities(spec, z.s, z.u)
        self.F_vals = F_vals
        self.J = ocp_mod.constraint_jacobian(spec, A_list, B_list)
        self.eq = ocp_mod.equality_residual(spec, x, F_vals, z)
        self.H_f = ocp_mod.cost_hessian(spec)
        self.grad_f = self.H_f @ z.primal()

    def kkt(self, spec: OcpSpec, z: Iterate) -> KktResidual:
        grad = self.grad_f + self.J.T @ z.lam.ravel()
        off_u = (spec.N + 1) * spec.n_x
        grad[off_u:] += (z.mu_hi - z.mu_lo).ravel()
        slack_lo = z.u - spec.u_lo
        slack_hi = spec.u_hi - z.u
        bound_violation = max(0.0, float(np.max(-slack_lo, initial=0.0)),
                              float(np.max(-slack_hi, initial=0.0)))
        compl = max(float(np.max(np.abs(z.mu_lo * slack_lo), initial=0.0)),
                    float(np.max(np.abs(z.mu_hi * slack_hi), initial=0.0)))
        return KktResidual(stationarity=float(np.max(np.abs(grad))),
                           primal_feas=max(float(np.max(np.abs(self.eq))),
                                           bound_violation),
                           complementarity=compl)


def _warm_set(spec: OcpSpec, z: Iterate) -> np.ndarray:
    """Active-set flags for the QP, recovered from the iterate's bound duals."""
    working = np.zeros(spec.n_primal, dtype=np.int8)
    off_u = (spec.N + 1) * spec.n_x
    lo_active = (z.mu_lo.ravel() > 0.0) & \
        (np.abs(z.u.ravel() - np.tile(spec.u_lo, spec.N)) <= 1e-9)
    hi_active = (z.mu_hi.ravel() > 0.0) & \
        (np.abs(z.u.ravel() - np.tile(spec.u_hi, spec.N)) <= 1e-9)
    working[off_u:][lo_active] = -1
    working[off_u:][hi_active] = 1
    return working


def _step_from_linearization(spec: OcpSpec, lin: _Linearization, z: Iterate,
                             settings: RtiSettings) -> Iterate:
    n_p = spec.n_primal
    off_u = (spec.N + 1) * spec.n_x
    H = lin.H_f + settings.lm_shift * np.eye(n_p)
    lb = np.full(n_p, -np.inf)
    ub = np.full(n_p, np.inf)
    lb[off_u:] = np.tile(spec.u_lo, spec.N) - z.u.ravel()
    ub[off_u:] = np.tile(spec.u_hi, spec.N) - z.u.ravel()
    qp = DenseQp(H=H, g=lin.grad_f, A_eq=lin.J, b_eq=-lin.eq, lb=lb, ub=ub)
    sol = solve_qp(qp, warm_active_set=_warm_set(spec, z))
    if sol.status != "solved":
        raise OptimizerStepError(f"QP subproblem ended with status {sol.status!r}")
    w_new = z.primal() + sol.primal
    n_s = (spec.N + 1) * spec.n_x
    return Iterate(
        s=w_new[:n_s].reshape(spec.N + 1, spec.n_x),
        u=w_new[n_s:].reshape(spec.N, spec.n_u),
        lam=sol.eq_duals.reshape(spec.N + 1, spec.n_x).copy(),
        mu_lo=sol.bound_duals_lo[off_u:].reshape(spec.N, spec.n_u).copy(),
        mu_hi=sol.bound_duals_hi[off_u:].reshape(spec.N, spec.n_u).copy(),
    )


def rti_step(spec: OcpSpec, x, z: Iterate, settings: RtiSettings) -> Iterate:
    """One full Gauss-Newton step of the optimizer at parameter x."""
    return _step_from_linearization(spec, _Linearization(spec, x, z), z, settings)


def solve_converged(spec: OcpSpec, x, z_init: Iterate,
                    settings: RtiSettings) -> OracleResult:
    """Iterate the optimizer at fixed x until the KKT residual is below tol."""
    z = z_init
    for it in range(settings.max_oracle_iters + 1):
        lin = _Linearization(spec, x, z)
        kkt = lin.kkt(spec, z)
        if kkt.max <= settings.kkt_tol:
            return OracleResult(z_bar=z, V=ocp_mod.eval_objective(spec, z),
                                iters=it, kkt=kkt)
        if it == settings.max_oracle_iters:
            break
        z = _step_from_linearization(spec, lin, z, settings)
    raise OracleFailureError(kkt, settings.max_oracle_iters)


def extract_control(z: Iterate) -> np.ndarray:
    """First control move of the iterate (a norm-1 selector of z)."""
    return z.u[0].copy()
