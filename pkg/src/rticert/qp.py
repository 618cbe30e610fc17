"""Dense convex QP solver: equality constraints plus variable box bounds.

    min  1/2 d'Hd + g'd
    s.t. A_eq d = b_eq
         lb <= d <= ub        (+/- inf marks an unbounded component)

Primal active-set method. Equalities stay active throughout; bounds are
added and dropped one at a time. Deterministic: ties are broken by the
smallest variable index, and no randomness is used anywhere.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

_DUAL_TOL = 1e-11
_STEP_TOL = 1e-12
_FEAS_TOL = 1e-9


@dataclass
class DenseQp:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, float))
        self.g = np.atleast_1d(np.asarray(self.g, float))
        n = self.g.size
        self.A_eq = np.asarray(self.A_eq, float).reshape(-1, n)
        self.b_eq = np.atleast_1d(np.asarray(self.b_eq, float)) \
            if np.size(self.b_eq) else np.zeros(0)
        self.lb = np.atleast_1d(np.asarray(self.lb, float))
        self.ub = np.atleast_1d(np.asarray(self.ub, float))
        if not np.allclose(self.H, self.H.T, atol=1e-10):
            raise ValueError("H must be symmetric")
        if np.any(self.lb > self.ub):
            raise ValueError("lb must not exceed ub")

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def m(self) -> int:
        return self.b_eq.size

    def objective(self, d: np.ndarray) -> float:
        return float(0.5 * d @ self.H @ d + self.g @ d)


@dataclass
class QpSolution:
    primal: np.ndarray
    eq_duals: np.ndarray
    bound_duals_lo: np.ndarray
    bound_duals_hi: np.ndarray
    active_set: np.ndarray  # -1 at lower bound, +1 at upper, 0 free
    status: str
    iterations: int = 0
    n_changes: int = 0
    kkt_error: float = np.nan
    info: dict = field(default_factory=dict)


def _kkt_error(qp: DenseQp, sol: "QpSolution") -> float:
    d = sol.primal
    stat = qp.H @ d + qp.g - sol.bound_duals_lo + sol.bound_duals_hi
    if qp.m:
        stat = stat + qp.A_eq.T @ sol.eq_duals
        eq = float(np.max(np.abs(qp.A_eq @ d - qp.b_eq)))
    else:
        eq = 0.0
    lo_viol = np.max(np.maximum(qp.lb - d, 0.0), initial=0.0)
    hi_viol = np.max(np.maximum(d - qp.ub, 0.0), initial=0.0)
    dual_neg = max(np.max(np.maximum(-sol.bound_duals_lo, 0.0), initial=0.0),
                   np.max(np.maximum(-sol.bound_duals_hi, 0.0), initial=0.0))
    gap_lo = np.where(np.isfinite(qp.lb), d - qp.lb, 0.0)
    gap_hi = np.where(np.isfinite(qp.ub), qp.ub - d, 0.0)
    compl = max(np.max(np.abs(sol.bound_duals_lo * gap_lo), initial=0.0),
                np.max(np.abs(sol.bound_duals_hi * gap_hi), initial=0.0))
    return max(float(np.max(np.abs(stat))), eq, float(lo_viol), float(hi_viol),
               float(dual_neg), float(compl))


def _feasible_start(qp: DenseQp, working: np.ndarray) -> np.ndarray | None:
    """Point satisfying equalities and bounds, honoring the warm working set.

    Tries a least-norm solve with working-set components pinned at their
    bounds, greedily pins newly violated components, and falls back to
    bounded least squares if the greedy loop stalls.
    """
    n = qp.n
    d = np.clip(np.zeros(n), qp.lb, qp.ub)
    if qp.m == 0:
        d = d.copy()
        d[working == -1] = qp.lb[working == -1]
        d[working == 1] = qp.ub[working == 1]
        return d

    pinned = working.copy()
    for _ in range(n + 1):
        d = np.zeros(n)
        d[pinned == -1] = qp.lb[pinned == -1]
        d[pinned == 1] = qp.ub[pinned == 1]
        free = np.flatnonzero(pinned == 0)
        rhs = qp.b_eq - qp.A_eq @ d
        if free.size:
            d[free], *_ = np.linalg.lstsq(qp.A_eq[:, free], rhs, rcond=None)
        if np.max(np.abs(qp.A_eq @ d - qp.b_eq)) > _FEAS_TOL * (1.0 + np.max(np.abs(qp.b_eq))):
            break  # inconsistent with pinned set; try BVLS below
        lo_v = qp.lb - d
        hi_v = d - qp.ub
        worst = -1
        worst_v = _FEAS_TOL
        for i in range(n):
            v = max(lo_v[i], hi_v[i])
            if v > worst_v:
                worst, worst_v = i, v
        if worst < 0:
            return d
        pinned[worst] = -1 if lo_v[worst] >= hi_v[worst] else 1

    # fall back: bounded least squares on the equality residual
    lb = np.where(np.isfinite(qp.lb), qp.lb, -1e12)
    ub = np.where(np.isfinite(qp.ub), qp.ub, 1e12)
    res = lsq_linear(qp.A_eq, qp.b_eq, bounds=(lb, ub), method="bvls")
    d = np.clip(res.x, qp.lb, qp.ub)
    if np.max(np.abs(qp.A_eq @ d - qp.b_eq)) > _FEAS_TOL * (1.0 + np.max(np.abs(qp.b_eq))):
        return None
    return d


def _eqp_step(qp: DenseQp, d: np.ndarray, working: np.ndarray):
    """Direction and equality duals of the working-set subproblem.

    Solves  min 1/2 p'Hp + r'p  s.t. A_eq p = 0, p_i = 0 for working i,
    with r the current gradient H d + g.
    """
    free = np.flatnonzero(working == 0)
    r = qp.H @ d + qp.g
    m = qp.m
    p = np.zeros(qp.n)
    if free.size == 0:
        if m:
            lam, *_ = np.linalg.lstsq(qp.A_eq.T, -(r), rcond=None)
        else:
            lam = np.zeros(0)
        return p, lam
    Hff = qp.H[np.ix_(free, free)]
    Af = qp.A_eq[:, free] if m else np.zeros((0, free.size))
    K = np.block([[Hff, Af.T], [Af, np.zeros((m, m))]])
    rhs = np.concatenate([-r[free], np.zeros(m)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    p[free] = sol[:free.size]
    lam = sol[free.size:]
    return p, lam


def solve_qp(qp: DenseQp, warm_active_set=None) -> QpSolution:
    """Solve the box-and-equality QP with a primal active-set method.

    ``warm_active_set`` is an int array of +/-1/0 flags (as stored in
    ``QpSolution.active_set``); infeasible or inconsistent warm sets are
    repaired silently.
    """
    n = qp.n
    scale = 1.0 + float(np.max(np.abs(qp.g), initial=0.0)) \
        + float(np.max(np.abs(qp.H)))

    working = np.zeros(n, dtype=np.int8)
    if warm_active_set is not None:
        warm = np.asarray(warm_active_set, dtype=np.int8)
        if warm.shape == (n,):
            working = warm.copy()
            working[(working == -1) & ~np.isfinite(qp.lb)] = 0
            working[(working == 1) & ~np.isfinite(qp.ub)] = 0
    # equal bounds are permanently fixed
    fixed = np.isfinite(qp.lb) & (qp.lb == qp.ub)
    working[fixed] = -1

    d = _feasible_start(qp, working)
    if d is None:
        return QpSolution(primal=np.full(n, np.nan), eq_duals=np.zeros(qp.m),
                          bound_duals_lo=np.zeros(n), bound_duals_hi=np.zeros(n),
                          active_set=working, status="infeasible")
    # keep only working-set entries that actually sit on their bound
    on_lo = np.abs(d - qp.lb) <= 1e-10 * (1.0 + np.abs(d))
    on_hi = np.abs(d - qp.ub) <= 1e-10 * (1.0 + np.abs(d))
    working[(working == -1) & ~on_lo] = 0
    working[(working == 1) & ~on_hi] = 0

    n_changes = 0
    max_iter = max(50 * n, 50)
    for it in range(1, max_iter + 1):
        p, lam = _eqp_step(qp, d, working)
        if np.max(np.abs(p), initial=0.0) <= _STEP_TOL * scale:
            # candidate optimum on the working set: inspect bound duals
            r = qp.H @ d + qp.g
            if qp.m:
                r = r + qp.A_eq.T @ lam
            mu_lo = np.zeros(n)
            mu_hi = np.zeros(n)
            drop = -1
            drop_val = -_DUAL_TOL * scale
            for i in np.flatnonzero(working):
                if fixed[i]:
                    continue
                mu = r[i] if working[i] == -1 else -r[i]
                if mu < drop_val:
                    drop_val = mu
                    drop = i
            if drop >= 0:
                working[drop] = 0
                n_changes += 1
                continue
            for i in np.flatnonzero(working == -1):
                mu_lo[i] = max(r[i], 0.0)
            for i in np.flatnonzero(working == 1):
                mu_hi[i] = max(-r[i], 0.0)
            sol = QpSolution(primal=d, eq_duals=lam, bound_duals_lo=mu_lo,
                             bound_duals_hi=mu_hi, active_set=working.copy(),
                             status="solved", iterations=it, n_changes=n_changes)
            sol.kkt_error = _kkt_error(qp, sol)
            return sol

        # ratio test against the inactive bounds
        alpha = 1.0
        blocker = -1
        block_side = 0
        for i in range(n):
            if working[i] != 0 or p[i] == 0.0:
                continue
            if p[i] > 0.0 and np.isfinite(qp.ub[i]):
                a = (qp.ub[i] - d[i]) / p[i]
                side = 1
            elif p[i] < 0.0 and np.isfinite(qp.lb[i]):
                a = (qp.lb[i] - d[i]) / p[i]
                side = -1
            else:
                continue
            a = max(a, 0.0)
            if a < alpha - 1e-14:
                alpha, blocker, block_side = a, i, side
            # ties: smallest index wins, and loop order guarantees it
        d = d + alpha * p
        if blocker >= 0:
            d[blocker] = qp.ub[blocker] if block_side == 1 else qp.lb[blocker]
            working[blocker] = block_side
            n_changes += 1

    return QpSolution(primal=d, eq_duals=np.zeros(qp.m),
                      bound_duals_lo=np.zeros(n), bound_duals_hi=np.zeros(n),
                      active_set=working, status="max_iter",
                      iterations=max_iter, n_changes=n_changes)
