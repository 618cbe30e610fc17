import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rticert.qp import DenseQp, solve_qp


def brute_force_qp(qp: DenseQp, tol: float = 1e-9):
    """Enumerate all active-set sign patterns of the bounded components.

    For each pattern the equality-constrained KKT system is solved and the
    candidate kept if it is primal and dual feasible; the feasible KKT
    point with the least objective wins. Exponential, test-only.
    """
    n = qp.n
    m = qp.m
    bounded = [i for i in range(n)
               if np.isfinite(qp.lb[i]) or np.isfinite(qp.ub[i])]
    best = None
    for pattern in itertools.product((-1, 0, 1), repeat=len(bounded)):
        state = np.zeros(n, dtype=int)
        ok = True
        for i, p in zip(bounded, pattern):
            if p == -1 and not np.isfinite(qp.lb[i]):
                ok = False
            if p == 1 and not np.isfinite(qp.ub[i]):
                ok = False
            state[i] = p
        if not ok:
            continue
        fixed = np.flatnonzero(state != 0)
        free = np.flatnonzero(state == 0)
        d = np.zeros(n)
        d[state == -1] = qp.lb[state == -1]
        d[state == 1] = qp.ub[state == 1]
        nf = free.size
        K = np.zeros((nf + m, nf + m))
        K[:nf, :nf] = qp.H[np.ix_(free, free)]
        if m:
            K[:nf, nf:] = qp.A_eq[:, free].T
            K[nf:, :nf] = qp.A_eq[:, free]
        rhs = np.concatenate([
            -(qp.g[free] + qp.H[np.ix_(free, fixed)] @ d[fixed]),
            qp.b_eq - qp.A_eq[:, fixed] @ d[fixed] if m else np.zeros(0)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            continue
        d[free] = sol[:nf]
        lam = sol[nf:]
        if not np.all(np.isfinite(d)):
            continue
        if np.any(d < qp.lb - tol) or np.any(d > qp.ub + tol):
            continue
        if m and np.max(np.abs(qp.A_eq @ d - qp.b_eq)) > tol:
            continue  # singular KKT block slipped through np.linalg.solve
        stat = qp.H @ d + qp.g + (qp.A_eq.T @ lam if m else 0.0)
        if np.max(np.abs(stat[free]), initial=0.0) > 1e-7:
            continue
        r = qp.H @ d + qp.g + (qp.A_eq.T @ lam if m else 0.0)
        dual_ok = True
        for i in fixed:
            mu = r[i] if state[i] == -1 else -r[i]
            if mu < -tol:
                dual_ok = False
                break
        if not dual_ok:
            continue
        obj = qp.objective(d)
        if best is None or obj < best[0] - 1e-12:
            best = (obj, d.copy())
    return best


def test_unconstrained_scalar():
    qp = DenseQp(H=[[1.0]], g=[-1.0], A_eq=np.zeros((0, 1)), b_eq=[],
                 lb=[-np.inf], ub=[np.inf])
    sol = solve_qp(qp)
    assert sol.status == "solved"
    assert_allclose(sol.primal, [1.0], atol=1e-12)
    assert not sol.active_set.any()


def test_upper_bound_active_with_dual():
    # min 1/2 u^2 - 5u s.t. u <= 2  ->  u = 2, upper dual = 3
    qp = DenseQp(H=[[1.0]], g=[-5.0], A_eq=np.zeros((0, 1)), b_eq=[],
                 lb=[-np.inf], ub=[2.0])
    sol = solve_qp(qp)
    assert sol.status == "solved"
    assert_allclose(sol.primal, [2.0], atol=1e-12)
    assert_allclose(sol.bound_duals_hi, [3.0], atol=1e-12)
    assert sol.active_set[0] == 1


def test_equality_only():
    # min 1/2||d||^2 s.t. d1 + d2 = 2 -> (1, 1), dual = -1
    qp = DenseQp(H=np.eye(2), g=np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[2.0],
                 lb=[-np.inf, -np.inf], ub=[np.inf, np.inf])
    sol = solve_qp(qp)
    assert sol.status == "solved"
    assert_allclose(sol.primal, [1.0, 1.0], atol=1e-12)
    assert_allclose(sol.eq_duals, [-1.0], atol=1e-12)


def _random_qp(rng, n=None, m=None):
    n = n if n is not None else int(rng.integers(2, 7))
    m = m if m is not None else int(rng.integers(0, max(1, n - 1)))
    M = rng.standard_normal((n, n))
    H = M.T @ M + 0.1 * np.eye(n)
    g = rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    x_feas = rng.uniform(-1.0, 1.0, n)
    b = A @ x_feas
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    n_bounded = int(rng.integers(1, min(n, 4) + 1))
    which = rng.permutation(n)[:n_bounded]
    for i in which:
        kind = rng.integers(0, 3)
        if kind in (0, 2):
            lb[i] = x_feas[i] - rng.uniform(0.0, 1.5)
        if kind in (1, 2):
            ub[i] = x_feas[i] + rng.uniform(0.0, 1.5)
    return DenseQp(H=H, g=g, A_eq=A, b_eq=b, lb=lb, ub=ub)


def test_random_qps_match_enumeration_oracle():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(200):
        qp = _random_qp(rng)
        sol = solve_qp(qp)
        ref = brute_force_qp(qp)
        assert ref is not None, "oracle found no feasible KKT point"
        assert sol.status == "solved"
        assert qp.objective(sol.primal) <= ref[0] + 1e-8
        assert_allclose(sol.primal, ref[1], atol=1e-6)
        assert sol.kkt_error <= 1e-9
        checked += 1
    assert checked == 200


def test_row_scaling_invariance():
    rng = np.random.default_rng(77)
    for _ in range(20):
        qp = _random_qp(rng, n=4, m=2)
        scales = rng.uniform(0.5, 4.0, qp.m)
        qp2 = DenseQp(H=qp.H, g=qp.g, A_eq=qp.A_eq * scales[:, None],
                      b_eq=qp.b_eq * scales, lb=qp.lb, ub=qp.ub)
        s1 = solve_qp(qp)
        s2 = solve_qp(qp2)
        assert s1.status == s2.status == "solved"
        assert np.max(np.abs(s1.primal - s2.primal)) <= 1e-10
        assert_allclose(s2.eq_duals * scales, s1.eq_duals, atol=1e-8)


def test_warm_start_performs_no_changes():
    rng = np.random.default_rng(99)
    for _ in range(20):
        qp = _random_qp(rng)
        s1 = solve_qp(qp)
        assert s1.status == "solved"
        s2 = solve_qp(qp, warm_active_set=s1.active_set)
        assert s2.status == "solved"
        assert s2.n_changes == 0
        assert np.max(np.abs(s1.primal - s2.primal)) <= 1e-9


def test_solution_beats_random_feasible_points():
    rng = np.random.default_rng(111)
    qp = _random_qp(rng, n=5, m=2)
    sol = solve_qp(qp)
    assert sol.status == "solved"
    obj = qp.objective(sol.primal)
    free = np.flatnonzero(~np.isfinite(qp.lb) & ~np.isfinite(qp.ub))
    count = 0
    while count < 1000:
        d = rng.uniform(np.where(np.isfinite(qp.lb), qp.lb, -3.0),
                        np.where(np.isfinite(qp.ub), qp.ub, 3.0))
        # project onto the equality manifold through the free block only if
        # possible; otherwise sample the manifold directly
        if qp.m:
            corr, *_ = np.linalg.lstsq(qp.A_eq, qp.b_eq - qp.A_eq @ d,
                                       rcond=None)
            d = d + corr
            if np.any(d < qp.lb - 1e-9) or np.any(d > qp.ub + 1e-9):
                continue
        assert obj <= qp.objective(d) + 1e-10
        count += 1


def test_infeasible_equalities_detected():
    qp = DenseQp(H=np.eye(2), g=np.zeros(2),
                 A_eq=[[1.0, 0.0], [1.0, 0.0]], b_eq=[0.0, 1.0],
                 lb=[-1.0, -1.0], ub=[1.0, 1.0])
    sol = solve_qp(qp)
    assert sol.status == "infeasible"


def test_bound_infeasible_equalities_detected():
    # d1 + d2 = 4 cannot hold with both bounded by 1
    qp = DenseQp(H=np.eye(2), g=np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[4.0],
                 lb=[-1.0, -1.0], ub=[1.0, 1.0])
    sol = solve_qp(qp)
    assert sol.status == "infeasible"


def test_invalid_inputs_rejected():
    with pytest.raises(ValueError):
        DenseQp(H=[[1.0, 0.5], [0.0, 1.0]], g=[0.0, 0.0],
                A_eq=np.zeros((0, 2)), b_eq=[], lb=[-1, -1], ub=[1, 1])
    with pytest.raises(ValueError):
        DenseQp(H=np.eye(1), g=[0.0], A_eq=np.zeros((0, 1)), b_eq=[],
                lb=[2.0], ub=[1.0])
