"""Stability certificates built on the auxiliary positive linear system.

The coupled evolution of (V(x)^{1/q}, ||z - z_bar(x)||) is upper-bounded by
a 2x2 positive linear system

    A_a = [[(1 - T a_bar)^{1/q}, T mu_hat],
           [T gamma_hat,         kappa  ]].

A strictly positive vector w_hat with (A_a' - I) w_hat < 0 yields a linear
Lyapunov function for the auxiliary dynamics, and w_hat' (V^{1/q}, E) one
for the combined system-optimizer dynamics.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import ConstantsBundle
from .coupled import ClosedLoopTrace


class DegenerateCouplingError(RuntimeError):
    """gamma_hat = 0: the optimizer error does not feed back into the state."""


@dataclass
class AuxSystem:
    """Auxiliary 2x2 positive system at a given sampling time."""

    A_a: np.ndarray
    T: float
    bundle: ConstantsBundle


@dataclass
class Certificate:
    stable: bool
    condition_value: float
    beta: float
    w_hat: np.ndarray
    d_hat: float
    T: float
    T5: float
    spectral_radius: float
    notes: list = field(default_factory=list)


def compute_beta(bundle) -> float:
    """Error weight beta = a_bar / (2 q gamma_hat) of the combined function."""
    if bundle.gamma_hat == 0.0:
        raise DegenerateCouplingError(
            "gamma_hat is zero; the auxiliary system is triangular and "
            "stable for any T with T*a_bar < 1 and kappa < 1")
    return bundle.a_bar / (2.0 * bundle.q * bundle.gamma_hat)


def build_aux_system(bundle, T: float) -> AuxSystem:
    """Assemble A_a; requires T * a_bar <= 1 so all entries are real and >= 0."""
    if T <= 0.0:
        raise ValueError("T must be positive")
    if T * bundle.a_bar > 1.0:
        raise ValueError(f"T * a_bar = {T * bundle.a_bar:.4g} exceeds one; "
                         "auxiliary system undefined")
    A_a = np.array([
        [(1.0 - T * bundle.a_bar) ** (1.0 / bundle.q), T * bundle.mu_hat],
        [T * bundle.gamma_hat, bundle.kappa],
    ])
    return AuxSystem(A_a=A_a, T=T, bundle=bundle)


def check_positive_system(A, w_hat):
    """Largest margin d_hat with (A' - I) w_hat <= -d_hat, any dimension.

    Returns (ok, d_hat) with ok = (d_hat > 0).
    """
    A = np.atleast_2d(np.asarray(A, float))
    w_hat = np.atleast_1d(np.asarray(w_hat, float))
    if np.any(A < 0.0):
        raise ValueError("A must be nonnegative")
    if np.any(w_hat <= 0.0):
        raise ValueError("w_hat must be strictly positive")
    d_hat = -float(np.max((A.T - np.eye(A.shape[0])) @ w_hat))
    return d_hat > 0.0, d_hat


def power_iteration_radius(A, n_iter: int = 1000) -> float:
    """Perron root estimate of a nonnegative matrix."""
    A = np.atleast_2d(np.asarray(A, float))
    v = np.ones(A.shape[0])
    lam = 0.0
    for _ in range(n_iter):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        lam = nw / np.linalg.norm(v)
        v = w / nw
    return float(lam)


@dataclass
class WHatResult:
    feasible: bool
    w_hat: np.ndarray = None
    d_hat: float = np.nan
    spectral_radius: float = np.nan


def find_w_hat(A) -> WHatResult:
    """Strictly positive w_hat certifying the positive system, if one exists.

    n = 2 uses the closed-form feasibility window for w_hat = (1, beta);
    larger systems solve the linear program max d s.t. (A' - I) w <= -d
    with 1 <= w <= M. Infeasibility reports the spectral radius estimate.
    """
    A = np.atleast_2d(np.asarray(A, float))
    if np.any(A < 0.0):
        raise ValueError("A must be nonnegative")
    n = A.shape[0]
    if n == 2:
        a11, a12 = A[0]
        a21, a22 = A[1]
        feasible = (a11 < 1.0) and (a22 < 1.0) \
            and (a12 * a21 < (1.0 - a11) * (1.0 - a22))
        if not feasible:
            return WHatResult(False, spectral_radius=power_iteration_radius(A))
        lo = a12 / (1.0 - a22)
        if a21 > 0.0:
            hi = (1.0 - a11) / a21
            beta = 0.5 * (lo + hi)
        else:
            beta = 1.0 if lo == 0.0 else 2.0 * lo
        w_hat = np.array([1.0, beta])
        ok, d_hat = check_positive_system(A, w_hat)
        return WHatResult(ok, w_hat=w_hat, d_hat=d_hat)

    from scipy.optimize import linprog
    # variables (w, d): maximize d  s.t. (A' - I) w + d 1 <= 0, 1 <= w <= M
    M = 1e6
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A.T - np.eye(n), np.ones((n, 1))])
    b_ub = np.zeros(n)
    bounds = [(1.0, M)] * n + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success or res.x[-1] <= 0.0:
        return WHatResult(False, spectral_radius=power_iteration_radius(A))
    w_hat = res.x[:n] / res.x[0]
    ok, d_hat = check_positive_system(A, w_hat)
    return WHatResult(ok, w_hat=w_hat, d_hat=d_hat)


def stability_condition(bundle, T: float) -> Certificate:
    """Certificate of the sampling-time stability condition at T.

    stable <=> T^2 mu_hat gamma_hat - (1 - kappa)(1 - (1 - T a_bar)^{1/q}) < 0.
    The verdict is cross-validated against the spectral radius of A_a and
    the feasibility search for w_hat; any disagreement off the condition
    boundary is a hard internal error.
    """
    aux = build_aux_system(bundle, T)
    cond = T * T * bundle.mu_hat * bundle.gamma_hat \
        - (1.0 - bundle.kappa) * (1.0 - (1.0 - T * bundle.a_bar) ** (1.0 / bundle.q))
    stable = cond < 0.0
    notes = []

    if bundle.gamma_hat == 0.0:
        beta = math.nan
        notes.append("gamma_hat = 0: decoupled (triangular) auxiliary system; "
                     "stable whenever kappa < 1 and T*a_bar <= 1, "
                     "beta undefined")
        w = find_w_hat(aux.A_a)
        w_hat = w.w_hat if w.feasible else np.array([1.0, 1.0])
        d_hat = w.d_hat if w.feasible else np.nan
        T5 = math.inf
    else:
        beta = compute_beta(bundle)
        w_hat = np.array([1.0, beta])
        _, d_hat = check_positive_system(aux.A_a, w_hat)
        T5 = beta * (1.0 - bundle.kappa) / bundle.mu_hat \
            if bundle.mu_hat > 0.0 else math.inf
        if stable and d_hat <= 0.0:
            # the T-independent beta certifies only T <= T5; beyond it a
            # feasible w_hat still exists while the system is stable
            w = find_w_hat(aux.A_a)
            if w.feasible:
                w_hat = w.w_hat
                d_hat = w.d_hat
                notes.append(f"T = {T:.6g} exceeds T5 = {T5:.6g}; w_hat from "
                             "feasibility search instead of (1, beta)")

    rho = float(np.max(np.abs(np.linalg.eigvals(aux.A_a))))
    w_check = find_w_hat(aux.A_a)
    if abs(cond) > 1e-12:
        if stable != (rho < 1.0) or stable != w_check.feasible:
            raise AssertionError(
                f"internal disagreement: condition_value={cond:.3e}, "
                f"rho={rho:.12f}, w_hat feasible={w_check.feasible}")
    else:
        notes.append("condition value on the stability boundary; "
                     "equivalence not asserted")

    return Certificate(stable=stable, condition_value=float(cond), beta=beta,
                       w_hat=w_hat, d_hat=float(d_hat), T=T, T5=float(T5),
                       spectral_radius=rho, notes=notes)


def v_so(bundle, V: float, E: float) -> float:
    """Combined Lyapunov function value V^{1/q} + beta * E."""
    if V < 0.0 or E < 0.0:
        raise ValueError("V and E must be nonnegative")
    return V ** (1.0 / bundle.q) + compute_beta(bundle) * E


def simulate_aux(bundle, T: float, nu0: float, eps0: float,
                 n_steps: int) -> np.ndarray:
    """Trajectory of the auxiliary dynamics from (nu0, eps0); shape (n+1, 2)."""
    aux = build_aux_system(bundle, T)
    out = np.empty((n_steps + 1, 2))
    out[0] = (nu0, eps0)
    for k in range(n_steps):
        out[k + 1] = aux.A_a @ out[k]
    return out


def sandwich_weights(bundle, n_x: int, n_z: int):
    """Norm-equivalence constants (w1, w2, w3) of the combined function.

    w1 * ||xi|| <= V_so(xi) <= w2 * ||xi||, and the guaranteed decrease per
    step is w3 * ||xi||; the case splits follow the sign of a1^{1/q}
    against beta*sigma and sigma. w3 scales with d_hat of the certificate,
    so it is returned as a factor to be multiplied by d_hat.
    """
    beta = compute_beta(bundle)
    a1q = bundle.a1 ** (1.0 / bundle.q)
    sigma = bundle.sigma
    if a1q - beta * sigma > 0.0:
        w1 = min((a1q - beta * sigma) / math.sqrt(n_x), beta / math.sqrt(n_z))
    else:
        w1 = min(a1q / (2.0 * math.sqrt(n_x)),
                 a1q / (2.0 * sigma * math.sqrt(n_z)))
    w2 = max(bundle.a2 ** (1.0 / bundle.q) + sigma * beta, beta) \
        * math.sqrt(n_x + n_z)
    if a1q - sigma > 0.0:
        w3_factor = min((a1q - sigma) / math.sqrt(n_x), 1.0 / math.sqrt(n_z))
    else:
        w3_factor = 0.5 * a1q * min(1.0 / math.sqrt(n_x),
                                    1.0 / (sigma * math.sqrt(n_z)))
    return w1, w2, w3_factor


@dataclass
class TraceAudit:
    """Per-step verdicts of the recorded-trace checks (True = violated)."""

    n_steps: int
    sigma_membership: np.ndarray
    value_recursion: np.ndarray
    error_recursion: np.ndarray
    linear_envelope: np.ndarray
    vso_increase: np.ndarray
    vso_margin: np.ndarray
    d_hat: float
    w3: float
    slack: float
    notes: list = field(default_factory=list)

    @property
    def counts(self) -> dict:
        return {
            "sigma_membership": int(self.sigma_membership.sum()),
            "value_recursion": int(self.value_recursion.sum()),
            "error_recursion": int(self.error_recursion.sum()),
            "linear_envelope": int(self.linear_envelope.sum()),
            "vso_increase": int(self.vso_increase.sum()),
            "vso_margin": int(self.vso_margin.sum()),
        }

    @property
    def clean(self) -> bool:
        return all(v == 0 for v in self.counts.values())

    def violated_steps(self) -> dict:
        return {
            name: np.flatnonzero(getattr(self, name)).tolist()
            for name in ("sigma_membership", "value_recursion",
                         "error_recursion", "linear_envelope",
                         "vso_increase", "vso_margin")
            if getattr(self, name).any()
        }


def audit_trace(bundle, trace: ClosedLoopTrace, slack: float = 1.05) -> TraceAudit:
    """Check every recorded transition against the certified inequalities.

    The ``slack`` factor loosens each bound to absorb the sampling error of
    the empirical constants. Requires a trace recorded with the oracle on.
    """
    if not np.all(np.isfinite(trace.V)):
        raise ValueError("trace must be recorded with the oracle enabled")
    T = trace.T
    q = bundle.q
    V = trace.V
    E = trace.E
    K = len(V) - 1
    Vq = V ** (1.0 / q)
    beta = compute_beta(bundle)
    V_so = Vq + beta * E

    if trace.n_z < 1:
        raise ValueError("trace does not record the iterate dimension n_z")
    cert = stability_condition(bundle, T)
    w1, w2, w3_factor = sandwich_weights(bundle, trace.x.shape[1], trace.n_z)
    w3 = cert.d_hat * w3_factor

    membership = (V[:-1] > bundle.V_bar * slack) \
        | (E[:-1] > bundle.r_tilde_z * slack)
    value_rec = V[1:] > slack * ((1.0 - T * bundle.a_bar) * V[:-1]
                                 + T * bundle.mu * E[:-1])
    error_rec = E[1:] > slack * (T * bundle.gamma_hat * Vq[:-1]
                                 + bundle.kappa * E[:-1])
    envelope = Vq[1:] > slack * ((1.0 - T * bundle.a_bar) ** (1.0 / q) * Vq[:-1]
                                 + T * bundle.mu_hat * E[:-1])
    increase = np.diff(V_so) > 0.0
    xi_norm = np.sqrt(np.linalg.norm(trace.x[:-1], axis=1) ** 2
                      + trace.z_norm[:-1] ** 2)
    margin = np.diff(V_so) > -(w3 / slack) * xi_norm

    notes = list(cert.notes)
    if not cert.stable:
        notes.append(f"certificate at T = {T:.6g} is not stable; margin "
                     "checks are vacuous")
    return TraceAudit(n_steps=K, sigma_membership=membership,
                      value_recursion=value_rec, error_recursion=error_rec,
                      linear_envelope=envelope, vso_increase=increase,
                      vso_margin=margin, d_hat=cert.d_hat, w3=w3,
                      slack=slack, notes=notes)
