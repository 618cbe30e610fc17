"""Coupled system-optimizer dynamics and closed-loop rollouts with metrics.

One step advances the plant under the control extracted from the current
iterate, then lets the optimizer take a single real-time iteration at the
forward-simulated state. The order matters: the optimizer sees the state
the system will actually reach.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import ocp as ocp_mod
from . import optimizer as opt_mod
from . import plant as plant_mod
from .ocp import Iterate, OcpSpec
from .optimizer import RtiSettings

# absent metric values (trailing K_z / dV rows, K_z at zero error)
ABSENT = np.nan

# the converged oracle does not need the RTI regularization; dropping the
# shift reaches the same KKT point in far fewer iterations
def oracle_settings(settings: RtiSettings) -> RtiSettings:
    return replace(settings, lm_shift=0.0)


class RolloutOracleError(RuntimeError):
    """Oracle failed while evaluating metrics; carries the step index."""

    def __init__(self, step_index: int, cause: Exception):
        super().__init__(f"oracle failed at rollout step {step_index}: {cause}")
        self.step_index = step_index


@dataclass
class CoupledState:
    """Joint state (x, z) of plant and optimizer."""

    x: np.ndarray
    z: Iterate


@dataclass
class ClosedLoopTrace:
    """Per-step record of a closed-loop run.

    Arrays are indexed by step k = 0..n_steps. Forward-looking metrics
    (K_z, dV, dVso and the raw differences) are NaN on the final row and
    wherever they are undefined; V/E/V_so columns are NaN when the rollout
    ran without the oracle (or without a constants bundle for V_so).
    """

    T: float
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    V: np.ndarray
    E: np.ndarray
    V_so: np.ndarray
    K_z: np.ndarray
    dV_raw: np.ndarray
    dVso_raw: np.ndarray
    dV: np.ndarray
    dVso: np.ndarray
    z_norm: np.ndarray
    n_z: int = 0
    x0: np.ndarray = None

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1


def step(spec: OcpSpec, settings: RtiSettings, T: float,
         xi: CoupledState) -> CoupledState:
    """One step of the coupled dynamics."""
    if T <= 0.0:
        raise ValueError("T must be positive")
    u = opt_mod.extract_control(xi.z)
    x_next = plant_mod.simulate_zoh(spec.plant, xi.x, u, T,
                                    spec.rk4_substeps).final_state
    z_next = opt_mod.rti_step(spec, x_next, xi.z, settings)
    return CoupledState(x=x_next, z=z_next)


def rollout(spec: OcpSpec, settings: RtiSettings, T: float, x0, z0: Iterate,
            n_steps: int, with_oracle: bool = True,
            bundle=None) -> ClosedLoopTrace:
    """Roll the coupled loop for ``n_steps`` and record per-step metrics.

    With the oracle on, V(x_k) and E_k = ||z_k - z_bar(x_k)|| are evaluated
    by converging the optimizer at every visited state; V_so additionally
    needs a constants ``bundle`` carrying (q, beta). K_z is left absent
    whenever the current error is at numerical zero (<= 1e-12).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x0 = np.atleast_1d(np.asarray(x0, float))
    n_rows = n_steps + 1
    tr = ClosedLoopTrace(
        T=T,
        t=np.arange(n_rows) * T,
        x=np.empty((n_rows, spec.n_x)),
        u=np.empty((n_rows, spec.n_u)),
        V=np.full(n_rows, np.nan),
        E=np.full(n_rows, np.nan),
        V_so=np.full(n_rows, np.nan),
        K_z=np.full(n_rows, np.nan),
        dV_raw=np.full(n_rows, np.nan),
        dVso_raw=np.full(n_rows, np.nan),
        dV=np.full(n_rows, np.nan),
        dVso=np.full(n_rows, np.nan),
        z_norm=np.empty(n_rows),
        n_z=spec.dim_z,
        x0=x0.copy(),
    )

    osett = oracle_settings(settings)
    xi = CoupledState(x=x0.copy(), z=z0.copy())
    for k in range(n_rows):
        tr.x[k] = xi.x
        tr.u[k] = opt_mod.extract_control(xi.z)
        tr.z_norm[k] = float(np.linalg.norm(xi.z.to_vector()))
        if with_oracle:
            try:
                res = opt_mod.solve_converged(spec, xi.x, xi.z, osett)
            except opt_mod.OracleFailureError as exc:
                raise RolloutOracleError(k, exc) from exc
            tr.V[k] = res.V
            tr.E[k] = ocp_mod.iterate_error(xi.z, res.z_bar, settings.error_norm)
            if bundle is not None:
                tr.V_so[k] = res.V ** (1.0 / bundle.q) + bundle.beta * tr.E[k]
        if k < n_steps:
            xi = step(spec, settings, T, xi)

    if with_oracle:
        tr.dV_raw[:-1] = np.diff(tr.V)
        tr.dV[:-1] = tr.dV_raw[:-1] / T
        valid = tr.E[:-1] > 1e-12
        tr.K_z[:-1][valid] = tr.E[1:][valid] / tr.E[:-1][valid]
        if bundle is not None:
            tr.dVso_raw[:-1] = np.diff(tr.V_so)
            tr.dVso[:-1] = tr.dVso_raw[:-1] / T
    return tr


def initial_iterate(spec: OcpSpec, settings: RtiSettings, x0, offset_norm: float,
                    rng: np.random.Generator) -> Iterate:
    """Warm start for a rollout: the exact solution plus a random offset.

    The offset has the given norm and a direction drawn from ``rng``; a
    zero norm returns the exact solution itself.
    """
    res = opt_mod.solve_converged(spec, x0, Iterate.zeros(spec),
                                  oracle_settings(settings))
    z = res.z_bar.to_vector()
    if offset_norm > 0.0:
        d = rng.standard_normal(z.size)
        z = z + d * (offset_norm / np.linalg.norm(d))
    return Iterate.from_vector(spec, z)


CSV_METRICS = ["V", "E", "V_so", "K_z", "dV", "dVso"]


def csv_header(n_x: int, n_u: int) -> str:
    cols = (["k", "t"] + [f"x{i+1}" for i in range(n_x)]
            + [f"u{i+1}" for i in range(n_u)] + CSV_METRICS)
    return ",".join(cols)


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else f"{v:.17g}"


def write_trace_csv(path, trace: ClosedLoopTrace) -> None:
    """Write a trace with the fixed header; absent values become empty fields."""
    n_x = trace.x.shape[1]
    n_u = trace.u.shape[1]
    lines = [csv_header(n_x, n_u)]
    for k in range(len(trace.t)):
        row = [str(k), f"{trace.t[k]:.17g}"]
        row += [f"{v:.17g}" for v in trace.x[k]]
        row += [f"{v:.17g}" for v in trace.u[k]]
        row += [_fmt(trace.V[k]), _fmt(trace.E[k]), _fmt(trace.V_so[k]),
                _fmt(trace.K_z[k]), _fmt(trace.dV[k]), _fmt(trace.dVso[k])]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace_csv(path) -> ClosedLoopTrace:
    """Parse a trace CSV written by :func:`write_trace_csv`."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    n_x = sum(1 for c in header if c.startswith("x") and c[1:].isdigit())
    n_u = sum(1 for c in header if c.startswith("u") and c[1:].isdigit())
    K = len(rows)

    def parse(tok: str) -> float:
        return np.nan if tok == "" else float(tok)

    data = np.array([[parse(tok) for tok in r] for r in rows])
    t = data[:, 1]
    T = float(t[1] - t[0]) if K > 1 else 0.0
    o = 2
    x = data[:, o:o + n_x]; o += n_x
    u = data[:, o:o + n_u]; o += n_u
    V, E, V_so, K_z, dV, dVso = (data[:, o + i] for i in range(6))
    return ClosedLoopTrace(T=T, t=t, x=x, u=u, V=V, E=E, V_so=V_so, K_z=K_z,
                           dV_raw=dV * T, dVso_raw=dVso * T, dV=dV, dVso=dVso,
                           z_norm=np.full(K, np.nan), x0=x[0].copy())
