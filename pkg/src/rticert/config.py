"""Scenario configuration: YAML schema, validation, pinned defaults.

The file format is a nested-section YAML document; the full schema with
defaults is shipped in ``configs/chen.yaml``. Validation rejects unknown
keys and reports the dotted path of the offending field.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import ocp as ocp_mod
from . import plant as plant_mod
from .constants import EstimationSettings
from .ocp import OcpSpec
from .optimizer import RtiSettings


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ScenarioConfig:
    plant_name: str = "chen"
    plant_params: dict = field(default_factory=lambda: {"mu_chen": 0.5})
    shooting_nodes: int = 5
    horizon: float = 0.3
    state_weight: float = 0.1
    input_weight: float = 0.1
    u_min: list = field(default_factory=lambda: [-2.0])
    u_max: list = field(default_factory=lambda: [2.0])
    rk4_substeps: int = 10
    sampling_time: float = 0.0012
    lm_shift: float = 1e-4
    kkt_tol: float = 1e-10
    max_oracle_iters: int = 200
    error_norm: str = "full"
    initial_conditions: list = field(default_factory=list)
    rollout_steps: int = 2500
    z0_offset_frac: float = 0.5
    z0_offset_abs: float = None
    estimation: EstimationSettings = field(default_factory=EstimationSettings)
    output_dir: str = "out"
    seed: int = 0

    def build_spec(self) -> OcpSpec:
        if self.plant_name != "chen":
            raise ConfigError("plant.name", f"unknown plant {self.plant_name!r}")
        model = plant_mod.chen_model(**self.plant_params)
        A_c, B_c = plant_mod.evaluate_jacobians(model, np.zeros(model.n_x),
                                                np.zeros(model.n_u))
        T_d = self.horizon / self.shooting_nodes
        A, B = ocp_mod.discretize_linearization(A_c, B_c, T_d)
        Q = self.state_weight * np.eye(model.n_x)
        R = self.input_weight * np.eye(model.n_u)
        P = ocp_mod.dare_terminal_weight(A, B, Q, R)
        return OcpSpec(plant=model, N=self.shooting_nodes, T_f=self.horizon,
                       Q=Q, R=R, P=P, u_lo=np.asarray(self.u_min, float),
                       u_hi=np.asarray(self.u_max, float),
                       rk4_substeps=self.rk4_substeps)

    def build_settings(self) -> RtiSettings:
        return RtiSettings(lm_shift=self.lm_shift, kkt_tol=self.kkt_tol,
                           max_oracle_iters=self.max_oracle_iters,
                           error_norm=self.error_norm)


def default_chen_config() -> ScenarioConfig:
    """Pinned defaults of the end-to-end benchmark scenario."""
    radius = 0.02
    ics = [[radius * math.cos(k * math.pi / 3.0),
            radius * math.sin(k * math.pi / 3.0)] for k in range(6)]
    return ScenarioConfig(initial_conditions=ics, seed=20260810)


def _check(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(path, message)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


_SCHEMA = {
    "plant": {"name", "mu_chen"},
    "ocp": {"shooting_nodes", "horizon", "state_weight", "input_weight",
            "u_min", "u_max", "rk4_substeps"},
    "rti": {"lm_shift", "kkt_tol", "max_oracle_iters", "error_norm"},
    "simulation": {"initial_conditions", "rollout_steps", "z0_offset_frac",
                   "z0_offset_abs"},
    "estimation": {"rollout_steps", "random_pairs", "probe_states",
                   "probe_radii", "probe_steps", "lipschitz_samples",
                   "inflation_rho", "slack", "t1_horizon", "r_z_floor_frac"},
}
_TOP_SCALARS = {"sampling_time", "output_dir", "seed"}


def parse_config(data: dict) -> ScenarioConfig:
    """Validate a parsed YAML document and build the scenario."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    for key in data:
        _check(key in _SCHEMA or key in _TOP_SCALARS, key, "unknown key")
    for section, allowed in _SCHEMA.items():
        sub = data.get(section, {})
        _check(isinstance(sub, dict), section, "must be a mapping")
        for key in sub:
            _check(key in allowed, f"{section}.{key}", "unknown key")

    cfg = default_chen_config()

    plant = data.get("plant", {})
    if "name" in plant:
        _check(plant["name"] == "chen", "plant.name",
               f"unknown plant {plant['name']!r}")
        cfg.plant_name = plant["name"]
    if "mu_chen" in plant:
        _check(_is_num(plant["mu_chen"]), "plant.mu_chen", "must be a number")
        cfg.plant_params = {"mu_chen": float(plant["mu_chen"])}

    o = data.get("ocp", {})
    if "shooting_nodes" in o:
        _check(isinstance(o["shooting_nodes"], int) and o["shooting_nodes"] >= 1,
               "ocp.shooting_nodes", "must be an integer >= 1")
        cfg.shooting_nodes = o["shooting_nodes"]
    if "horizon" in o:
        _check(_is_num(o["horizon"]) and o["horizon"] > 0,
               "ocp.horizon", "must be a positive number")
        cfg.horizon = float(o["horizon"])
    for key, attr in (("state_weight", "state_weight"),
                      ("input_weight", "input_weight")):
        if key in o:
            _check(_is_num(o[key]) and o[key] > 0, f"ocp.{key}",
                   "must be a positive number")
            setattr(cfg, attr, float(o[key]))
    for key in ("u_min", "u_max"):
        if key in o:
            v = o[key]
            _check(isinstance(v, list) and all(_is_num(e) for e in v),
                   f"ocp.{key}", "must be a list of numbers")
            setattr(cfg, key, [float(e) for e in v])
    _check(len(cfg.u_min) == len(cfg.u_max), "ocp.u_min",
           "u_min and u_max must have equal length")
    _check(all(lo < hi for lo, hi in zip(cfg.u_min, cfg.u_max)),
           "ocp.u_min", "must be strictly below u_max componentwise")
    if "rk4_substeps" in o:
        _check(isinstance(o["rk4_substeps"], int) and o["rk4_substeps"] >= 1,
               "ocp.rk4_substeps", "must be an integer >= 1")
        cfg.rk4_substeps = o["rk4_substeps"]

    if "sampling_time" in data:
        v = data["sampling_time"]
        _check(_is_num(v) and v > 0, "sampling_time",
               "must be a positive number")
        cfg.sampling_time = float(v)

    r = data.get("rti", {})
    if "lm_shift" in r:
        _check(_is_num(r["lm_shift"]) and r["lm_shift"] >= 0, "rti.lm_shift",
               "must be a nonnegative number")
        cfg.lm_shift = float(r["lm_shift"])
    if "kkt_tol" in r:
        _check(_is_num(r["kkt_tol"]) and r["kkt_tol"] > 0, "rti.kkt_tol",
               "must be a positive number")
        cfg.kkt_tol = float(r["kkt_tol"])
    if "max_oracle_iters" in r:
        _check(isinstance(r["max_oracle_iters"], int)
               and r["max_oracle_iters"] >= 1,
               "rti.max_oracle_iters", "must be an integer >= 1")
        cfg.max_oracle_iters = r["max_oracle_iters"]
    if "error_norm" in r:
        _check(r["error_norm"] in ("full", "primal"), "rti.error_norm",
               "must be 'full' or 'primal'")
        cfg.error_norm = r["error_norm"]

    s = data.get("simulation", {})
    if "initial_conditions" in s:
        ics = s["initial_conditions"]
        _check(isinstance(ics, list) and len(ics) >= 1,
               "simulation.initial_conditions", "must be a non-empty list")
        for i, ic in enumerate(ics):
            _check(isinstance(ic, list) and all(_is_num(e) for e in ic),
                   f"simulation.initial_conditions[{i}]",
                   "must be a list of numbers")
        cfg.initial_conditions = [[float(e) for e in ic] for ic in ics]
    if "rollout_steps" in s:
        _check(isinstance(s["rollout_steps"], int) and s["rollout_steps"] >= 1,
               "simulation.rollout_steps", "must be an integer >= 1")
        cfg.rollout_steps = s["rollout_steps"]
    if "z0_offset_frac" in s:
        _check(_is_num(s["z0_offset_frac"]) and s["z0_offset_frac"] >= 0,
               "simulation.z0_offset_frac", "must be a nonnegative number")
        cfg.z0_offset_frac = float(s["z0_offset_frac"])
    if "z0_offset_abs" in s and s["z0_offset_abs"] is not None:
        _check(_is_num(s["z0_offset_abs"]) and s["z0_offset_abs"] >= 0,
               "simulation.z0_offset_abs", "must be a nonnegative number")
        cfg.z0_offset_abs = float(s["z0_offset_abs"])

    e = data.get("estimation", {})
    est = cfg.estimation
    int_keys = {"rollout_steps": "rollout_steps", "random_pairs": "n_random_pairs",
                "probe_states": "probe_states", "probe_steps": "n_probe",
                "lipschitz_samples": "lipschitz_samples"}
    for key, attr in int_keys.items():
        if key in e:
            _check(isinstance(e[key], int) and e[key] >= 1,
                   f"estimation.{key}", "must be an integer >= 1")
            setattr(est, attr, e[key])
    if "probe_radii" in e:
        v = e["probe_radii"]
        _check(isinstance(v, list) and len(v) >= 1
               and all(_is_num(x) and x > 0 for x in v),
               "estimation.probe_radii", "must be a list of positive numbers")
        est.probe_radii = tuple(float(x) for x in v)
    float_keys = {"inflation_rho": "inflation_rho", "slack": "slack",
                  "t1_horizon": "t1_horizon", "r_z_floor_frac": "r_z_floor_frac"}
    for key, attr in float_keys.items():
        if key in e:
            _check(_is_num(e[key]) and e[key] > 0, f"estimation.{key}",
                   "must be a positive number")
            setattr(est, attr, float(e[key]))
    _check(est.slack >= 1.0, "estimation.slack", "must be >= 1")

    if "output_dir" in data:
        _check(isinstance(data["output_dir"], str) and data["output_dir"],
               "output_dir", "must be a non-empty string")
        cfg.output_dir = data["output_dir"]
    _check("seed" in data, "seed", "is required (reproducibility)")
    _check(isinstance(data["seed"], int), "seed", "must be an integer")
    cfg.seed = data["seed"]

    n_u = len(cfg.u_min)
    nx_expected = 2  # chen
    for i, ic in enumerate(cfg.initial_conditions):
        _check(len(ic) == nx_expected, f"simulation.initial_conditions[{i}]",
               f"must have {nx_expected} components")
    _check(n_u == 1, "ocp.u_min", "chen plant has one input")
    return cfg


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    return parse_config(data if data is not None else {})
