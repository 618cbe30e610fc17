import numpy as np
import pytest

from rticert import config, constants, coupled


def pytest_addoption(parser):
    parser.addoption("--regen-golden", action="store_true", default=False,
                     help="rewrite the golden fixture files")


@pytest.fixture(scope="session")
def regen_golden(request):
    return request.config.getoption("--regen-golden")


@pytest.fixture(scope="session")
def chen_spec():
    return config.default_chen_config().build_spec()


@pytest.fixture(scope="session")
def chen_settings():
    return config.default_chen_config().build_settings()


@pytest.fixture(scope="session")
def fast_scenario():
    """Reduced-scale scenario shared by the cross-module tests."""
    cfg = config.default_chen_config()
    cfg.estimation.rollout_steps = 200
    cfg.estimation.probe_states = 10
    cfg.estimation.lipschitz_samples = 500
    cfg.estimation.n_random_pairs = 4000
    cfg.rollout_steps = 300
    cfg.initial_conditions = cfg.initial_conditions[:3]
    return cfg


@pytest.fixture(scope="session")
def fast_bundle(fast_scenario):
    """Estimated constants bundle at reduced scale (deterministic)."""
    cfg = fast_scenario
    spec = cfg.build_spec()
    settings = cfg.build_settings()
    rng = np.random.default_rng(cfg.seed)
    bundle, dataset = constants.estimate_bundle(
        spec, settings, cfg.sampling_time, cfg.initial_conditions,
        cfg.estimation, rng)
    return bundle, dataset


@pytest.fixture(scope="session")
def fast_trace(fast_scenario, fast_bundle):
    """One audited closed-loop trace at reduced scale."""
    cfg = fast_scenario
    bundle, _ = fast_bundle
    spec = cfg.build_spec()
    settings = cfg.build_settings()
    rng = np.random.default_rng(cfg.seed + 1)
    z0 = coupled.initial_iterate(spec, settings, cfg.initial_conditions[0],
                                 cfg.z0_offset_frac * bundle.r_tilde_z, rng)
    return coupled.rollout(spec, settings, cfg.sampling_time,
                           cfg.initial_conditions[0], z0, cfg.rollout_steps,
                           with_oracle=True, bundle=bundle)
