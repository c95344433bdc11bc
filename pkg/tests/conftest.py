import numpy as np
import pytest

from odem.filtering import OdemConfig, ParamPrior, init_belief
from odem.models import glv_model, lorenz_model
from odem.simulate import simulate_dataset
from odem.vfe import GeneralisedModel

MODELS = {"glv": glv_model, "lorenz": lorenz_model}


def random_point(family: str, k_x: int, rng):
    """A random belief and generalised observation away from any special point."""
    model = MODELS[family]()
    gm = GeneralisedModel.build(model, k_x)
    cfg = OdemConfig(k_x=k_x, C=float(rng.choice([0.1, 1.0, 10.0])))
    b = init_belief(gm, cfg, ParamPrior.default(model))
    b.mu_x = rng.normal(size=b.mu_x.shape)
    scale = 0.1 if family == "glv" else 2.0
    b.mu_theta = b.mu_theta + rng.normal(scale=scale, size=b.mu_theta.shape)
    b.mu_lambda = b.mu_lambda + rng.normal(scale=0.5, size=b.mu_lambda.shape)
    y = rng.normal(size=gm.k_y * model.d_y)
    return gm, b, y


@pytest.fixture(scope="session")
def short_ds():
    return simulate_dataset(T=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
