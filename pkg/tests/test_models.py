import numpy as np
import pytest

from odem.models import (
    GLV_TRUE_A,
    GLV_TRUE_PARAMS,
    Family,
    drift,
    drift_hessian,
    drift_jacobian,
    drift_param_grad,
    glv_interaction,
    glv_model,
    jacobian_param_grad,
    lorenz_model,
    make_model,
    model_from_description,
    pack_params,
    unpack_params,
)

MODELS = [glv_model(), lorenz_model()]


def theta_for(model, rng):
    if model.family is Family.LORENZ:
        return np.array([30.0 + rng.normal()])
    return GLV_TRUE_PARAMS + 0.1 * rng.normal(size=3)


def fd_jac(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def test_lorenz_drift_known_value():
    f = drift(lorenz_model(), np.array([1.0, 2.0, 3.0]), np.array([28.0]))
    np.testing.assert_allclose(f, [10.0, 1.0 * (28 - 3) - 2.0, 2.0 - 8.0])


def test_glv_true_matrix_is_antisymmetric():
    A = glv_interaction(GLV_TRUE_PARAMS)
    np.testing.assert_array_equal(A, GLV_TRUE_A)
    np.testing.assert_array_equal(A, -A.T)


def test_glv_energy_neutral_direction():
    # antisymmetric A: sum_i f_i / x_i = x^T A 1 ... and x^T A x = 0 so sum_i f_i = x^T A x = 0
    x = np.array([0.7, 1.3, 2.1])
    f = drift(glv_model(), x, GLV_TRUE_PARAMS)
    assert abs(np.sum(f / x * x) - x @ GLV_TRUE_A @ x) < 1e-14
    assert abs(x @ GLV_TRUE_A @ x) < 1e-14


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.family.value)
def test_state_jacobian_matches_finite_differences(model, rng):
    for _ in range(10):
        x, th = rng.normal(size=3), theta_for(model, rng)
        np.testing.assert_allclose(drift_jacobian(model, x, th),
                                   fd_jac(lambda z: drift(model, z, th), x), rtol=1e-7, atol=1e-7)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.family.value)
def test_state_hessian_matches_finite_differences(model, rng):
    x, th = rng.normal(size=3), theta_for(model, rng)
    fd = fd_jac(lambda z: drift_jacobian(model, z, th), x)
    np.testing.assert_allclose(drift_hessian(model, th), fd, atol=1e-7)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.family.value)
def test_parameter_derivatives_match_finite_differences(model, rng):
    x, th = rng.normal(size=3), theta_for(model, rng)
    np.testing.assert_allclose(drift_param_grad(model, x, th),
                               fd_jac(lambda p: drift(model, x, p), th), atol=1e-7)
    np.testing.assert_allclose(jacobian_param_grad(model, x, th),
                               fd_jac(lambda p: drift_jacobian(model, x, p), th), atol=1e-7)


def test_pack_unpack_round_trip():
    m = glv_model()
    vals = {"a12": 0.3, "a13": -0.2, "a23": 0.3}
    assert unpack_params(m, pack_params(m, vals)) == vals
    with pytest.raises(KeyError):
        pack_params(m, {"a12": 1.0})
    with pytest.raises(ValueError):
        unpack_params(m, [1.0, 2.0])


def test_description_round_trip():
    for m in MODELS:
        assert model_from_description(m.describe()) == m
    assert make_model("glv") == glv_model()
    with pytest.raises(ValueError):
        make_model("duffing")
