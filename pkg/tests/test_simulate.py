import numpy as np
import pytest

from odem.models import GLV_TRUE_PARAMS, drift, glv_model
from odem.simulate import (
    DEFAULT_X0,
    NoiseSpec,
    integrate_gp,
    n_steps_for,
    observe,
    simulate_dataset,
    smooth_noise,
    smoothing_kernel,
)


def lag1(x):
    x = x - x.mean()
    return float(x[1:] @ x[:-1] / (x @ x))


def test_kernel_is_unit_sum_and_symmetric():
    k = smoothing_kernel(NoiseSpec(1.0), 0.01)
    assert k.size == 51
    assert k.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_array_equal(k, k[::-1])


def test_kernel_width_conventions():
    assert NoiseSpec(1.0).width_in_taps(0.01) == pytest.approx(np.sqrt(0.005) / 0.01)
    assert NoiseSpec(1.0, kernel_units="time").width_in_taps(0.01) == pytest.approx(0.5)
    assert NoiseSpec(1.0, kernel_std=3.0, kernel_units="taps").width_in_taps(0.01) == 3.0


def test_smoothed_noise_is_strongly_autocorrelated():
    w = smooth_noise(20_000, NoiseSpec(1.0, seed=5))
    assert lag1(w) > 0.9
    assert lag1(np.random.default_rng(5).standard_normal(20_000)) < 0.05


def test_unit_kernel_returns_white_noise():
    w = smooth_noise(100, NoiseSpec(2.0, kernel_size=1, seed=3))
    np.testing.assert_array_equal(w, 2.0 * np.random.default_rng(3).standard_normal(100))


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(1.0, kernel_size=50)
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)
    with pytest.raises(ValueError):
        NoiseSpec(1.0, kernel_units="seconds")
    with pytest.raises(ValueError, match="exceeds"):
        smooth_noise(20, NoiseSpec(1.0))


def test_noise_free_integration_is_forward_euler():
    x = integrate_gp(glv_model(), DEFAULT_X0, 1.0, 0.01, NoiseSpec(0.0))
    assert x.shape == (100, 3)
    np.testing.assert_array_equal(x[0], DEFAULT_X0)
    for t in (0, 17, 98):
        np.testing.assert_allclose(x[t + 1], x[t] + 0.01 * drift(glv_model(), x[t], GLV_TRUE_PARAMS),
                                   rtol=0, atol=1e-15)


def test_noise_enters_through_the_drift():
    spec = NoiseSpec(0.05, seed=1)
    noisy = integrate_gp(glv_model(), DEFAULT_X0, 1.0, 0.01, spec)
    clean = integrate_gp(glv_model(), DEFAULT_X0, 1.0, 0.01, NoiseSpec(0.0))
    assert 0 < np.abs(noisy - clean).max() < 0.05
    np.testing.assert_array_equal(noisy[0], clean[0])


def test_observe_adds_independent_channels():
    x = np.zeros((500, 3))
    y = observe(x, NoiseSpec(0.1, seed=2))
    assert np.corrcoef(y.T)[0, 1] < 0.3
    np.testing.assert_array_equal(observe(x, NoiseSpec(0.0)), x)


def test_dataset_shape_and_reproducibility():
    assert n_steps_for(100.0, 0.01) == 10_000
    a = simulate_dataset(T=1.0)
    b = simulate_dataset(T=1.0)
    assert a.n_steps == 100
    assert a == b
    np.testing.assert_allclose(a.times[:3], [0.0, 0.01, 0.02])
    assert a.provenance["obs_noise"]["seed"] == 2
    assert [t for t, _ in a.stream()] == list(range(100))


def test_glv_trajectory_stays_positive_and_oscillates():
    ds = simulate_dataset(T=50.0)
    assert ds.true_states.min() > 0
    assert np.ptp(ds.true_states, axis=0).min() > 0.2


def test_bad_time_grid():
    with pytest.raises(ValueError):
        integrate_gp(glv_model(), DEFAULT_X0, 1.0, 0.0, NoiseSpec(0.0))
    with pytest.raises(ValueError):
        integrate_gp(glv_model(), DEFAULT_X0, 0.001, 0.01, NoiseSpec(0.0))
