"""Generative process: GLV trajectories with smooth state and observation noise."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import GLV_TRUE_PARAMS, ModelSpec, drift, glv_model

DEFAULT_X0 = (1.0, 1.5, 0.8)


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian white noise smoothed by a truncated, unit-sum Gaussian kernel.

    ``kernel_units`` fixes how ``kernel_std`` maps to taps:

    * ``"variance"``: ``kernel_std`` is the kernel variance in time units
      squared, so the width is ``sqrt(kernel_std) / dt`` taps (default;
      0.005 at dt=0.01 gives ~7 taps, well inside a 51-tap support).
    * ``"time"``: ``kernel_std`` is a standard deviation in time units,
      ``kernel_std / dt`` taps.
    * ``"taps"``: ``kernel_std`` is already in taps.
    """

    white_std: float
    kernel_size: int = 51
    kernel_std: float = 0.005
    seed: int = 0
    kernel_units: str = "variance"

    def __post_init__(self):
        if self.white_std < 0:
            raise ValueError(f"white_std must be >= 0, got {self.white_std}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if not self.kernel_std > 0:
            raise ValueError(f"kernel_std must be positive, got {self.kernel_std}")
        if self.kernel_units not in ("variance", "time", "taps"):
            raise ValueError(f"unknown kernel_units {self.kernel_units!r}")

    def width_in_taps(self, dt: float) -> float:
        if self.kernel_units == "variance":
            return float(np.sqrt(self.kernel_std) / dt)
        if self.kernel_units == "time":
            return self.kernel_std / dt
        return float(self.kernel_std)

    def to_dict(self) -> dict:
        return {
            "white_std": self.white_std,
            "kernel_size": self.kernel_size,
            "kernel_std": self.kernel_std,
            "seed": self.seed,
            "kernel_units": self.kernel_units,
        }


STATE_NOISE = NoiseSpec(white_std=0.05, seed=1)
OBS_NOISE = NoiseSpec(white_std=0.1, seed=2)


def smoothing_kernel(spec: NoiseSpec, dt: float) -> np.ndarray:
    half = spec.kernel_size // 2
    taps = np.arange(-half, half + 1, dtype=float)
    width = spec.width_in_taps(dt)
    k = np.exp(-0.5 * (taps / width) ** 2)
    return k / k.sum()


def smooth_noise(n_steps: int, spec: NoiseSpec, dt: float = 0.01, rng=None) -> np.ndarray:
    """One channel of smoothed white noise, same length as requested.

    Edges use symmetric padding. ``rng`` overrides the generator seeded from
    ``spec.seed``.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if spec.kernel_size > n_steps:
        raise ValueError(
            f"kernel_size {spec.kernel_size} exceeds series length {n_steps}; dataset too short to smooth"
        )
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    white = spec.white_std * rng.standard_normal(n_steps)
    if spec.kernel_size == 1:
        return white
    half = spec.kernel_size // 2
    padded = np.pad(white, half, mode="symmetric")
    return np.convolve(padded, smoothing_kernel(spec, dt), mode="valid")


def smooth_noise_channels(n_steps: int, n_channels: int, spec: NoiseSpec, dt: float) -> np.ndarray:
    """Independent channels from one seeded generator, shape ``(n_steps, n_channels)``."""
    rng = np.random.default_rng(spec.seed)
    return np.column_stack([smooth_noise(n_steps, spec, dt, rng) for _ in range(n_channels)])


def n_steps_for(T: float, dt: float) -> int:
    return int(round(T / dt))


def integrate_gp(model: ModelSpec, x0, T: float, dt: float, state_noise: NoiseSpec,
                 theta=None) -> np.ndarray:
    """Forward-Euler trajectory with smooth noise added to the drift.

    Returns ``N = round(T / dt)`` rows starting with ``x0``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if T < dt:
        raise ValueError(f"T={T} is shorter than one step dt={dt}")
    theta = GLV_TRUE_PARAMS if theta is None else np.asarray(theta, dtype=float)
    n = n_steps_for(T, dt)
    if state_noise.white_std == 0 or n < state_noise.kernel_size:
        if state_noise.white_std != 0:
            raise ValueError(
                f"kernel_size {state_noise.kernel_size} exceeds series length {n}; dataset too short to smooth"
            )
        w = np.zeros((n, model.d_x))
    else:
        w = smooth_noise_channels(n, model.d_x, state_noise, dt)
    x = np.empty((n, model.d_x))
    x[0] = x0
    for t in range(n - 1):
        x[t + 1] = x[t] + dt * (drift(model, x[t], theta) + w[t])
        if not np.all(np.isfinite(x[t + 1])):
            raise FloatingPointError(f"non-finite state at step {t + 1}")
    return x


def observe(true_states, obs_noise: NoiseSpec, dt: float = 0.01) -> np.ndarray:
    x = np.asarray(true_states, dtype=float)
    if obs_noise.white_std == 0:
        return x.copy()
    return x + smooth_noise_channels(x.shape[0], x.shape[1], obs_noise, dt)


@dataclass
class Dataset:
    dt: float
    times: np.ndarray
    true_states: np.ndarray
    observations: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times)

    def stream(self):
        """Yield ``(t, y_t)`` once per observation, in order."""
        for t in range(self.n_steps):
            yield t, self.observations[t]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.dt == other.dt
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.true_states, other.true_states)
            and np.array_equal(self.observations, other.observations)
            and self.provenance == other.provenance
        )


def simulate_dataset(T: float = 100.0, dt: float = 0.01, x0=DEFAULT_X0,
                     state_noise: NoiseSpec = STATE_NOISE, obs_noise: NoiseSpec = OBS_NOISE,
                     model: ModelSpec | None = None, theta=None) -> Dataset:
    """The GLV generative process sampled on a uniform grid."""
    model = model or glv_model()
    theta = GLV_TRUE_PARAMS if theta is None else np.asarray(theta, dtype=float)
    x = integrate_gp(model, x0, T, dt, state_noise, theta)
    y = observe(x, obs_noise, dt)
    n = x.shape[0]
    provenance = {
        "model": model.describe(),
        "theta": [float(v) for v in theta],
        "x0": [float(v) for v in x0],
        "T": float(T),
        "state_noise": state_noise.to_dict(),
        "obs_noise": obs_noise.to_dict(),
    }
    return Dataset(dt=dt, times=np.arange(n) * dt, true_states=x, observations=y, provenance=provenance)
