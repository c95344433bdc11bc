"""Generative-model families: Lorenz and antisymmetric generalised Lotka-Volterra.

Each family supplies a drift ``f(x, theta)`` with analytic first and second
derivatives. Both drifts are quadratic in the state and linear in the
learnable parameters, so the second state derivative is a constant tensor
(for a given ``theta``) and all third derivatives vanish.

The observation map is the identity for both families.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

LORENZ_SIGMA = 10.0
LORENZ_BETA = 8.0 / 3.0

# true interaction matrix of the GLV generative process
GLV_TRUE_A = np.array([
    [0.0, 0.2, -0.4],
    [-0.2, 0.0, 0.1],
    [0.4, -0.1, 0.0],
])
GLV_TRUE_PARAMS = np.array([0.2, -0.4, 0.1])

# upper-triangle positions of (a12, a13, a23)
_GLV_UPPER = ((0, 1), (0, 2), (1, 2))


class Family(str, Enum):
    LORENZ = "lorenz"
    GLV = "glv"


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    fixed_params: dict = field(default_factory=dict)
    learnable_layout: tuple = ()
    d_x: int = 3
    d_y: int = 3

    @property
    def n_params(self) -> int:
        return len(self.learnable_layout)

    def describe(self) -> dict:
        return {
            "family": self.family.value,
            "fixed_params": {k: float(v) for k, v in self.fixed_params.items()},
            "learnable_layout": list(self.learnable_layout),
            "d_x": self.d_x,
            "d_y": self.d_y,
        }


def lorenz_model(sigma: float = LORENZ_SIGMA, beta: float = LORENZ_BETA) -> ModelSpec:
    return ModelSpec(Family.LORENZ, {"sigma": sigma, "beta": beta}, ("rho",))


def glv_model() -> ModelSpec:
    return ModelSpec(Family.GLV, {}, ("a12", "a13", "a23"))


def make_model(family) -> ModelSpec:
    family = Family(family)
    return lorenz_model() if family is Family.LORENZ else glv_model()


def model_from_description(desc: dict) -> ModelSpec:
    family = Family(desc["family"])
    if family is Family.LORENZ:
        fixed = desc.get("fixed_params", {})
        return lorenz_model(fixed.get("sigma", LORENZ_SIGMA), fixed.get("beta", LORENZ_BETA))
    return glv_model()


def pack_params(model: ModelSpec, values: dict) -> np.ndarray:
    """Flatten a name -> value mapping into the model's learnable layout."""
    missing = set(model.learnable_layout) - set(values)
    if missing:
        raise KeyError(f"missing parameters: {sorted(missing)}")
    return np.array([float(values[name]) for name in model.learnable_layout])


def unpack_params(model: ModelSpec, theta) -> dict:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.n_params,):
        raise ValueError(
            f"expected {model.n_params} parameters for {model.family.value}, got shape {theta.shape}"
        )
    return {name: float(v) for name, v in zip(model.learnable_layout, theta)}


def glv_interaction(a) -> np.ndarray:
    """Antisymmetric interaction matrix from its upper triangle (a12, a13, a23)."""
    a12, a13, a23 = a
    return np.array([
        [0.0, a12, a13],
        [-a12, 0.0, a23],
        [-a13, -a23, 0.0],
    ])


def lorenz_drift(state, rho, sigma=LORENZ_SIGMA, beta=LORENZ_BETA) -> np.ndarray:
    x0, x1, x2 = state
    return np.array([
        sigma * (x1 - x0),
        x0 * (rho - x2) - x1,
        x0 * x1 - beta * x2,
    ])


def glv_drift(state, a) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    return x * (glv_interaction(a) @ x)


def drift(model: ModelSpec, state, theta) -> np.ndarray:
    if model.family is Family.LORENZ:
        fp = model.fixed_params
        return lorenz_drift(state, theta[0], fp["sigma"], fp["beta"])
    return glv_drift(state, theta)


def drift_jacobian(model: ModelSpec, state, theta) -> np.ndarray:
    """Analytic df/dx."""
    if model.family is Family.LORENZ:
        s, b = model.fixed_params["sigma"], model.fixed_params["beta"]
        x0, x1, x2 = state
        return np.array([
            [-s, s, 0.0],
            [theta[0] - x2, -1.0, -x0],
            [x1, x0, -b],
        ])
    x = np.asarray(state, dtype=float)
    A = glv_interaction(theta)
    return np.diag(A @ x) + x[:, None] * A


def drift_hessian(model: ModelSpec, theta) -> np.ndarray:
    """Second state derivative ``H[i, a, b] = d2 f_i / dx_a dx_b``.

    Constant in the state for both families.
    """
    H = np.zeros((3, 3, 3))
    if model.family is Family.LORENZ:
        H[1, 0, 2] = H[1, 2, 0] = -1.0
        H[2, 0, 1] = H[2, 1, 0] = 1.0
        return H
    A = glv_interaction(theta)
    for i in range(3):
        H[i, i, :] += A[i, :]
        H[i, :, i] += A[i, :]
    return H


def drift_param_grad(model: ModelSpec, state, theta) -> np.ndarray:
    """df/dtheta, shape (d_x, n_params)."""
    x = np.asarray(state, dtype=float)
    if model.family is Family.LORENZ:
        return np.array([[0.0], [x[0]], [0.0]])
    G = np.zeros((3, 3))
    for p, (i, j) in enumerate(_GLV_UPPER):
        # dA/da_p has +1 at (i, j) and -1 at (j, i)
        G[i, p] = x[i] * x[j]
        G[j, p] = -x[j] * x[i]
    return G


def jacobian_param_grad(model: ModelSpec, state, theta) -> np.ndarray:
    """d(df/dx)/dtheta, shape (d_x, d_x, n_params)."""
    x = np.asarray(state, dtype=float)
    if model.family is Family.LORENZ:
        T = np.zeros((3, 3, 1))
        T[1, 0, 0] = 1.0
        return T
    T = np.zeros((3, 3, 3))
    for p, (i, j) in enumerate(_GLV_UPPER):
        # row i of x*(E x): x_i x_j ; row j: -x_j x_i
        T[i, i, p] += x[j]
        T[i, j, p] += x[i]
        T[j, j, p] -= x[i]
        T[j, i, p] -= x[j]
    return T


def observe_fn(state) -> np.ndarray:
    return np.array(state, dtype=float, copy=True)


def observe_jacobian(model: ModelSpec) -> np.ndarray:
    return np.eye(model.d_y, model.d_x)
