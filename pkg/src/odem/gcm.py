"""Generalised coordinates of motion.

Generalised vectors are stored order-major: a vector with ``k`` orders of a
``d``-dimensional quantity is a flat array of length ``k * d`` whose block
``j`` holds the ``j``-th temporal derivative. ``as_blocks`` gives the
``(k, d)`` view.
"""
from __future__ import annotations

import numpy as np

from .models import ModelSpec, drift, drift_jacobian, observe_jacobian


def as_blocks(vec, d: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    if vec.size % d:
        raise ValueError(f"length {vec.size} is not a multiple of block size {d}")
    return vec.reshape(-1, d)


def generalise_observation(window, dt: float, order: int) -> np.ndarray:
    """Stack the latest observation with ``order`` backward finite-difference derivatives.

    ``window`` holds the most recent samples, oldest first, shape ``(m, d)`` or
    ``(m,)``. Each derivative is the backward difference of the previous one
    divided by ``dt``. If fewer than ``order + 1`` samples are given, the oldest
    is replicated, so the missing derivatives come out as zero.

    Returns ``order + 1`` blocks.
    """
    if order < 0:
        raise ValueError(f"derivative order must be non-negative, got {order}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    w = np.asarray(window, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    need = order + 1
    if w.shape[0] < need:
        w = np.vstack([np.repeat(w[:1], need - w.shape[0], axis=0), w])
    diff = w[-need:]
    orders = [diff[-1]]
    for _ in range(order):
        diff = (diff[1:] - diff[:-1]) / dt
        orders.append(diff[-1])
    return np.concatenate(orders)


class ObservationBuffer:
    """Rolling history that generalises a stream one sample at a time.

    ``n_orders`` is the number of blocks in each generalised observation. The
    history is primed with copies of the first sample.
    """

    def __init__(self, n_orders: int, dt: float):
        if n_orders < 1:
            raise ValueError(f"n_orders must be >= 1, got {n_orders}")
        self.n_orders = n_orders
        self.dt = dt
        self._rows: list = []

    def push(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not self._rows:
            self._rows = [y] * self.n_orders
        else:
            self._rows.append(y)
            del self._rows[0]
        return generalise_observation(np.array(self._rows), self.dt, self.n_orders - 1)


def shift_operator(k: int, d: int) -> np.ndarray:
    if k < 1 or d < 1:
        raise ValueError("k and d must be positive")
    return np.kron(np.eye(k, k=1), np.eye(d))


def _double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def autocorrelation_derivative(order: int, sigma: float) -> float:
    """``rho^(order)(0)`` for the unit Gaussian autocorrelation ``exp(-tau^2 / (2 sigma^2))``."""
    if order % 2:
        return 0.0
    m = order // 2
    return (-1) ** m * _double_factorial(2 * m - 1) * sigma ** (-2 * m)


def smoothness_matrix(k: int, sigma: float) -> np.ndarray:
    """Covariance among the first ``k`` derivatives of a unit-variance smooth process.

    Entry ``(i, j)`` is ``cov(w^(i), w^(j)) = (-1)^j rho^(i+j)(0)``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    S = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if (i + j) % 2 == 0:
                S[i, j] = (-1) ** j * autocorrelation_derivative(i + j, sigma)
    return S


def order_weights(S, convention: str = "inverse") -> np.ndarray:
    """Per-order weight matrix multiplying the marginal precision.

    ``"inverse"`` uses ``S^-1`` so that the product is a precision; ``"literal"``
    uses ``S`` as written.
    """
    S = np.asarray(S, dtype=float)
    if convention == "literal":
        return S.copy()
    if convention != "inverse":
        raise ValueError(f"unknown convention {convention!r}")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("smoothness matrix is singular or indefinite") from exc
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def generalised_precision(S, marginal_precision, convention: str = "inverse") -> np.ndarray:
    """Kronecker generalised precision ``W (x) Pi`` with ``W`` from ``order_weights``."""
    return np.kron(order_weights(S, convention), np.asarray(marginal_precision, dtype=float))


def generalised_drift(model: ModelSpec, mu, theta) -> np.ndarray:
    """Local-linearity stack ``(f(mu0), J mu1, J mu2, ...)``."""
    blocks = as_blocks(mu, model.d_x)
    J = drift_jacobian(model, blocks[0], theta)
    out = np.empty_like(blocks)
    out[0] = drift(model, blocks[0], theta)
    for j in range(1, len(blocks)):
        out[j] = J @ blocks[j]
    return out.ravel()


def generalised_observation_map(model: ModelSpec, mu) -> np.ndarray:
    blocks = as_blocks(mu, model.d_x)
    G = observe_jacobian(model)
    # identity observation: g(mu0) = G mu0
    return (blocks @ G.T).ravel()
