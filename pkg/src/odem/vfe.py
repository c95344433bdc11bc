"""Laplace-approximated variational free energy for a single-layer generalised model.

Prediction errors are stacked order-major. For ``k_x`` orders of motion the
state carries ``k_x`` blocks and both error stacks carry ``k_x - 1`` blocks::

    eps_y[j] = y^(j) - G mu^(j)                      j = 0 .. k_x - 2
    eps_x[0] = mu' - f(mu)
    eps_x[j] = mu^(j+1) - J(mu) mu^(j)               j = 1 .. k_x - 2

The highest state order only enters through its own dynamics error; the
truncated bottom row of ``D mu - f~`` is dropped.

All gradients and curvature blocks are analytic. They are exact for the two
built-in families because their drifts are quadratic in the state and linear
in the parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import gcm
from .models import (
    ModelSpec,
    drift,
    drift_hessian,
    drift_jacobian,
    drift_param_grad,
    jacobian_param_grad,
    observe_jacobian,
)

LOG_2PI = np.log(2.0 * np.pi)


class NotPositiveDefinite(np.linalg.LinAlgError):
    def __init__(self, block: str):
        super().__init__(f"matrix block {block!r} is not symmetric positive definite")
        self.block = block


def logdet_spd(M, block: str) -> float:
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(block) from None
    return 2.0 * float(np.sum(np.log(np.diag(L))))


@dataclass(frozen=True)
class GeneralisedModel:
    """Run-constant structure: model, order of motion and generalised weights."""

    model: ModelSpec
    k_x: int
    smoothness_sigma: float = 0.1
    convention: str = "inverse"
    W_x: np.ndarray = field(default=None, repr=False)
    W_y: np.ndarray = field(default=None, repr=False)
    D: np.ndarray = field(default=None, repr=False)
    G: np.ndarray = field(default=None, repr=False)
    logdet_W_x: float = 0.0
    logdet_W_y: float = 0.0

    @classmethod
    def build(cls, model: ModelSpec, k_x: int, smoothness_sigma: float = 0.1,
              convention: str = "inverse") -> "GeneralisedModel":
        if k_x < 2:
            raise ValueError(f"k_x must be >= 2, got {k_x}")
        n_err = k_x - 1
        S = gcm.smoothness_matrix(n_err, smoothness_sigma)
        W = gcm.order_weights(S, convention)
        ld = logdet_spd(W, "smoothness weights")
        return cls(
            model=model,
            k_x=k_x,
            smoothness_sigma=smoothness_sigma,
            convention=convention,
            W_x=W,
            W_y=W,
            D=gcm.shift_operator(k_x, model.d_x),
            G=observe_jacobian(model),
            logdet_W_x=ld,
            logdet_W_y=ld,
        )

    @property
    def k_y(self) -> int:
        return self.k_x - 1

    @property
    def d_x(self) -> int:
        return self.model.d_x

    @property
    def d_y(self) -> int:
        return self.model.d_y

    @property
    def n_lambda(self) -> int:
        return self.d_x + self.d_y

    def split_lambda(self, lam):
        return lam[: self.d_x], lam[self.d_x:]

    def precision_y(self, lam) -> np.ndarray:
        return np.kron(self.W_y, np.diag(np.exp(self.split_lambda(lam)[1])))

    def precision_x(self, lam) -> np.ndarray:
        return np.kron(self.W_x, np.diag(np.exp(self.split_lambda(lam)[0])))


@dataclass
class BeliefState:
    """Mean-field Gaussian factors over generalised states, parameters and log-precisions."""

    mu_x: np.ndarray
    Sigma_x: np.ndarray
    mu_theta: np.ndarray
    Sigma_theta: np.ndarray
    eta_theta: np.ndarray
    Pi_theta: np.ndarray
    mu_lambda: np.ndarray
    Sigma_lambda: np.ndarray
    eta_lambda: np.ndarray
    Pi_lambda: np.ndarray

    def copy(self) -> "BeliefState":
        return replace(self, **{k: np.array(v, copy=True) for k, v in vars(self).items()})


@dataclass(frozen=True)
class VfeValue:
    total: float
    accuracy: float
    complexity: float


@dataclass(frozen=True)
class PredictionErrors:
    eps_y: np.ndarray
    eps_x: np.ndarray
    eps_theta: np.ndarray
    eps_lambda: np.ndarray


def _check_orders(gm: GeneralisedModel, mu_x, y_gen):
    if np.size(mu_x) != gm.k_x * gm.d_x:
        raise ValueError(f"belief has {np.size(mu_x) // gm.d_x} orders, expected k_x={gm.k_x}")
    if np.size(y_gen) != gm.k_y * gm.d_y:
        raise ValueError(
            f"generalised observation has {np.size(y_gen) // gm.d_y} orders, "
            f"expected k_y=k_x-1={gm.k_y}"
        )


def _state_errors(gm: GeneralisedModel, mu, theta):
    """Error blocks plus the pieces needed for derivatives."""
    J = drift_jacobian(gm.model, mu[0], theta)
    ex = np.empty((gm.k_y, gm.d_x))
    ex[0] = mu[1] - drift(gm.model, mu[0], theta)
    for j in range(1, gm.k_y):
        ex[j] = mu[j + 1] - J @ mu[j]
    return ex, J


def prediction_errors(belief: BeliefState, y_gen, gm: GeneralisedModel) -> PredictionErrors:
    _check_orders(gm, belief.mu_x, y_gen)
    mu = gcm.as_blocks(belief.mu_x, gm.d_x)
    y = gcm.as_blocks(y_gen, gm.d_y)
    ey = y - mu[: gm.k_y] @ gm.G.T
    ex, _ = _state_errors(gm, mu, belief.mu_theta)
    return PredictionErrors(
        eps_y=ey.ravel(),
        eps_x=ex.ravel(),
        eps_theta=belief.mu_theta - belief.eta_theta,
        eps_lambda=belief.mu_lambda - belief.eta_lambda,
    )


def laplace_vfe(errors: PredictionErrors, Pi_y, Pi_x, Pi_theta, Pi_lambda,
                Sigma_x, Sigma_theta, Sigma_lambda, d_y: int, k_y: int,
                logdet_signs: str = "consistent") -> VfeValue:
    """Free energy with its accuracy / complexity split.

    ``logdet_signs="consistent"`` gives every precision and covariance
    log-determinant in the complexity the sign it has in the ungrouped
    objective (``-log|Pi|``, ``-log|Sigma|``). ``"regrouped"`` flips them to
    the ``+log`` form some write-ups use for the grouped complexity term.
    """
    if logdet_signs not in ("consistent", "regrouped"):
        raise ValueError(f"unknown logdet_signs {logdet_signs!r}")
    e = errors
    quad_y = float(e.eps_y @ Pi_y @ e.eps_y)
    quad_x = float(e.eps_x @ Pi_x @ e.eps_x)
    quad_t = float(e.eps_theta @ Pi_theta @ e.eps_theta)
    quad_l = float(e.eps_lambda @ Pi_lambda @ e.eps_lambda)

    ld_y = logdet_spd(Pi_y, "Pi_y")
    logdets = (
        logdet_spd(Pi_x, "Pi_x")
        + logdet_spd(Pi_theta, "Pi_theta")
        + logdet_spd(Pi_lambda, "Pi_lambda")
        + logdet_spd(Sigma_x, "Sigma_x")
        + logdet_spd(Sigma_theta, "Sigma_theta")
        + logdet_spd(Sigma_lambda, "Sigma_lambda")
    )
    sign = -1.0 if logdet_signs == "consistent" else 1.0
    accuracy = 0.5 * (-quad_y + ld_y - d_y * k_y * LOG_2PI)
    complexity = 0.5 * (quad_x + quad_t + quad_l + sign * logdets)
    return VfeValue(total=complexity - accuracy, accuracy=accuracy, complexity=complexity)


def free_energy(belief: BeliefState, y_gen, gm: GeneralisedModel,
                logdet_signs: str = "consistent") -> VfeValue:
    errors = prediction_errors(belief, y_gen, gm)
    return laplace_vfe(
        errors,
        gm.precision_y(belief.mu_lambda),
        gm.precision_x(belief.mu_lambda),
        belief.Pi_theta,
        belief.Pi_lambda,
        belief.Sigma_x,
        belief.Sigma_theta,
        belief.Sigma_lambda,
        gm.d_y,
        gm.k_y,
        logdet_signs,
    )


def joint_energy(belief: BeliefState, y_gen, gm: GeneralisedModel) -> float:
    """``U = -log p(psi, y~)`` up to constants: the free energy without entropy terms."""
    e = prediction_errors(belief, y_gen, gm)
    Py = gm.precision_y(belief.mu_lambda)
    Px = gm.precision_x(belief.mu_lambda)
    lx, ly = gm.split_lambda(belief.mu_lambda)
    ld = gm.d_y * gm.logdet_W_y + gm.k_y * ly.sum() + gm.d_x * gm.logdet_W_x + gm.k_y * lx.sum()
    return 0.5 * float(
        e.eps_y @ Py @ e.eps_y
        + e.eps_x @ Px @ e.eps_x
        + e.eps_theta @ belief.Pi_theta @ e.eps_theta
        + e.eps_lambda @ belief.Pi_lambda @ e.eps_lambda
        - ld
    )


class _Pieces:
    """Errors, weighted errors and model derivatives at one belief point."""

    def __init__(self, belief: BeliefState, y_gen, gm: GeneralisedModel):
        _check_orders(gm, belief.mu_x, y_gen)
        self.gm = gm
        m = gm.k_y
        self.mu = gcm.as_blocks(belief.mu_x, gm.d_x)
        y = gcm.as_blocks(y_gen, gm.d_y)
        theta = belief.mu_theta
        self.ey = y - self.mu[:m] @ gm.G.T
        self.ex, self.J = _state_errors(gm, self.mu, theta)
        lx, ly = gm.split_lambda(belief.mu_lambda)
        self.prec_x = np.exp(lx)
        self.prec_y = np.exp(ly)
        # weighted errors: (W (x) diag(p)) eps, blockwise
        self.xi_y = (gm.W_y @ self.ey) * self.prec_y
        self.xi_x = (gm.W_x @ self.ex) * self.prec_x
        self.H = drift_hessian(gm.model, theta)
        self.theta = theta

    def contracted_hessian(self, v) -> np.ndarray:
        """``M[i, a] = sum_b H[i, a, b] v[b]``: derivative of ``J(mu0) v`` in ``mu0``."""
        return self.H @ v

    def error_jacobian_x(self) -> np.ndarray:
        """d(eps_y, eps_x)/d mu_x as a dense matrix."""
        gm = self.gm
        d, m, K = gm.d_x, gm.k_y, gm.k_x
        E = np.zeros((2 * m * d, K * d))
        for j in range(m):
            E[j * d:(j + 1) * d, j * d:(j + 1) * d] = -gm.G
        off = m * d
        for j in range(m):
            rows = slice(off + j * d, off + (j + 1) * d)
            E[rows, (j + 1) * d:(j + 2) * d] = np.eye(d)
            E[rows, j * d:(j + 1) * d] -= self.J
            if j >= 1:
                E[rows, 0:d] -= self.contracted_hessian(self.mu[j])
        return E

    def error_jacobian_theta(self) -> np.ndarray:
        """d eps_x / d theta, shape (m * d, n_params)."""
        gm = self.gm
        d, m = gm.d_x, gm.k_y
        Et = np.zeros((m * d, gm.model.n_params))
        Et[0:d] = -drift_param_grad(gm.model, self.mu[0], self.theta)
        if m > 1:
            T = jacobian_param_grad(gm.model, self.mu[0], self.theta)
            for j in range(1, m):
                Et[j * d:(j + 1) * d] = -np.einsum("iap,a->ip", T, self.mu[j])
        return Et

    def weighted_stack(self) -> np.ndarray:
        return np.concatenate([self.xi_y.ravel(), self.xi_x.ravel()])

    def quad_per_channel(self):
        """Per-channel quadratic forms ``q_i = sum_jk W_jk e_ji e_ki`` for x and y."""
        gm = self.gm
        qx = np.sum(self.ex * (gm.W_x @ self.ex), axis=0)
        qy = np.sum(self.ey * (gm.W_y @ self.ey), axis=0)
        return qx, qy


def vfe_gradients(belief: BeliefState, y_gen, gm: GeneralisedModel):
    """Gradients of the free energy in ``mu_x``, ``mu_theta`` and ``mu_lambda``.

    Covariances are held fixed, so these are also the gradients of the joint
    energy ``U``.
    """
    p = _Pieces(belief, y_gen, gm)
    d, m = gm.d_x, gm.k_y

    g_mu = np.zeros((gm.k_x, d))
    g_mu[:m] -= p.xi_y @ gm.G
    for j in range(m):
        g_mu[j + 1] += p.xi_x[j]
        g_mu[j] -= p.J.T @ p.xi_x[j]
        if j >= 1:
            g_mu[0] -= p.contracted_hessian(p.mu[j]).T @ p.xi_x[j]

    g_theta = p.error_jacobian_theta().T @ p.xi_x.ravel()
    g_theta = g_theta + belief.Pi_theta @ (belief.mu_theta - belief.eta_theta)

    qx, qy = p.quad_per_channel()
    g_lambda = np.concatenate([
        0.5 * p.prec_x * qx - 0.5 * m,
        0.5 * p.prec_y * qy - 0.5 * m,
    ])
    g_lambda = g_lambda + belief.Pi_lambda @ (belief.mu_lambda - belief.eta_lambda)
    return g_mu.ravel(), g_theta, g_lambda


def hessian_xx(belief: BeliefState, y_gen, gm: GeneralisedModel,
               gauss_newton: bool = False) -> np.ndarray:
    """Curvature of ``U`` in ``mu_x``.

    ``gauss_newton=True`` drops the residual-weighted second derivatives of
    the drift, leaving the positive semidefinite ``E^T Pi E`` part.
    """
    p = _Pieces(belief, y_gen, gm)
    d, m = gm.d_x, gm.k_y
    E = p.error_jacobian_x()
    Py = np.kron(gm.W_y, np.diag(p.prec_y))
    Px = np.kron(gm.W_x, np.diag(p.prec_x))
    nY = m * d
    Ey, Ex = E[:nY], E[nY:]
    Hm = Ey.T @ Py @ Ey + Ex.T @ Px @ Ex
    if gauss_newton:
        return 0.5 * (Hm + Hm.T)
    # residual-weighted second derivatives of the dynamics errors
    R0 = np.tensordot(p.xi_x[0], p.H, axes=1)
    Hm[0:d, 0:d] -= R0
    for j in range(1, m):
        Rj = np.tensordot(p.xi_x[j], p.H, axes=1)
        Hm[0:d, j * d:(j + 1) * d] -= Rj
        Hm[j * d:(j + 1) * d, 0:d] -= Rj.T
    return 0.5 * (Hm + Hm.T)


def hessian_theta(belief: BeliefState, y_gen, gm: GeneralisedModel) -> np.ndarray:
    p = _Pieces(belief, y_gen, gm)
    Et = p.error_jacobian_theta()
    Px = np.kron(gm.W_x, np.diag(p.prec_x))
    Hm = Et.T @ Px @ Et + belief.Pi_theta
    return 0.5 * (Hm + Hm.T)


def hessian_lambda(belief: BeliefState, y_gen, gm: GeneralisedModel) -> np.ndarray:
    p = _Pieces(belief, y_gen, gm)
    qx, qy = p.quad_per_channel()
    diag = 0.5 * np.concatenate([p.prec_x * qx, p.prec_y * qy])
    Hm = np.diag(diag) + belief.Pi_lambda
    return 0.5 * (Hm + Hm.T)


def hessian_block(belief: BeliefState, y_gen, gm: GeneralisedModel, which: str) -> np.ndarray:
    """Curvature of ``U`` in one mean-field block: ``"xx"``, ``"theta"`` or ``"lambda"``."""
    if which == "xx":
        return hessian_xx(belief, y_gen, gm)
    if which == "theta":
        return hessian_theta(belief, y_gen, gm)
    if which == "lambda":
        return hessian_lambda(belief, y_gen, gm)
    raise ValueError(f"unknown block {which!r}")
