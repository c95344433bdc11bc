"""Online dynamic expectation maximisation.

One pass over the data. Every observation triggers a D-step (Ozaki update of
the generalised state means), gradient accumulation for parameters and
log-precisions, and a refresh of the state covariance. Every ``inter_em``
observations the accumulated gradients drive an M-step (log-precisions) and
then an E-step (parameters), each followed by a Laplace covariance update and
a prior hand-off.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.linalg import expm

from .gcm import ObservationBuffer
from .models import Family, ModelSpec
from .vfe import (
    BeliefState,
    GeneralisedModel,
    free_energy,
    hessian_lambda,
    hessian_theta,
    hessian_xx,
    vfe_gradients,
)

log = logging.getLogger(__name__)

# Table-1 style Gaussian priors: (means, variances) per family
DEFAULT_PARAM_PRIORS = {
    Family.LORENZ: ((30.0,), (81.0,)),
    Family.GLV: ((0.3, -0.2, 0.3), (0.0625, 0.0625, 0.0625)),
}

JITTER_LADDER = tuple(10.0 ** -p for p in range(8, 1, -1))


class OdemAbort(RuntimeError):
    """A run could not continue; ``record`` holds everything up to the failure."""

    def __init__(self, message: str, step: int, record=None):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.record = record


@dataclass(frozen=True)
class ParamPrior:
    mean: tuple
    var: tuple

    @classmethod
    def default(cls, model: ModelSpec) -> "ParamPrior":
        mean, var = DEFAULT_PARAM_PRIORS[model.family]
        return cls(tuple(mean), tuple(var))


@dataclass(frozen=True)
class OdemConfig:
    k_x: int = 2
    kappa: float = 0.5
    inter_em: int = 128
    beta_lambda: float = 0.0
    beta_theta: float = 0.0
    rm_lambda: tuple = (1e-4, 10.0, 0.3)
    rm_theta: tuple = (1e-4, 10.0, 0.3)
    nu: float = -4.0
    C: float = 1.0
    E_pi_x: float = 500.0
    sigma_lambda_x: float = 0.1
    sigma_lambda_y: float = 0.1
    smoothness_sigma: float = 0.1
    precision_convention: str = "inverse"
    step_rule: str = "spectral"
    power_iterations: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k_x < 2:
            raise ValueError(f"k_x must be >= 2, got {self.k_x}")
        if self.inter_em < 1:
            raise ValueError(f"inter_em must be positive, got {self.inter_em}")
        for name in ("beta_lambda", "beta_theta"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if self.step_rule not in ("spectral", "logdet"):
            raise ValueError(f"unknown step_rule {self.step_rule!r}")

    @property
    def k_y(self) -> int:
        return self.k_x - 1

    @property
    def E_pi_y(self) -> float:
        return self.C * self.E_pi_x

    def key(self) -> tuple:
        return (self.k_x, self.kappa, self.inter_em, self.beta_lambda, self.beta_theta,
                self.C, self.sigma_lambda_x, self.sigma_lambda_y)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["rm_lambda"] = list(self.rm_lambda)
        out["rm_theta"] = list(self.rm_theta)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "OdemConfig":
        d = dict(d)
        for k in ("rm_lambda", "rm_theta"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def log_precision_prior_mean(expected_precision: float, sigma: float) -> float:
    """Mean of a log-normal prior whose expected precision is ``expected_precision``."""
    return float(np.log(expected_precision) - 0.5 * sigma**2)


def rm_rate(j: int, alpha: float, t0: float, gamma: float) -> float:
    """Robbins-Monro learning rate ``alpha / (j + t0)^gamma``."""
    if j < 1:
        raise ValueError(f"EM iteration index must be >= 1, got {j}")
    return alpha / (j + t0) ** gamma


def accumulate(acc, grad, beta: float) -> np.ndarray:
    return beta * np.asarray(acc) + (1.0 - beta) * np.asarray(grad)


def phi1(A) -> np.ndarray:
    """``A^-1 (exp(A) - I)`` evaluated without inverting ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = A
    aug[:n, n:] = np.eye(n)
    return expm(aug)[:n, n:]


def ozaki_increment(J, v, ds: float) -> np.ndarray:
    """Local-linearisation step ``J^-1 (exp(J ds) - I) v``.

    Computed as one exponential of the bordered matrix ``[[J ds, v ds], [0, 0]]``,
    whose upper-right column is ``phi1(J ds) v ds``.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    v = np.asarray(v, dtype=float)
    n = J.shape[0]
    if not np.any(np.tril(J)):
        # strictly upper triangular, hence nilpotent: the series stops after n terms
        out = np.zeros(n)
        power = v
        for k in range(n):
            out = out + ds ** (k + 1) / math.factorial(k + 1) * power
            power = J @ power
        return out
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = J * ds
    aug[:n, n] = v * ds
    return expm(aug)[:n, n]


def spectral_radius_estimate(H, iterations: int = 5) -> float:
    """Power-iteration estimate of the largest absolute eigenvalue of a symmetric matrix."""
    n = H.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    est = 0.0
    for _ in range(iterations):
        w = H @ v
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return est


def curvature_scale(H, rule: str = "spectral", iterations: int = 5) -> float:
    """The ``alpha`` in ``ds = exp(nu) / alpha``, never below one."""
    if rule == "spectral":
        scale = spectral_radius_estimate(H, iterations)
    elif rule == "logdet":
        # geometric mean of the absolute curvature spectrum
        eig = np.abs(np.linalg.eigvalsh(H))
        eig = eig[eig > 0]
        scale = float(np.exp(np.mean(np.log(eig)))) if eig.size else 0.0
    else:
        raise ValueError(f"unknown step rule {rule!r}")
    return max(1.0, scale)


def spd_inverse(H, block: str):
    """Invert a curvature block, escalating diagonal jitter if it is not SPD.

    Returns ``(precision, covariance)``; the precision includes any jitter used.
    """
    H = 0.5 * (H + H.T)
    n = H.shape[0]
    for eps in (0.0,) + JITTER_LADDER:
        P = H + eps * np.eye(n) if eps else H
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            continue
        Linv = np.linalg.inv(L)
        cov = Linv.T @ Linv
        return P, 0.5 * (cov + cov.T)
    raise np.linalg.LinAlgError(
        f"curvature block {block!r} not positive definite even with jitter {JITTER_LADDER[-1]:g}"
    )


def state_covariance(belief: BeliefState, y_gen, gm: GeneralisedModel) -> np.ndarray:
    """Inverse curvature in ``mu_x``, falling back to Gauss-Newton curvature.

    The exact curvature can be indefinite when the dynamics errors are large
    (a mismatched model far from its attractor); the Gauss-Newton part is
    positive definite whenever the precisions are.
    """
    try:
        return spd_inverse(hessian_xx(belief, y_gen, gm), "xx")[1]
    except np.linalg.LinAlgError:
        return spd_inverse(hessian_xx(belief, y_gen, gm, gauss_newton=True), "xx")[1]


def init_belief(gm: GeneralisedModel, cfg: OdemConfig, prior: ParamPrior, y0_gen=None) -> BeliefState:
    d = gm.d_x
    mu_x = np.zeros(gm.k_x * d)
    if y0_gen is not None:
        y0 = np.asarray(y0_gen, dtype=float)
        # identity observation map: observed orders copy across, the rest start at zero
        mu_x[: y0.size] = y0
    theta_mean = np.array(prior.mean, dtype=float)
    theta_var = np.array(prior.var, dtype=float)
    eta_lam = np.concatenate([
        np.full(gm.d_x, log_precision_prior_mean(cfg.E_pi_x, cfg.sigma_lambda_x)),
        np.full(gm.d_y, log_precision_prior_mean(cfg.E_pi_y, cfg.sigma_lambda_y)),
    ])
    var_lam = np.concatenate([
        np.full(gm.d_x, cfg.sigma_lambda_x**2),
        np.full(gm.d_y, cfg.sigma_lambda_y**2),
    ])
    return BeliefState(
        mu_x=mu_x,
        Sigma_x=np.eye(gm.k_x * d),
        mu_theta=theta_mean.copy(),
        Sigma_theta=np.diag(theta_var),
        eta_theta=theta_mean.copy(),
        Pi_theta=np.diag(1.0 / theta_var),
        mu_lambda=eta_lam.copy(),
        Sigma_lambda=np.diag(var_lam),
        eta_lambda=eta_lam.copy(),
        Pi_lambda=np.diag(1.0 / var_lam),
    )


@dataclass
class DStepResult:
    mu_x: np.ndarray
    step_size: float
    alpha: float


def d_step(belief: BeliefState, y_gen, gm: GeneralisedModel, cfg: OdemConfig) -> DStepResult:
    """One Ozaki update of the generalised state means."""
    g_x = vfe_gradients(belief, y_gen, gm)[0]
    H = hessian_xx(belief, y_gen, gm)
    v = gm.D @ belief.mu_x - cfg.kappa * g_x
    J0 = gm.D - cfg.kappa * H
    alpha = curvature_scale(H, cfg.step_rule, cfg.power_iterations)
    ds = float(np.exp(cfg.nu) / alpha)
    inc = ozaki_increment(J0, v, ds)
    if not np.all(np.isfinite(inc)):
        rho = float(np.max(np.abs(np.linalg.eigvals(J0)))) if np.all(np.isfinite(J0)) else np.inf
        raise FloatingPointError(f"non-finite D-step increment (spectral radius of J0 = {rho:.3g})")
    return DStepResult(belief.mu_x + inc, ds, alpha)


def em_step(belief: BeliefState, acc_theta, acc_lambda, j: int, cfg: OdemConfig,
            gm: GeneralisedModel, y_gen) -> BeliefState:
    """M-step then E-step, each with covariance refresh and prior hand-off."""
    b = belief.copy()
    b.mu_lambda = b.mu_lambda - rm_rate(j, *cfg.rm_lambda) * np.asarray(acc_lambda)
    P, b.Sigma_lambda = spd_inverse(hessian_lambda(b, y_gen, gm), "lambda")
    b.eta_lambda, b.Pi_lambda = b.mu_lambda.copy(), P

    b.mu_theta = b.mu_theta - rm_rate(j, *cfg.rm_theta) * np.asarray(acc_theta)
    P, b.Sigma_theta = spd_inverse(hessian_theta(b, y_gen, gm), "theta")
    b.eta_theta, b.Pi_theta = b.mu_theta.copy(), P
    return b


@dataclass(eq=False)
class RunRecord:
    """Trajectories of one ODEM pass.

    Step arrays have one row per consumed observation. Event arrays start with
    the prior row (``j = 0``, ``t = -1``) followed by one row per EM event.
    """

    config: dict
    model: dict
    prior: dict
    dt: float
    k_x: int
    mu_x: np.ndarray
    var_x: np.ndarray
    free_energy: np.ndarray
    accuracy: np.ndarray
    complexity: np.ndarray
    step_size: np.ndarray
    event_j: np.ndarray
    event_t: np.ndarray
    mu_theta: np.ndarray
    var_theta: np.ndarray
    mu_lambda: np.ndarray
    var_lambda: np.ndarray
    status: str = "ok"
    message: str = ""
    wall_time: float = field(default=0.0, compare=False)

    def __eq__(self, other):
        if not isinstance(other, RunRecord):
            return NotImplemented
        for f in fields(self):
            if f.name == "wall_time":
                continue
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    @property
    def n_steps(self) -> int:
        return len(self.free_energy)

    @property
    def free_action(self) -> np.ndarray:
        return np.cumsum(self.free_energy)

    @property
    def final_fa(self) -> float:
        return float(self.free_energy.sum())

    @property
    def final_accuracy(self) -> float:
        return float(self.accuracy.sum())

    @property
    def final_complexity(self) -> float:
        return float(self.complexity.sum())

    def positions(self) -> np.ndarray:
        """Inferred states: the position block of ``mu_x``."""
        d = self.model["d_x"]
        return self.mu_x[:, :d]


class _Recorder:
    def __init__(self, gm: GeneralisedModel, n: int):
        nx = gm.k_x * gm.d_x
        self.mu_x = np.zeros((n, nx))
        self.var_x = np.zeros((n, nx))
        self.F = np.zeros(n)
        self.acc = np.zeros(n)
        self.comp = np.zeros(n)
        self.ds = np.zeros(n)
        self.n = 0
        self.events = []

    def event(self, j, t, b: BeliefState):
        self.events.append((j, t, b.mu_theta.copy(), np.diag(b.Sigma_theta).copy(),
                            b.mu_lambda.copy(), np.diag(b.Sigma_lambda).copy()))

    def step(self, b: BeliefState, vfe, ds):
        i = self.n
        self.mu_x[i] = b.mu_x
        self.var_x[i] = np.diag(b.Sigma_x)
        self.F[i] = vfe.total
        self.acc[i] = vfe.accuracy
        self.comp[i] = vfe.complexity
        self.ds[i] = ds
        self.n += 1

    def build(self, cfg, gm, prior, dt, status="ok", message="", wall=0.0) -> RunRecord:
        n = self.n
        ev = self.events
        return RunRecord(
            config=cfg.to_dict(),
            model=gm.model.describe(),
            prior={"mean": list(prior.mean), "var": list(prior.var)},
            dt=dt,
            k_x=gm.k_x,
            mu_x=self.mu_x[:n].copy(),
            var_x=self.var_x[:n].copy(),
            free_energy=self.F[:n].copy(),
            accuracy=self.acc[:n].copy(),
            complexity=self.comp[:n].copy(),
            step_size=self.ds[:n].copy(),
            event_j=np.array([e[0] for e in ev], dtype=int),
            event_t=np.array([e[1] for e in ev], dtype=int),
            mu_theta=np.array([e[2] for e in ev]),
            var_theta=np.array([e[3] for e in ev]),
            mu_lambda=np.array([e[4] for e in ev]),
            var_lambda=np.array([e[5] for e in ev]),
            status=status,
            message=message,
            wall_time=wall,
        )


def run_odem(ds, cfg: OdemConfig, model: ModelSpec, prior: ParamPrior | None = None,
             callback=None) -> RunRecord:
    """Single online pass of ODEM over a dataset.

    ``ds`` needs ``dt``, ``n_steps`` and a ``stream()`` yielding ``(t, y_t)``.
    ``callback(t, belief, em_event)`` is invoked after every step, for
    instrumentation. On failure an ``OdemAbort`` carries the partial record.
    """
    prior = prior or ParamPrior.default(model)
    if ds.observations.shape[1] != model.d_y:
        raise ValueError(
            f"dataset has {ds.observations.shape[1]} observed channels, model expects {model.d_y}"
        )
    gm = GeneralisedModel.build(model, cfg.k_x, cfg.smoothness_sigma, cfg.precision_convention)
    buf = ObservationBuffer(gm.k_y, ds.dt)
    rec = _Recorder(gm, ds.n_steps)
    belief = init_belief(gm, cfg, prior)
    rec.event(0, -1, belief)
    acc_theta = np.zeros(model.n_params)
    acc_lambda = np.zeros(gm.n_lambda)
    start = time.perf_counter()
    t = -1
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            for t, y in ds.stream():
                y_gen = buf.push(y)
                if t == 0:
                    belief = init_belief(gm, cfg, prior, y_gen)
                step = d_step(belief, y_gen, gm, cfg)
                belief.mu_x = step.mu_x

                _, g_theta, g_lambda = vfe_gradients(belief, y_gen, gm)
                acc_lambda = accumulate(acc_lambda, g_lambda, cfg.beta_lambda)
                acc_theta = accumulate(acc_theta, g_theta, cfg.beta_theta)

                event = (t + 1) % cfg.inter_em == 0
                if event:
                    j = (t + 1) // cfg.inter_em
                    belief = em_step(belief, acc_theta, acc_lambda, j, cfg, gm, y_gen)
                    acc_theta = np.zeros_like(acc_theta)
                    acc_lambda = np.zeros_like(acc_lambda)
                    rec.event(j, t, belief)

                belief.Sigma_x = state_covariance(belief, y_gen, gm)
                vfe = free_energy(belief, y_gen, gm)
                if not np.isfinite(vfe.total):
                    raise FloatingPointError("non-finite free energy")
                rec.step(belief, vfe, step.step_size)
                if callback is not None:
                    callback(t, belief, event)
    except (FloatingPointError, np.linalg.LinAlgError, OverflowError) as exc:
        partial = rec.build(cfg, gm, prior, ds.dt, "failed", str(exc), time.perf_counter() - start)
        log.warning("ODEM aborted at step %d: %s", t, exc)
        raise OdemAbort(str(exc), t, partial) from exc
    return rec.build(cfg, gm, prior, ds.dt, wall=time.perf_counter() - start)
