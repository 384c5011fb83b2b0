"""Single-output GP regression with fixed heteroscedastic noise.

The noise variances are known per observation and enter the covariance as a
diagonal, ``K + diag(s^2)``. Hyperparameters (ARD lengthscales and signal
variance) are fit by multi-start L-BFGS on the log marginal likelihood in
log space, with analytic gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .errors import DataError, NumericalError

KERNELS = ("se", "matern52")
_LOG_2PI = math.log(2.0 * math.pi)
_SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class KernelParams:
    log_lengthscales: np.ndarray
    log_signal_variance: float
    family: str = "se"

    def __post_init__(self):
        ll = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=float))
        object.__setattr__(self, "log_lengthscales", ll)
        object.__setattr__(self, "log_signal_variance", float(self.log_signal_variance))
        if self.family not in KERNELS:
            raise DataError(f"unknown kernel family {self.family!r}")

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def signal_variance(self) -> float:
        return math.exp(self.log_signal_variance)

    @property
    def d(self) -> int:
        return self.log_lengthscales.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.log_lengthscales, [self.log_signal_variance]])

    @classmethod
    def from_vector(cls, theta: np.ndarray, family: str) -> "KernelParams":
        return cls(np.array(theta[:-1]), float(theta[-1]), family)

    def check_finite(self) -> None:
        vals = np.concatenate([self.lengthscales, [self.signal_variance]])
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise NumericalError(f"kernel parameters must be positive and finite: {self.as_vector()}")


def _scaled_sqdiff(params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences divided by lengthscale^2, shape (n, m, d)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != params.d or B.shape[1] != params.d:
        raise DataError(
            f"dimension mismatch: kernel has d={params.d}, inputs have {A.shape[1]} and {B.shape[1]}"
        )
    diff = (A[:, None, :] - B[None, :, :]) / params.lengthscales
    return diff * diff


def kernel_matrix(params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cross-covariance matrix ``k(A_i, B_j)``."""
    params.check_finite()
    r2 = _scaled_sqdiff(params, A, B).sum(axis=-1)
    return _kernel_from_r2(params, r2)


def _kernel_from_r2(params: KernelParams, r2: np.ndarray) -> np.ndarray:
    sf2 = params.signal_variance
    if params.family == "se":
        return sf2 * np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    return sf2 * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)


def kernel_diag(params: KernelParams, n: int) -> np.ndarray:
    return np.full(n, params.signal_variance)


def _kernel_and_grads(params: KernelParams, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Gram matrix and its derivatives w.r.t. each log-hyperparameter."""
    sq = _scaled_sqdiff(params, X, X)
    r2 = sq.sum(axis=-1)
    sf2 = params.signal_variance
    if params.family == "se":
        K = sf2 * np.exp(-0.5 * r2)
        grads = [K * sq[..., q] for q in range(params.d)]
    else:
        r = np.sqrt(r2)
        e = np.exp(-_SQRT5 * r)
        K = sf2 * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * e
        common = sf2 * (5.0 / 3.0) * (1.0 + _SQRT5 * r) * e
        grads = [common * sq[..., q] for q in range(params.d)]
    grads.append(K)
    return K, grads


@dataclass(frozen=True)
class GpTrainingData:
    """Inputs, targets, and known noise variances for one GP."""

    X: np.ndarray
    targets: np.ndarray
    noise_vars: np.ndarray
    prior_mean: float = 0.0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.shape[0] == 1 and np.ndim(self.X) == 1 and np.size(self.targets) > 1:
            X = X.T
        y = np.asarray(self.targets, dtype=float).ravel()
        v = np.asarray(self.noise_vars, dtype=float).ravel()
        if X.shape[0] < 1 or X.shape[0] != y.size or y.size != v.size:
            raise DataError(
                f"GP data shapes disagree: X {X.shape}, targets {y.shape}, noise {v.shape}"
            )
        if np.any(v < 0) or not np.all(np.isfinite(v)) or not np.all(np.isfinite(y)):
            raise DataError("GP noise variances must be finite and >= 0, targets finite")
        for name, arr in (("X", X), ("targets", y), ("noise_vars", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "prior_mean", float(self.prior_mean))

    @property
    def N(self) -> int:
        return self.targets.size

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @classmethod
    def centered(cls, X, targets, noise_vars, floor_rel: float = 1e-8) -> "GpTrainingData":
        """Center targets at their mean and floor the noise variances.

        The floor is ``floor_rel * var(targets)`` (with a tiny absolute
        minimum), preventing a singular ``K + V`` when a local fit collapses.
        """
        y = np.asarray(targets, dtype=float).ravel()
        v = np.asarray(noise_vars, dtype=float).ravel()
        floor = max(floor_rel * float(np.var(y)), 1e-300)
        return cls(X, y, np.maximum(v, floor), float(np.mean(y)))


def stable_cholesky(A: np.ndarray, max_rel_jitter: float = 1e-4) -> np.ndarray:
    """Lower Cholesky factor, adding escalating diagonal jitter on failure.

    The first attempt uses no jitter; subsequent attempts add
    ``1e-10 * mean(diag)`` and grow by 10x up to ``max_rel_jitter * mean(diag)``.
    """
    try:
        return linalg.cholesky(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(A)))
    if not np.isfinite(scale) or scale <= 0:
        raise NumericalError("kernel matrix not PD")
    rel = 1e-10
    eye = np.eye(A.shape[0])
    while rel <= max_rel_jitter * (1 + 1e-12):
        try:
            return linalg.cholesky(A + rel * scale * eye, lower=True, check_finite=False)
        except linalg.LinAlgError:
            rel *= 10.0
    raise NumericalError("kernel matrix not PD")


def log_marginal_likelihood(params: KernelParams, data: GpTrainingData) -> float:
    """``-0.5 log|2 pi (K + V)| - 0.5 r^T (K + V)^{-1} r`` with ``r = y - m``."""
    params.check_finite()
    K = kernel_matrix(params, data.X, data.X) + np.diag(data.noise_vars)
    L = stable_cholesky(K)
    r = data.targets - data.prior_mean
    a = linalg.cho_solve((L, True), r, check_finite=False)
    return float(-0.5 * r @ a - np.sum(np.log(np.diag(L))) - 0.5 * data.N * _LOG_2PI)


def lml_and_grad(params: KernelParams, data: GpTrainingData) -> tuple[float, np.ndarray]:
    """LML and its gradient w.r.t. ``(log lengthscales..., log signal variance)``."""
    K, grads = _kernel_and_grads(params, data.X)
    K = K + np.diag(data.noise_vars)
    L = stable_cholesky(K)
    r = data.targets - data.prior_mean
    a = linalg.cho_solve((L, True), r, check_finite=False)
    lml = float(-0.5 * r @ a - np.sum(np.log(np.diag(L))) - 0.5 * data.N * _LOG_2PI)
    Kinv = linalg.cho_solve((L, True), np.eye(data.N), check_finite=False)
    W = np.outer(a, a) - Kinv
    g = np.array([0.5 * np.sum(W * dK) for dK in grads])
    return lml, g


@dataclass(frozen=True)
class TrainedGp:
    params: KernelParams
    data: GpTrainingData
    chol: np.ndarray
    alpha: np.ndarray
    lml: float

    @classmethod
    def condition(cls, params: KernelParams, data: GpTrainingData) -> "TrainedGp":
        """Cache the Cholesky factor and weights for fixed hyperparameters."""
        params.check_finite()
        K = kernel_matrix(params, data.X, data.X) + np.diag(data.noise_vars)
        L = stable_cholesky(K)
        r = data.targets - data.prior_mean
        a = linalg.cho_solve((L, True), r, check_finite=False)
        lml = float(-0.5 * r @ a - np.sum(np.log(np.diag(L))) - 0.5 * data.N * _LOG_2PI)
        return cls(params, data, L, a, lml)

    def predict(self, Xstar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return posterior_predict(self, Xstar)


def posterior_predict(gp: TrainedGp, Xstar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of the latent function at ``Xstar``."""
    Xs = np.asarray(Xstar, dtype=float)
    if Xs.ndim == 1:
        Xs = Xs[:, None] if gp.params.d == 1 else Xs[None, :]
    Ks = kernel_matrix(gp.params, gp.data.X, Xs)  # (N, m)
    mean = gp.data.prior_mean + Ks.T @ gp.alpha
    v = linalg.solve_triangular(gp.chol, Ks, lower=True, check_finite=False)
    var = kernel_diag(gp.params, Xs.shape[0]) - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)


def _median_abs_diffs(X: np.ndarray, rng: np.random.Generator, cap: int = 400) -> np.ndarray:
    if X.shape[0] > cap:
        X = X[rng.choice(X.shape[0], cap, replace=False)]
    out = np.empty(X.shape[1])
    for q in range(X.shape[1]):
        diffs = np.abs(X[:, None, q] - X[None, :, q])
        nz = diffs[diffs > 0]
        out[q] = np.median(nz) if nz.size else 1.0
    return out


def default_init(data: GpTrainingData, family: str = "se") -> KernelParams:
    """Lengthscale at the median pairwise spacing, signal variance at target variance."""
    rng = np.random.default_rng(0)
    ell = _median_abs_diffs(data.X, rng)
    v = float(np.var(data.targets))
    if not v > 0:
        v = float(np.mean(data.noise_vars)) or 1.0
    return KernelParams(np.log(ell), math.log(v), family)


def _bounds(init: KernelParams, data: GpTrainingData) -> list[tuple[float, float]]:
    span = np.ptp(data.X, axis=0)
    span = np.where(span > 0, span, 1.0)
    lo_ell = np.log(np.minimum(init.lengthscales, span) * 1e-3)
    hi_ell = np.log(np.maximum(init.lengthscales, span) * 1e3)
    v0 = init.log_signal_variance
    return [(float(a), float(b)) for a, b in zip(lo_ell, hi_ell)] + [
        (v0 - math.log(1e10), v0 + math.log(1e4))
    ]


def train_gp(
    data: GpTrainingData,
    family: str = "se",
    n_restarts: int = 5,
    max_iter: int = 200,
    seed: int = 0,
) -> TrainedGp:
    """Maximize the LML over ``n_restarts`` starts; return the best.

    The first start is :func:`default_init`; the others are drawn
    log-uniformly within a factor of 10 of it. Each start's result is kept
    only if it improves on that start's own value.
    """
    init = default_init(data, family)
    bounds = _bounds(init, data)
    rng = np.random.default_rng(seed)
    starts = [init.as_vector()]
    for _ in range(max(n_restarts, 1) - 1):
        jitter = rng.uniform(-math.log(10.0), math.log(10.0), size=init.d + 1)
        starts.append(init.as_vector() + jitter)

    def neg(theta):
        try:
            lml, g = lml_and_grad(KernelParams.from_vector(theta, family), data)
        except NumericalError:
            return 1e300, np.zeros_like(theta)
        if not np.isfinite(lml):
            return 1e300, np.zeros_like(theta)
        return -lml, -g

    best_theta, best_val = None, -np.inf
    for theta0 in starts:
        theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])
        f0, _ = neg(theta0)
        cand_theta, cand_val = theta0, -f0
        res = optimize.minimize(
            neg,
            theta0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": max_iter},
        )
        if np.isfinite(res.fun) and -res.fun > cand_val:
            cand_theta, cand_val = res.x, -res.fun
        if cand_val > best_val:
            best_theta, best_val = cand_theta, cand_val
    if best_theta is None or not np.isfinite(best_val) or best_val <= -1e299:
        raise NumericalError("GP training failed: kernel matrix not PD at every start")
    return TrainedGp.condition(KernelParams.from_vector(best_theta, family), data)
