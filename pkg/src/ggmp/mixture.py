"""Per-input Gaussian mixture fitting by EM with k-means++ seeding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .config import EMConfig
from .dataset import SampleBlock
from .errors import DataError

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LocalMixtureFit:
    """Local mixture parameters at one input.

    ``means`` is ``(K, p)`` and ``covs`` is ``(K, p, p)``; for univariate
    outputs ``covs[k, 0, 0]`` is the within-component variance.
    """

    input_id: str
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    responsibilities_sum: np.ndarray
    loglik: float = float("nan")
    n_iter: int = 0
    converged: bool = True
    loglik_trace: tuple[float, ...] = field(default=(), repr=False, compare=False)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def p(self) -> int:
        return self.means.shape[1]

    @property
    def variances(self) -> np.ndarray:
        """Diagonal of each component covariance, ``(K, p)``."""
        return np.diagonal(self.covs, axis1=1, axis2=2).copy()

    def permuted(self, perm) -> "LocalMixtureFit":
        """Relabel: new component ``k`` is old component ``perm[k]``."""
        perm = np.asarray(perm, dtype=int)
        return replace(
            self,
            weights=self.weights[perm],
            means=self.means[perm],
            covs=self.covs[perm],
            responsibilities_sum=self.responsibilities_sum[perm],
        )

    def to_dict(self) -> dict:
        return {
            "input_id": self.input_id,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
            "responsibilities_sum": self.responsibilities_sum.tolist(),
            "loglik": self.loglik,
            "n_iter": self.n_iter,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LocalMixtureFit":
        return cls(
            input_id=d["input_id"],
            weights=np.asarray(d["weights"], dtype=float),
            means=np.asarray(d["means"], dtype=float),
            covs=np.asarray(d["covs"], dtype=float),
            responsibilities_sum=np.asarray(d["responsibilities_sum"], dtype=float),
            loglik=float(d.get("loglik", float("nan"))),
            n_iter=int(d.get("n_iter", 0)),
            converged=bool(d.get("converged", True)),
        )


def component_log_densities(Y: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """``log N(Y_t | m_k, S_k)`` for every sample and component, ``(T, K)``."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    T, p = Y.shape
    K = means.shape[0]
    if p == 1:
        var = covs[:, 0, 0]
        d = Y - means[:, 0][None, :]
        return -0.5 * (d * d / var + np.log(var) + _LOG_2PI)
    out = np.empty((T, K))
    for k in range(K):
        L = np.linalg.cholesky(covs[k])
        z = np.linalg.solve(L, (Y - means[k]).T)
        out[:, k] = -0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * p * _LOG_2PI
    return out


def gmm_log_likelihood(fit: LocalMixtureFit, samples) -> float:
    """``sum_t log sum_k w_k N(Y_t | m_k, S_k)`` via log-sum-exp."""
    Y = np.asarray(samples, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[1] != fit.p:
        raise DataError(f"dimension mismatch: fit has p={fit.p}, samples have {Y.shape[1]}")
    with np.errstate(divide="ignore"):
        logw = np.log(fit.weights)
    lp = component_log_densities(Y, fit.means, fit.covs) + logw
    return float(np.sum(logsumexp(lp, axis=1)))


def kmeans_plusplus(Y: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding of ``K`` centers from the rows of ``Y``."""
    T = Y.shape[0]
    centers = np.empty((K, Y.shape[1]))
    centers[0] = Y[rng.integers(T)]
    d2 = np.sum((Y - centers[0]) ** 2, axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(T, p=d2 / total)
        else:
            idx = rng.integers(T)
        centers[k] = Y[idx]
        d2 = np.minimum(d2, np.sum((Y - centers[k]) ** 2, axis=1))
    return centers


def _clamp_cov(S: np.ndarray, floor: float) -> np.ndarray:
    """Project onto ``{S : S >= floor * I}`` by clamping eigenvalues."""
    if S.shape[0] == 1:
        return np.maximum(S, floor)
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    if vals.min() >= floor:
        return S
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def _variance_floor(Y: np.ndarray, config: EMConfig) -> float:
    total = float(np.mean(np.var(Y, axis=0)))
    return max(config.var_floor_rel * total, config.var_floor_abs)


def _suffstats_1d(Y3, mu, var, logw, buf):
    """Log-likelihood and responsibility-weighted moments for scalar EM.

    ``Y3`` holds ``[1, y, y^2]`` per sample, so the component log-densities
    are one ``(T, 3) @ (3, K)`` product and the statistics
    ``sum r``, ``sum r y``, ``sum r y^2`` are another. Rows whose densities
    all underflow are recomputed in log space.
    """
    K = mu.size
    inv = 0.5 / var
    coef = np.empty((3, K))
    coef[0] = logw - 0.5 * np.log(var) - 0.5 * _LOG_2PI - inv * mu * mu
    coef[1] = 2.0 * inv * mu
    coef[2] = -inv
    np.matmul(Y3, coef, out=buf)
    ll_bad = 0.0
    with np.errstate(under="ignore"):
        np.exp(buf, out=buf)
    tot = buf @ np.ones(K)
    if not np.all(tot > 0):
        # exp underflowed for every component on these rows
        bad = np.flatnonzero(~(tot > 0))
        lp = Y3[bad] @ coef
        m = lp.max(axis=1, keepdims=True)
        e = np.exp(lp - m)
        se = e.sum(axis=1)
        buf[bad] = e / se[:, None]
        tot[bad] = 1.0
        ll_bad = float(np.sum(m[:, 0] + np.log(se)))
    ll = float(np.sum(np.log(tot))) + ll_bad
    S = buf.T @ (Y3 / tot[:, None])
    return ll, S[:, 0], S[:, 1], S[:, 2]


def _em_1d(y, mu, var, w, floor, config, T):
    """EM specialized to scalar outputs.

    ``y`` should be centered; the M-step uses the uncentered moments
    ``mean = s1/s0`` and ``var = s2/s0 - mean^2``.
    """
    Y3 = np.stack([np.ones_like(y), y, y * y], axis=1)
    buf = np.empty((T, w.size))
    trace = []
    converged = False
    prev = -np.inf
    it = 0
    nk = np.full(w.size, T / w.size)
    for it in range(1, config.max_iter + 1):
        with np.errstate(divide="ignore"):
            logw = np.log(w)
        ll, s0, s1, s2 = _suffstats_1d(Y3, mu, var, logw, buf)
        trace.append(ll)
        nk = s0
        if abs(ll - prev) < config.tol * T:
            converged = True
            break
        prev = ll
        dead = nk < 1e-6 * T
        if np.any(dead):
            mu, var, w = _rescue_1d(y, mu, var, w, dead, floor)
            prev = -np.inf
            continue
        w = nk / T
        mu = s1 / nk
        var = np.maximum(s2 / nk - mu * mu, floor)
    return mu, var, w, nk, trace, converged, it


def _rescue_1d(y, mu, var, w, dead, floor):
    # reseed empty components at the samples the current model explains worst
    d = y[:, None] - mu[None, :]
    with np.errstate(divide="ignore"):
        lp = -0.5 * (d * d / var + np.log(var) + _LOG_2PI) + np.log(w)
    order = np.argsort(logsumexp(lp, axis=1))
    mu, var, w = mu.copy(), var.copy(), w.copy()
    for j, k in enumerate(np.flatnonzero(dead)):
        mu[k] = y[order[j % y.size]]
        var[k] = max(float(np.var(y)) / max(w.size, 1), floor)
        w[k] = 1.0 / w.size
    w = w / w.sum()
    return mu, var, w


def _em_nd(Y, mu, covs, w, floor, config, T):
    trace = []
    converged = False
    prev = -np.inf
    K = w.size
    it = 0
    nk = np.full(K, T / K)
    for it in range(1, config.max_iter + 1):
        lp = component_log_densities(Y, mu, covs) + np.log(w)
        lse = logsumexp(lp, axis=1)
        ll = float(lse.sum())
        trace.append(ll)
        r = np.exp(lp - lse[:, None])
        nk = r.sum(axis=0)
        if abs(ll - prev) < config.tol * T:
            converged = True
            break
        prev = ll
        dead = nk < 1e-6 * T
        if np.any(dead):
            order = np.argsort(lse)
            mu, covs, w = mu.copy(), covs.copy(), w.copy()
            for j, k in enumerate(np.flatnonzero(dead)):
                mu[k] = Y[order[j % T]]
                covs[k] = _clamp_cov(np.cov(Y.T, bias=True).reshape(Y.shape[1], -1) / K, floor)
                w[k] = 1.0 / K
            w = w / w.sum()
            prev = -np.inf
            continue
        w = nk / T
        mu = (r.T @ Y) / nk[:, None]
        for k in range(K):
            D = Y - mu[k]
            S = (r[:, k, None] * D).T @ D / nk[k]
            covs[k] = _clamp_cov(S, floor)
    return mu, covs, w, nk, trace, converged, it


def _single_run(Y: np.ndarray, K: int, config: EMConfig, rng: np.random.Generator, floor: float):
    T, p = Y.shape
    centers = kmeans_plusplus(Y, K, rng)
    base = np.var(Y, axis=0)
    w = np.full(K, 1.0 / K)
    if p == 1:
        var0 = np.full(K, max(float(base[0]), floor))
        shift = float(np.mean(Y[:, 0]))
        mu, var, w, nk, trace, conv, it = _em_1d(
            Y[:, 0] - shift, centers[:, 0] - shift, var0, w, floor, config, T
        )
        covs = var[:, None, None].copy()
        means = (mu + shift)[:, None]
    else:
        cov0 = _clamp_cov(np.atleast_2d(np.cov(Y.T, bias=True)), floor)
        covs = np.repeat(cov0[None], K, axis=0)
        means, covs, w, nk, trace, conv, it = _em_nd(Y, centers.copy(), covs, w, floor, config, T)
    return means, covs, w, nk, trace, conv, it


def fit_gmm(
    block: SampleBlock | np.ndarray,
    K: int,
    config: EMConfig | None = None,
    seed: int | np.random.SeedSequence = 0,
    input_id: str | None = None,
) -> LocalMixtureFit:
    """Fit a ``K``-component mixture by EM; keep the best of ``n_restarts`` runs.

    Each run seeds means by k-means++, starts from equal weights and the
    block's overall (co)variance, and iterates until the log-likelihood
    changes by less than ``tol * T`` or ``max_iter`` is hit. Covariances are
    floored at ``var_floor_rel`` times the block variance.
    """
    config = config or EMConfig()
    if isinstance(block, SampleBlock):
        Y, input_id = block.samples, input_id or block.input_id
    else:
        Y = np.asarray(block, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
    input_id = input_id if input_id is not None else ""
    T = Y.shape[0]
    if K < 1:
        raise DataError(f"K must be >= 1, got {K}")
    if T < K:
        raise DataError(f"input {input_id!r}: too few samples for K components ({T} < {K})")
    floor = _variance_floor(Y, config)
    rng = np.random.default_rng(seed)
    best, best_ll = None, -np.inf
    n_runs = 1 if K == 1 else max(config.n_restarts, 1)
    for _ in range(n_runs):
        means, covs, w, nk, trace, conv, it = _single_run(Y, K, config, rng, floor)
        fit = LocalMixtureFit(
            input_id=input_id,
            weights=w / w.sum(),
            means=np.asarray(means, dtype=float),
            covs=np.asarray(covs, dtype=float),
            responsibilities_sum=np.asarray(nk, dtype=float),
            n_iter=int(it),
            converged=bool(conv),
            loglik_trace=tuple(trace),
        )
        # the trace lags one M-step behind when max_iter stops the run
        ll = trace[-1] if conv else gmm_log_likelihood(fit, Y)
        if best is None or ll > best_ll:
            best, best_ll = fit, ll
    return replace(best, loglik=float(best_ll))


def bic(fit: LocalMixtureFit, T: int) -> float:
    """Bayesian information criterion of a fit (lower is better); diagnostic only."""
    p = fit.p
    n_params = (fit.K - 1) + fit.K * p + fit.K * p * (p + 1) // 2
    return -2.0 * fit.loglik + n_params * math.log(T)
