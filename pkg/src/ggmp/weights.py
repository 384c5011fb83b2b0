"""Distributional log-likelihood and mixture-weight optimisation.

Every objective here has the form

    f(w) = sum_r alpha_r log sum_k w_{n(r) k} q_k(y_r)

where the rows ``r`` are either samples (``alpha = 1/T_n``) or grid nodes
(``alpha = p_n(y) dy``) belonging to input ``n(r)``. The component
log-densities are fixed once the GPs are trained, so the table stores them
row-wise after subtracting each row's maximum; the weight optimisers only
ever need matrix-vector products against that table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .dataset import GriddedDensity
from .errors import DataError

_LOG_2PI = np.log(2.0 * np.pi)
WEIGHT_FLOOR = 1e-12


def gaussian_logpdf(y: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log-density, summed over the last axis."""
    return -0.5 * np.sum(_LOG_2PI + np.log(var) + (y - mean) ** 2 / var, axis=-1)


@dataclass(frozen=True)
class ComponentDensityTable:
    """Row-wise component densities, stored as ``log_q = shift + log(E)``.

    Attributes:
        E: (R, K) array, ``exp(log_q - shift)``; every row has max 1.
        shift: (R,) row maxima of the log-densities.
        alpha: (R,) nonnegative row weights (1/T_n or p_n dy).
        row_input: (R,) index of the input each row belongs to.
        n_inputs: number of inputs N.
    """

    E: np.ndarray
    shift: np.ndarray
    alpha: np.ndarray
    row_input: np.ndarray
    n_inputs: int

    @property
    def K(self) -> int:
        return self.E.shape[1]

    @property
    def log_q(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.shift[:, None] + np.log(self.E)

    @classmethod
    def from_log_densities(cls, log_q: np.ndarray, alpha, row_input, n_inputs: int | None = None):
        log_q = np.asarray(log_q, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        row_input = np.asarray(row_input, dtype=int)
        if log_q.ndim != 2 or log_q.shape[0] != alpha.size or alpha.size != row_input.size:
            raise DataError("log-density table, row weights and row inputs disagree in length")
        if np.any(alpha < 0):
            raise DataError("row weights must be nonnegative")
        shift = log_q.max(axis=1)
        if not np.all(np.isfinite(shift)):
            raise DataError("every row needs at least one component with finite density")
        E = np.exp(log_q - shift[:, None])
        n = int(row_input.max()) + 1 if n_inputs is None else int(n_inputs)
        return cls(E, shift, alpha, row_input, n)

    @classmethod
    def from_samples(cls, means, variances, blocks: Sequence[np.ndarray]) -> "ComponentDensityTable":
        """Sample form: every draw of input ``n`` gets weight ``1/T_n``.

        ``means`` and ``variances`` have shape (N, K, p); components are
        diagonal Gaussians.
        """
        means, variances = _check_params(means, variances, len(blocks))
        logs, alphas, rows = [], [], []
        for n, Y in enumerate(blocks):
            Y = np.asarray(Y, dtype=float)
            if Y.ndim == 1:
                Y = Y[:, None]
            logs.append(gaussian_logpdf(Y[:, None, :], means[n][None], variances[n][None]))
            alphas.append(np.full(Y.shape[0], 1.0 / Y.shape[0]))
            rows.append(np.full(Y.shape[0], n))
        return cls.from_log_densities(np.vstack(logs), np.concatenate(alphas), np.concatenate(rows), len(blocks))

    @classmethod
    def from_grids(cls, means, variances, grids: Sequence[GriddedDensity]) -> "ComponentDensityTable":
        """Quadrature form: node ``l`` of input ``n`` gets weight ``p_n(y_l) dy_l``."""
        means, variances = _check_params(means, variances, len(grids))
        if means.shape[2] != 1:
            raise DataError("gridded objective needs scalar outputs")
        logs, alphas, rows = [], [], []
        for n, g in enumerate(grids):
            y = g.grid[:, None, None]
            logs.append(gaussian_logpdf(y, means[n][None], variances[n][None]))
            alphas.append(g.density * g.quad_weights)
            rows.append(np.full(g.grid.size, n))
        return cls.from_log_densities(np.vstack(logs), np.concatenate(alphas), np.concatenate(rows), len(grids))


def _check_params(means, variances, N: int):
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if means.ndim == 2:
        means = means[:, :, None]
        variances = variances[:, :, None]
    if means.shape != variances.shape or means.shape[0] != N:
        raise DataError(f"component parameters {means.shape} do not match {N} inputs")
    if np.any(variances <= 0):
        raise DataError("component variances must be positive")
    return means, variances


def _row_weights(table: ComponentDensityTable, weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1:
        if w.size != table.K:
            raise DataError(f"expected {table.K} weights, got {w.size}")
        return w
    if w.shape != (table.n_inputs, table.K):
        raise DataError(f"per-input weights must have shape {(table.n_inputs, table.K)}")
    return w[table.row_input]


def _mix(table: ComponentDensityTable, weights) -> np.ndarray:
    w = _row_weights(table, weights)
    if w.ndim == 1:
        return table.E @ w
    return np.einsum("rk,rk->r", table.E, w)


def dist_loglik(table: ComponentDensityTable, weights) -> float:
    """``sum_r alpha_r log q_{n(r)}(y_r)`` for shared (K,) or per-input (N, K) weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.allclose(w.sum(axis=-1), 1.0, atol=1e-8):
        raise DataError("weights must lie on the simplex")
    with np.errstate(divide="ignore"):
        return float(table.alpha @ (table.shift + np.log(_mix(table, w))))


def per_input_loglik(table: ComponentDensityTable, weights) -> np.ndarray:
    """The objective split by input (length N)."""
    with np.errstate(divide="ignore"):
        terms = table.alpha * (table.shift + np.log(_mix(table, weights)))
    return np.bincount(table.row_input, weights=terms, minlength=table.n_inputs)


def lemma1_decomposition(p: GriddedDensity, q) -> tuple[float, float, float]:
    """Split the expected log-density into entropy and forward KL.

    Returns ``(int p log q, H(p), KL(p || q))`` on the grid of ``p``, which
    satisfy ``int p log q = -H(p) - KL(p || q)``. Where ``q`` vanishes on
    the support of ``p`` the KL is ``+inf`` and the first term ``-inf``.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != p.density.shape:
        raise DataError("q must be evaluated on the grid of p")
    if np.any(q < 0):
        raise DataError("q must be nonnegative")
    a = p.density * p.quad_weights
    pos = p.density > 0
    if np.any(q[pos] == 0):
        return float("-inf"), _entropy(p), float("inf")
    loglik = float(np.sum(a[pos] * np.log(q[pos])))
    kl = float(np.sum(a[pos] * (np.log(p.density[pos]) - np.log(q[pos]))))
    return loglik, _entropy(p), kl


def _entropy(p: GriddedDensity) -> float:
    pos = p.density > 0
    return float(-np.sum(p.density[pos] * p.quad_weights[pos] * np.log(p.density[pos])))


@dataclass(frozen=True)
class SharedWeightResult:
    weights: np.ndarray
    objective: float
    objective_equal: float
    n_iter: int
    converged: bool
    grad_norm: float


def optimize_shared_weights(
    table: ComponentDensityTable,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    init=None,
) -> SharedWeightResult:
    """Maximise the (concave) objective over the simplex by exponentiated gradient.

    Starts from uniform weights (or ``init``), uses Armijo backtracking and
    grows the step after each accepted move. Stops when
    ``|w * (g / A - 1)|`` drops below ``tol``, where ``A = sum alpha``; this
    is the simplex-projected gradient of the normalised objective and it
    vanishes exactly at the KKT point.
    """
    K = table.K
    A = float(table.alpha.sum())
    if A <= 0:
        raise DataError("objective has no mass")
    w = np.full(K, 1.0 / K) if init is None else _floor_renorm(np.asarray(init, dtype=float))
    f_eq = dist_loglik(table, np.full(K, 1.0 / K))

    def value_grad(w):
        mix = table.E @ w
        with np.errstate(divide="ignore"):
            f = float(table.alpha @ (table.shift + np.log(mix)))
        g = table.E.T @ (table.alpha / mix)
        return f, g / A

    f, g = value_grad(w)
    eta = 1.0
    converged = False
    it = 0
    gnorm = float(np.linalg.norm(w * (g - 1.0)))
    for it in range(1, max_iter + 1):
        if gnorm < tol or K == 1:
            converged = True
            break
        while True:
            z = np.log(w) + eta * (g - g.max())
            w_new = _floor_renorm(np.exp(z - z.max()))
            f_new, g_new = value_grad(w_new)
            # Armijo on the normalised objective
            if np.isfinite(f_new) and (f_new - f) / A >= 1e-4 * float(g @ (w_new - w)):
                break
            eta *= 0.5
            if eta < 1e-20:
                break
        if eta < 1e-20 or f_new < f:
            # no ascent direction left at machine precision
            converged = gnorm < np.sqrt(tol)
            break
        step = np.abs(w_new - w).max()
        w, f, g = w_new, f_new, g_new
        gnorm = float(np.linalg.norm(w * (g - 1.0)))
        eta = min(eta * 2.0, 1e8)
        if step == 0.0:
            converged = True
            break
    return SharedWeightResult(w, f, f_eq, it, converged, gnorm)


def _floor_renorm(w: np.ndarray) -> np.ndarray:
    w = np.maximum(w, WEIGHT_FLOOR)
    return w / w.sum()


def softmax_anchor(Z: np.ndarray) -> np.ndarray:
    """Softmax over ``[Z, 0]`` (the last class is the anchor with logit 0)."""
    Z = np.concatenate([Z, np.zeros(Z.shape[:-1] + (1,))], axis=-1)
    Z = Z - Z.max(axis=-1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class InputWeightResult:
    """Softmax-linear weights in standardised input coordinates."""

    beta: np.ndarray  # (K-1, d)
    b: np.ndarray  # (K-1,)
    x_mean: np.ndarray
    x_std: np.ndarray
    objective: float
    objective_shared: float
    converged: bool

    def weights_at(self, X) -> np.ndarray:
        return softmax_weights(self.beta, self.b, self.x_mean, self.x_std, X)


def softmax_weights(beta, b, x_mean, x_std, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if np.size(x_mean) == 1 else X[None, :]
    Xs = (X - x_mean) / x_std
    return softmax_anchor(Xs @ np.asarray(beta).T + np.asarray(b))


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def optimize_xdep_weights(
    table: ComponentDensityTable,
    X,
    shared: np.ndarray,
    max_iter: int = 1000,
    tol: float = 1e-10,
) -> InputWeightResult:
    """Fit ``w(x) = softmax(beta x + b)`` by L-BFGS from the shared solution.

    Inputs are standardised per coordinate; the last component is the
    anchor class. Starting at ``beta = 0`` and ``b_k = log(w_k / w_K)``
    reproduces the shared weights exactly, so the returned objective is
    never below the shared one.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N, d = X.shape
    K = table.K
    if N != table.n_inputs:
        raise DataError(f"table has {table.n_inputs} inputs, X has {N}")
    x_mean, x_std = standardize(X)
    Xs = (X - x_mean) / x_std
    shared = _floor_renorm(np.asarray(shared, dtype=float))
    f_shared = dist_loglik(table, shared)
    if K == 1:
        return InputWeightResult(np.zeros((0, d)), np.zeros(0), x_mean, x_std, f_shared, f_shared, True)

    A = float(table.alpha.sum())
    Xa = np.hstack([Xs, np.ones((N, 1))])  # (N, d+1)
    theta0 = np.zeros((K - 1, d + 1))
    theta0[:, d] = np.log(shared[:-1]) - np.log(shared[-1])
    big = 1e100

    def negobj(theta_flat):
        theta = theta_flat.reshape(K - 1, d + 1)
        W = softmax_anchor(Xa @ theta.T)  # (N, K)
        Wr = W[table.row_input]
        num = table.E * Wr
        mix = num.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = float(table.alpha @ (table.shift + np.log(mix)))
            if not np.isfinite(f):
                return big, np.zeros_like(theta_flat)
            R = num / mix[:, None]
        aR = table.alpha[:, None] * R
        G = np.column_stack([np.bincount(table.row_input, weights=aR[:, k], minlength=N) for k in range(K)])
        G -= np.bincount(table.row_input, weights=table.alpha, minlength=N)[:, None] * W
        grad = G[:, :-1].T @ Xa  # (K-1, d+1)
        return -f / A, -grad.ravel() / A

    res = optimize.minimize(
        negobj,
        theta0.ravel(),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15},
    )
    theta = res.x.reshape(K - 1, d + 1)
    f_opt = -res.fun * A
    if not np.isfinite(f_opt) or f_opt < f_shared:
        theta, f_opt = theta0, f_shared
    return InputWeightResult(theta[:, :d].copy(), theta[:, d].copy(), x_mean, x_std, float(f_opt), f_shared, bool(res.success))


def relative_lift(L_opt: float, L_ref: float) -> float:
    """Percentage improvement ``(L_opt - L_ref) / |L_ref| * 100``."""
    if L_ref == 0:
        raise ZeroDivisionError("reference objective is zero")
    return (L_opt - L_ref) / abs(L_ref) * 100.0
