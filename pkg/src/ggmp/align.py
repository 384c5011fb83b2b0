"""Cross-input component labelling for local mixture fits.

Mixture fits are only defined up to a permutation of their components, so
before one GP can be trained per component the labels have to agree across
inputs. Two strategies:

* ``sort_align`` -- order components by mean (scalar outputs);
* ``hungarian_align`` -- walk the inputs in a fixed order and match each
  fit to its predecessor by solving a linear assignment problem whose cost
  is a Gaussian dissimilarity (squared 2-Wasserstein by default).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError, NumericalError
from .mixture import LocalMixtureFit

SORT = "sort"
HUNGARIAN = "hungarian"


@dataclass(frozen=True)
class AlignmentPlan:
    """``permutations[n][k]`` is the local index that receives global label ``k``."""

    permutations: np.ndarray
    method: str
    input_order: tuple[int, ...]

    def __post_init__(self):
        perms = np.asarray(self.permutations, dtype=int)
        if perms.ndim != 2:
            raise DataError("permutations must be an (N, K) array")
        K = perms.shape[1]
        for n, row in enumerate(perms):
            if not np.array_equal(np.sort(row), np.arange(K)):
                raise DataError(f"permutation {n} is not a bijection: {row}")
        perms.setflags(write=False)
        object.__setattr__(self, "permutations", perms)
        object.__setattr__(self, "input_order", tuple(int(i) for i in self.input_order))

    @property
    def N(self) -> int:
        return self.permutations.shape[0]

    @property
    def K(self) -> int:
        return self.permutations.shape[1]

    def inverse(self) -> "AlignmentPlan":
        inv = np.argsort(self.permutations, axis=1)
        return AlignmentPlan(inv, self.method, self.input_order)

    def to_dict(self) -> dict:
        return {
            "permutations": self.permutations.tolist(),
            "method": self.method,
            "input_order": list(self.input_order),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AlignmentPlan":
        return cls(np.asarray(d["permutations"], dtype=int), d["method"], d["input_order"])

    @classmethod
    def identity(cls, N: int, K: int, method: str = SORT) -> "AlignmentPlan":
        return cls(np.tile(np.arange(K), (N, 1)), method, tuple(range(N)))


def sort_align(fits: Sequence[LocalMixtureFit]) -> AlignmentPlan:
    """Order components by ascending mean; ties by variance, then index.

    Multivariate fits are sorted on their first output coordinate.
    """
    perms = []
    for fit in fits:
        m = fit.means[:, 0]
        v = fit.covs[:, 0, 0]
        perms.append(np.lexsort((np.arange(fit.K), v, m)))
    return AlignmentPlan(np.array(perms, dtype=int).reshape(len(fits), -1), SORT, tuple(range(len(fits))))


def _as_cov(S, p: int) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim == 0:
        S = S.reshape(1, 1)
    elif S.ndim == 1:
        S = np.diag(S) if S.size == p and p > 1 else S.reshape(1, 1)
    if S.shape != (p, p):
        raise DataError(f"covariance shape {S.shape} does not match dimension {p}")
    return S


def psd_sqrt(S: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigendecomposition, clamping tiny negative eigenvalues."""
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    if vals.min() < -1e-10 * scale:
        raise NumericalError(f"matrix is not PSD (min eigenvalue {vals.min():.3g})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def w2_gaussian_sq(mu1, S1, mu2, S2) -> float:
    """Squared 2-Wasserstein distance between two Gaussians.

    ``|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)``; scalar
    means and variances are accepted for the univariate case.
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    if mu1.shape != mu2.shape:
        raise DataError("mean dimensions differ")
    p = mu1.size
    A = _as_cov(S1, p)
    B = _as_cov(S2, p)
    if p == 1:
        a, b = float(A[0, 0]), float(B[0, 0])
        if a < 0 or b < 0:
            raise NumericalError("negative variance")
        return float((mu1[0] - mu2[0]) ** 2 + (np.sqrt(a) - np.sqrt(b)) ** 2)
    rA = psd_sqrt(A)
    cross = psd_sqrt(rA @ B @ rA)
    val = float(np.sum((mu1 - mu2) ** 2) + np.trace(A) + np.trace(B) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def hellinger_gaussian_sq(mu1, S1, mu2, S2) -> float:
    """Squared Hellinger distance between two Gaussians (closed form)."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    p = mu1.size
    A = _as_cov(S1, p)
    B = _as_cov(S2, p)
    M = 0.5 * (A + B)
    _, ldA = np.linalg.slogdet(A)
    _, ldB = np.linalg.slogdet(B)
    _, ldM = np.linalg.slogdet(M)
    diff = mu1 - mu2
    quad = float(diff @ np.linalg.solve(M, diff))
    log_bc = 0.25 * ldA + 0.25 * ldB - 0.5 * ldM - 0.125 * quad
    return float(max(0.0, 1.0 - np.exp(log_bc)))


COSTS: dict[str, Callable] = {"w2": w2_gaussian_sq, "hellinger": hellinger_gaussian_sq}


def cost_matrix(prev: LocalMixtureFit, cur: LocalMixtureFit, cost: str = "w2") -> np.ndarray:
    """``C[k, j]`` = dissimilarity of previous component ``k`` and current component ``j``."""
    fn = COSTS[cost]
    K = prev.K
    C = np.empty((K, cur.K))
    for k in range(K):
        for j in range(cur.K):
            C[k, j] = fn(prev.means[k], prev.covs[k], cur.means[j], cur.covs[j])
    return C


def solve_assignment(C: np.ndarray) -> np.ndarray:
    """Permutation ``pi`` minimizing ``sum_k C[k, pi[k]]`` (exact, O(K^3))."""
    rows, cols = linear_sum_assignment(C)
    perm = np.empty(C.shape[0], dtype=int)
    perm[rows] = cols
    return perm


def assignment_cost(C: np.ndarray, perm) -> float:
    perm = np.asarray(perm, dtype=int)
    return float(C[np.arange(C.shape[0]), perm].sum())


def lexicographic_order(X: np.ndarray) -> list[int]:
    """Indices of the rows of ``X`` sorted lexicographically (first column first)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    keys = tuple(X[:, q] for q in reversed(range(X.shape[1])))
    return list(np.lexsort(keys))


def nearest_neighbor_order(X: np.ndarray) -> list[int]:
    """Greedy nearest-neighbour chain starting at the lexicographically first input."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    start = lexicographic_order(X)[0]
    remaining = set(range(X.shape[0])) - {start}
    order = [start]
    while remaining:
        last = X[order[-1]]
        idx = np.array(sorted(remaining))
        nxt = int(idx[np.argmin(np.sum((X[idx] - last) ** 2, axis=1))])
        order.append(nxt)
        remaining.remove(nxt)
    return order


def hungarian_align(
    fits: Sequence[LocalMixtureFit],
    order: Sequence[int] | None = None,
    cost: str = "w2",
    reference: str = "identity",
) -> AlignmentPlan:
    """Sequentially match each fit to its predecessor along ``order``.

    The first input in ``order`` keeps its labels (``reference="identity"``)
    or has them sorted by mean (``reference="sort"``). Every later input is
    relabelled to minimise the summed cost against the already-aligned
    previous input.
    """
    if not fits:
        raise DataError("no fits to align")
    if cost not in COSTS:
        raise DataError(f"unknown alignment cost {cost!r}")
    N, K = len(fits), fits[0].K
    order = list(range(N)) if order is None else [int(i) for i in order]
    if sorted(order) != list(range(N)):
        raise DataError("order must be a permutation of the input indices")
    perms = np.zeros((N, K), dtype=int)
    first = order[0]
    if reference == "sort":
        perms[first] = sort_align([fits[first]]).permutations[0]
    else:
        perms[first] = np.arange(K)
    prev = fits[first].permuted(perms[first])
    for n in order[1:]:
        if K == 1:
            perms[n] = [0]
            continue
        perm = solve_assignment(cost_matrix(prev, fits[n], cost))
        perms[n] = perm
        prev = fits[n].permuted(perm)
    return AlignmentPlan(perms, HUNGARIAN, tuple(order))


def apply_alignment(fits: Sequence[LocalMixtureFit], plan: AlignmentPlan) -> list[LocalMixtureFit]:
    """Permute each fit's (weight, mean, covariance) tuples jointly."""
    if len(fits) != plan.N:
        raise DataError(f"plan covers {plan.N} inputs, got {len(fits)} fits")
    return [fit.permuted(perm) for fit, perm in zip(fits, plan.permutations)]
