"""Divergences, joint sample metrics, calibration and scoring.

Conventions (all documented in the README):

* predicted densities are evaluated analytically on the reference grid and
  renormalised there before comparison;
* densities are floored at 1e-12 before logarithms in the KL terms;
* the energy distance uses V-statistics (all pairs, including the
  diagonal) for every term, so identical sample sets score exactly 0;
* sliced-W1 averages 64 seeded random directions by default.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.spatial.distance import cdist
from scipy.special import ndtr

from .dataset import GriddedDensity
from .errors import DataError

DENSITY_FLOOR = 1e-12
COVERAGE_LEVELS = (0.5, 0.9, 0.95)
DIVERGENCE_NAMES = ("bhattacharyya", "symmetric_kl", "wasserstein1", "l1")
CALIBRATION_NAMES = ("pit_mean", "pit_std", "cov50", "cov90", "cov95", "log_score", "crps")


@dataclass(frozen=True)
class DensityPair:
    """Reference and predicted densities on a shared grid."""

    grid: np.ndarray
    p_ref: np.ndarray
    q_pred: np.ndarray
    quad_weights: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        p = np.asarray(self.p_ref, dtype=float)
        q = np.asarray(self.q_pred, dtype=float)
        w = np.asarray(self.quad_weights, dtype=float)
        if not (g.shape == p.shape == q.shape == w.shape) or g.ndim != 1:
            raise DataError("density pair arrays must be 1-d and equally long")
        if np.any(np.diff(g) <= 0):
            raise DataError("grid must be strictly increasing")
        for name, d in (("reference", p), ("predicted", q)):
            if np.any(d < 0):
                raise DataError(f"{name} density is negative")
            mass = float(d @ w)
            if abs(mass - 1.0) > 1e-6:
                raise DataError(f"{name} density is not normalised (mass {mass:.8g})")
        for name, a in (("grid", g), ("p_ref", p), ("q_pred", q), ("quad_weights", w)):
            object.__setattr__(self, name, a)

    @classmethod
    def from_reference(cls, ref: GriddedDensity, q_values, renormalize: bool = True) -> "DensityPair":
        q = np.asarray(q_values, dtype=float)
        if renormalize:
            q = q / float(q @ ref.quad_weights)
        return cls(ref.grid, ref.density, q, ref.quad_weights)


def _cumulative(d: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Trapezoid running integral starting at 0 at the first node."""
    out = np.zeros_like(d)
    out[1:] = np.cumsum(0.5 * (d[1:] + d[:-1]) * np.diff(grid))
    return out


def divergences(pair: DensityPair) -> dict[str, float]:
    """Bhattacharyya, symmetric KL, W1 (via CDFs) and L1 distance."""
    p, q, w = pair.p_ref, pair.q_pred, pair.quad_weights
    bc = float(np.sum(np.sqrt(p * q) * w))
    bhat = -np.log(min(max(bc, 1e-300), 1.0))
    pf = np.maximum(p, DENSITY_FLOOR)
    qf = np.maximum(q, DENSITY_FLOOR)
    lr = np.log(pf) - np.log(qf)
    skl = float(np.sum(p * lr * w) - np.sum(q * lr * w))
    P = np.cumsum(p * w)
    Q = np.cumsum(q * w)
    w1 = float(np.sum(np.abs(P - Q) * w))
    l1 = float(np.sum(np.abs(p - q) * w))
    return {"bhattacharyya": float(bhat), "symmetric_kl": max(skl, 0.0), "wasserstein1": w1, "l1": l1}


def _as_samples(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def energy_distance(X, Y) -> float:
    """``2 E|X - Y| - E|X - X'| - E|Y - Y'|`` with V-statistic averages."""
    X, Y = _as_samples(X), _as_samples(Y)
    xy = cdist(X, Y).mean()
    xx = cdist(X, X).mean()
    yy = cdist(Y, Y).mean()
    return float(max(2.0 * xy - xx - yy, 0.0))


def wasserstein1_samples(a, b) -> float:
    """1-d empirical W1 between two sample sets (sorted-quantile formula)."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    # unequal sizes: integrate |F_a - F_b| over the merged support
    allv = np.concatenate([a, b])
    allv.sort()
    Fa = np.searchsorted(a, allv[:-1], side="right") / a.size
    Fb = np.searchsorted(b, allv[:-1], side="right") / b.size
    return float(np.sum(np.abs(Fa - Fb) * np.diff(allv)))


def random_directions(p: int, n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n, p))
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def sliced_w1(X, Y, n_slices: int = 64, seed: int = 0, directions=None) -> float:
    X, Y = _as_samples(X), _as_samples(Y)
    D = random_directions(X.shape[1], n_slices, seed) if directions is None else np.atleast_2d(directions)
    return float(np.mean([wasserstein1_samples(X @ u, Y @ u) for u in D]))


def joint_divergences(samples_ref, samples_pred, n_slices: int = 64, seed: int = 0) -> dict[str, float]:
    X, Y = _as_samples(samples_ref), _as_samples(samples_pred)
    if X.size == 0 or Y.size == 0:
        raise DataError("sample sets must be nonempty")
    if X.shape[1] != Y.shape[1]:
        raise DataError("sample sets differ in dimension")
    return {"energy": energy_distance(X, Y), "sliced_w1": sliced_w1(X, Y, n_slices, seed)}


# ---------------------------------------------------------------------------
# calibration and scoring
# ---------------------------------------------------------------------------


@dataclass
class CalibrationRecord:
    pit_values: list[float] = field(default_factory=list)
    coverage_hits: dict[float, list[bool]] = field(default_factory=lambda: {g: [] for g in COVERAGE_LEVELS})
    log_scores: list[float] = field(default_factory=list)
    crps_values: list[float] = field(default_factory=list)

    def summary(self) -> dict[str, float]:
        pit = np.asarray(self.pit_values)
        return {
            "pit_mean": float(pit.mean()),
            "pit_std": float(pit.std()),
            "cov50": float(np.mean(self.coverage_hits[0.5])),
            "cov90": float(np.mean(self.coverage_hits[0.9])),
            "cov95": float(np.mean(self.coverage_hits[0.95])),
            "log_score": float(np.mean(self.log_scores)),
            "crps": float(np.mean(self.crps_values)),
        }


def crps_mixture(mix, y, n_grid: int = 4001) -> np.ndarray:
    """CRPS of a scalar mixture by Simpson quadrature of ``(F(z) - 1{z >= y})^2``.

    The grid spans the mixture's components +/- 10 standard deviations (and
    every observation); outside it the integrand is below 1e-23.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mu = mix.means[:, 0]
    sd = np.sqrt(mix.vars[:, 0])
    lo = min(float(np.min(mu - 10 * sd)), float(y.min()))
    hi = max(float(np.max(mu + 10 * sd)), float(y.max()))
    z = np.linspace(lo, hi, n_grid)
    F = mix.cdf(z)
    out = np.empty(y.size)
    h = z[1] - z[0]
    for i, yi in enumerate(y):
        # split at yi so the step is integrated exactly; nodes closer than h/2
        # to yi are dropped to keep neighbouring Simpson panels comparable
        Fy = mix.cdf(np.array([yi]))[0]
        left = z < yi - 0.5 * h
        right = z > yi + 0.5 * h
        zl, Fl = np.append(z[left], yi), np.append(F[left], Fy)
        zr, Fr = np.insert(z[right], 0, yi), np.insert(F[right], 0, Fy)
        out[i] = _simpson(Fl**2, zl) + _simpson((1.0 - Fr) ** 2, zr)
    return out


def _simpson(f, x) -> float:
    return float(simpson(f, x=x)) if x.size > 2 else float(np.trapezoid(f, x))


def crps_gaussian(mu: float, sigma: float, y: float) -> float:
    """Closed-form CRPS of ``N(mu, sigma^2)``."""
    z = (y - mu) / sigma
    pdf = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    return float(sigma * (z * (2 * ndtr(z) - 1) + 2 * pdf - 1 / np.sqrt(np.pi)))


def crps_ensemble(draws, y: float) -> tuple[float, float]:
    """Monte Carlo CRPS ``E|X - y| - 0.5 E|X - X'|`` and its standard error.

    ``E|X - X'|`` uses independent pairs from two halves of the draws so the
    per-pair terms are i.i.d.
    """
    x = np.asarray(draws, dtype=float).ravel()
    h = x.size // 2
    a, b = x[:h], x[h : 2 * h]
    terms = 0.5 * (np.abs(a - y) + np.abs(b - y)) - 0.5 * np.abs(a - b)
    return float(terms.mean()), float(terms.std(ddof=1) / np.sqrt(h))


def calibration(model, test_inputs, test_blocks: Sequence) -> tuple[CalibrationRecord, dict[str, float]]:
    """PIT, central-interval coverage, log score and CRPS on held-out samples.

    For multivariate outputs every quantity is computed per output
    coordinate on the marginal mixture and then averaged over coordinates
    (coverage and PIT values are pooled).
    """
    from .model import predictive_mixtures

    mixes = predictive_mixtures(model, test_inputs)
    rec = CalibrationRecord()
    for mix, Y in zip(mixes, test_blocks):
        Y = _as_samples(Y)
        rec.log_scores.append(float(np.mean(mix.log_pdf(Y if mix.p > 1 else Y[:, 0]))))
        crps_j = []
        for j in range(mix.p):
            mj = mix.marginal(j) if mix.p > 1 else mix
            y = Y[:, j]
            rec.pit_values.extend(mj.cdf(y).tolist())
            for g in COVERAGE_LEVELS:
                lo, hi = mj.quantile([(1 - g) / 2, (1 + g) / 2])
                rec.coverage_hits[g].extend(((y >= lo) & (y <= hi)).tolist())
            crps_j.append(float(np.mean(crps_mixture(mj, y))))
        rec.crps_values.append(float(np.mean(crps_j)))
    return rec, rec.summary()


# ---------------------------------------------------------------------------
# evaluation helpers and reports
# ---------------------------------------------------------------------------


def density_divergences(model, test_inputs, references: Sequence[GriddedDensity]) -> list[dict[str, float]]:
    """Per-input divergences against reference densities, predicted on their grids."""
    from .model import predictive_mixtures

    mixes = predictive_mixtures(model, test_inputs)
    out = []
    for mix, ref in zip(mixes, references):
        pair = DensityPair.from_reference(ref, mix.pdf(ref.grid))
        out.append(divergences(pair))
    return out


def sample_divergences(model, test_inputs, test_blocks, n_pred: int = 2000, n_slices: int = 64, seed: int = 0):
    from .model import predictive_mixtures

    mixes = predictive_mixtures(model, test_inputs)
    out = []
    for n, (mix, Y) in enumerate(zip(mixes, test_blocks)):
        draws = mix.sample(n_pred, np.random.default_rng(np.random.SeedSequence([seed, n])))
        out.append(joint_divergences(Y, draws, n_slices, seed))
    return out


def summarize(rows: Iterable[dict[str, float]]) -> dict[str, tuple[float, float]]:
    rows = list(rows)
    if not rows:
        return {}
    return {k: (float(np.mean([r[k] for r in rows])), float(np.std([r[k] for r in rows]))) for k in rows[0]}


REPORT_HEADER = ("model", "K", "metric", "mean", "std")


def report_rows(label: str, K: int, stats: dict[str, tuple[float, float]]) -> list[tuple]:
    return [(label, K, name, mean, std) for name, (mean, std) in stats.items()]


def write_report(path: str | Path, rows: Sequence[tuple], config: dict | None = None) -> None:
    """CSV ``model,K,metric,mean,std``; the effective config is echoed in ``#`` lines first."""
    with open(path, "w", newline="") as fh:
        _write_config_comment(fh, config)
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for label, K, metric, mean, std in rows:
            w.writerow([label, K, metric, f"{mean:.10g}", f"{std:.10g}"])


def write_plot_data(path: str | Path, slices: Sequence[tuple[str, np.ndarray, np.ndarray, np.ndarray]], config=None) -> None:
    """Density slices as ``input_id,y,reference,predicted`` rows."""
    with open(path, "w", newline="") as fh:
        _write_config_comment(fh, config)
        w = csv.writer(fh)
        w.writerow(("input_id", "y", "reference", "predicted"))
        for pid, grid, ref, pred in slices:
            for y, r, q in zip(grid, ref, pred):
                w.writerow([pid, f"{y:.10g}", f"{r:.10g}", f"{q:.10g}"])


def _write_config_comment(fh, config: dict | None) -> None:
    if config is None:
        return
    import json

    fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")


def read_report(path: str | Path) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
