"""The GGMP pipeline: local fits, alignment, component GPs, weights, prediction.

A fitted :class:`GgmpModel` holds one GP per (component, output coordinate).
At a query input ``x*`` the GP for component ``k`` and coordinate ``j``
gives a latent mean ``mu`` and variance ``nu``; adding the averaged
within-component training variance ``sbar2[k, j]`` turns it into the
Gaussian ``N(mu, nu + sbar2)``. The predictive density is the weighted sum
of those diagonal Gaussians.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.special import logsumexp, ndtr

from . import align as align_mod
from .config import FitConfig
from .dataset import DistributionValuedDataset, histograms
from .errors import DataError, GgmpError, NumericalError, SchemaError, StageError
from .gp import GpTrainingData, KernelParams, TrainedGp, posterior_predict, train_gp
from .mixture import LocalMixtureFit, fit_gmm
from .weights import (
    ComponentDensityTable,
    dist_loglik,
    optimize_shared_weights,
    optimize_xdep_weights,
    softmax_weights,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = "ggmp-model/1"
_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# weight models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EqualWeights:
    K: int

    def weights_at(self, X: np.ndarray) -> np.ndarray:
        return np.full((X.shape[0], self.K), 1.0 / self.K)

    def to_dict(self) -> dict:
        return {"kind": "equal", "K": self.K}


@dataclass(frozen=True)
class SharedWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise DataError("shared weights must lie on the simplex")
        object.__setattr__(self, "w", w)

    @property
    def K(self) -> int:
        return self.w.size

    def weights_at(self, X: np.ndarray) -> np.ndarray:
        return np.tile(self.w, (X.shape[0], 1))

    def to_dict(self) -> dict:
        return {"kind": "shared", "w": self.w.tolist()}


@dataclass(frozen=True)
class InputDependentWeights:
    """``w(x) = softmax([beta @ z + b, 0])`` with ``z`` the standardised input."""

    beta: np.ndarray
    b: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray

    @property
    def K(self) -> int:
        return np.size(self.b) + 1

    def weights_at(self, X: np.ndarray) -> np.ndarray:
        return softmax_weights(self.beta, self.b, self.x_mean, self.x_std, X)

    def to_dict(self) -> dict:
        return {
            "kind": "input",
            "beta": np.asarray(self.beta).tolist(),
            "b": np.asarray(self.b).tolist(),
            "x_mean": np.asarray(self.x_mean).tolist(),
            "x_std": np.asarray(self.x_std).tolist(),
        }


def weight_model_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "equal":
        return EqualWeights(int(d["K"]))
    if kind == "shared":
        return SharedWeights(np.asarray(d["w"], dtype=float))
    if kind == "input":
        return InputDependentWeights(
            np.asarray(d["beta"], dtype=float).reshape(len(d["b"]), -1),
            np.asarray(d["b"], dtype=float),
            np.asarray(d["x_mean"], dtype=float),
            np.asarray(d["x_std"], dtype=float),
        )
    raise SchemaError(f"unknown weight model kind {kind!r}")


# ---------------------------------------------------------------------------
# predictive mixture
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictiveMixture:
    """K-component Gaussian mixture with diagonal covariances."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, p)
    vars: np.ndarray  # (K, p)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        v = np.asarray(self.vars, dtype=float)
        if m.ndim == 1:
            m, v = m[:, None], v[:, None]
        if np.any(v <= 0):
            raise NumericalError("component variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "vars", v)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def p(self) -> int:
        return self.means.shape[1]

    def _as_points(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.p == 1:
            return y.reshape(-1, 1)
        return np.atleast_2d(y)

    def component_log_pdf(self, y) -> np.ndarray:
        Y = self._as_points(y)[:, None, :]
        return -0.5 * np.sum(_LOG_2PI + np.log(self.vars) + (Y - self.means) ** 2 / self.vars, axis=-1)

    def log_pdf(self, y) -> np.ndarray:
        """Log-density at each point, via log-sum-exp over components."""
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logsumexp(self.component_log_pdf(y) + logw, axis=1)

    def pdf(self, y) -> np.ndarray:
        return np.exp(self.log_pdf(y))

    def marginal(self, j: int) -> "PredictiveMixture":
        return PredictiveMixture(self.weights, self.means[:, [j]], self.vars[:, [j]])

    def cdf(self, y) -> np.ndarray:
        """Mixture CDF for scalar outputs."""
        if self.p != 1:
            raise DataError("cdf needs a scalar-output mixture; use marginal(j)")
        y = np.asarray(y, dtype=float)
        z = (y[..., None] - self.means[:, 0]) / np.sqrt(self.vars[:, 0])
        return np.clip(ndtr(z) @ self.weights, 0.0, 1.0)

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    @property
    def std_scale(self) -> float:
        """Largest standard deviation of the overall mixture across coordinates."""
        m = self.mean
        second = self.weights @ (self.vars + self.means**2)
        return float(np.sqrt(np.max(second - m**2)))

    def quantile(self, q, tol: float = 1e-10, max_widen: int = 10) -> np.ndarray:
        """Invert the CDF by bisection; the bracket widens if it does not straddle ``q``."""
        if self.p != 1:
            raise DataError("quantile needs a scalar-output mixture")
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if np.any((q <= 0) | (q >= 1)):
            raise DataError("quantile levels must be in (0, 1)")
        sd = np.sqrt(self.vars[:, 0])
        lo = np.full(q.shape, float(np.min(self.means[:, 0] - 10 * sd)))
        hi = np.full(q.shape, float(np.max(self.means[:, 0] + 10 * sd)))
        width = hi[0] - lo[0]
        for _ in range(max_widen + 1):
            bad_lo = self.cdf(lo) > q
            bad_hi = self.cdf(hi) < q
            if not (bad_lo.any() or bad_hi.any()):
                break
            lo = np.where(bad_lo, lo - width, lo)
            hi = np.where(bad_hi, hi + width, hi)
            width *= 2
        else:
            raise NumericalError("quantile bisection could not bracket the target level")
        while np.max(hi - lo) > tol * max(1.0, float(np.max(np.abs(hi)))):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < q
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= np.spacing(np.maximum(np.abs(lo), np.abs(hi))) * 2):
                break
        return 0.5 * (lo + hi)

    def sample(self, n: int, rng: np.random.Generator | int | None = None) -> np.ndarray:
        """Ancestral sampling: a component index, then a diagonal Gaussian draw."""
        rng = np.random.default_rng(rng)
        comp = rng.choice(self.K, size=n, p=self.weights / self.weights.sum())
        z = rng.standard_normal((n, self.p))
        return self.means[comp] + np.sqrt(self.vars[comp]) * z


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass
class GgmpModel:
    """Trained GGMP.

    Attributes:
        gps: ``gps[k][j]`` is the GP for component ``k``, output coordinate ``j``.
        weight_model: EqualWeights, SharedWeights or InputDependentWeights.
        avg_within_var: ``(K, p)`` training mean of the within-component variances.
        alignment: the permutation plan applied to the local fits.
        fits: aligned local fits, one per training input.
    """

    K: int
    p: int
    d: int
    gps: list[list[TrainedGp]]
    weight_model: Any
    avg_within_var: np.ndarray
    alignment: align_mod.AlignmentPlan
    fits: list[LocalMixtureFit]
    input_ids: list[str]
    X_train: np.ndarray
    config: FitConfig
    diagnostics: dict = field(default_factory=dict)

    def predict_params(self, Xstar) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Weights ``(m, K)``, means ``(m, K, p)`` and variances ``(m, K, p)``."""
        Xs = _as_inputs(Xstar, self.d)
        m = Xs.shape[0]
        means = np.empty((m, self.K, self.p))
        vars_ = np.empty((m, self.K, self.p))
        for k in range(self.K):
            for j in range(self.p):
                mu, nu = posterior_predict(self.gps[k][j], Xs)
                means[:, k, j] = mu
                vars_[:, k, j] = nu + self.avg_within_var[k, j]
        return self.weight_model.weights_at(Xs), means, vars_

    def training_params(self) -> tuple[np.ndarray, np.ndarray]:
        """Component means and variances at the training inputs.

        The variance is the GP latent variance plus that input's own
        within-component variance, not the averaged one.
        """
        means = np.empty((len(self.fits), self.K, self.p))
        vars_ = np.empty_like(means)
        S = np.stack([f.variances for f in self.fits])  # (N, K, p)
        for k in range(self.K):
            for j in range(self.p):
                mu, nu = posterior_predict(self.gps[k][j], self.X_train)
                means[:, k, j] = mu
                vars_[:, k, j] = nu + np.maximum(S[:, k, j], self.gps[k][j].data.noise_vars)
        return means, vars_

    def label(self) -> str:
        return "GP_1" if self.K == 1 else f"GGMP_{self.K}"


def _as_inputs(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None] if d == 1 else X[None, :]
    if X.shape[1] != d:
        raise DataError(f"dimension mismatch: model has d={d}, got {X.shape[1]}")
    return X


def component_predictive(model: GgmpModel, xstar) -> PredictiveMixture:
    """Closed-form predictive mixture at one input."""
    W, M, V = model.predict_params(xstar)
    if W.shape[0] != 1:
        raise DataError("component_predictive takes a single input; use predict_params for batches")
    return PredictiveMixture(W[0], M[0], V[0])


def predictive_mixtures(model: GgmpModel, Xstar) -> list[PredictiveMixture]:
    W, M, V = model.predict_params(Xstar)
    return [PredictiveMixture(W[i], M[i], V[i]) for i in range(W.shape[0])]


def log_density(model: GgmpModel, xstar, y) -> np.ndarray | float:
    """``log q(y | x*)``; ``y`` may hold several outputs for the same input."""
    out = component_predictive(model, xstar).log_pdf(y)
    single = np.ndim(y) == 0 if model.p == 1 else np.ndim(y) == 1
    return float(out[0]) if single else out


def sample(model: GgmpModel, xstar, n: int, seed: int = 0) -> np.ndarray:
    return component_predictive(model, xstar).sample(n, np.random.default_rng(seed))


def brute_force_joint_likelihood(means, variances, weights, y, budget: int = 10**6) -> float:
    """Joint density of ``y`` by explicit summation over all ``K**N`` label vectors.

    ``means`` and ``variances`` are ``(N, K)`` (scalar outputs); ``weights``
    is ``(K,)`` or ``(N, K)``. Tiny instances only.
    """
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    y = np.asarray(y, dtype=float)
    N, K = means.shape
    W = np.broadcast_to(np.asarray(weights, dtype=float), (N, K))
    if K**N > budget:
        raise DataError(f"K^N = {K}^{N} exceeds the enumeration budget {budget}")
    dens = W * np.exp(-0.5 * (y[:, None] - means) ** 2 / variances) / np.sqrt(2 * np.pi * variances)
    total = 0.0
    rows = np.arange(N)
    for r in itertools.product(range(K), repeat=N):
        total += float(np.prod(dens[rows, r]))
    return total


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def _parallel(n_jobs: int, fn, items):
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    return Parallel(n_jobs=n_jobs)(delayed(fn)(*it) for it in items)


def _stage(name: str):
    """Return a runner that re-raises package errors tagged with ``name``."""

    def run(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except (GgmpError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise StageError(name, exc) from exc

    return run


def _local_fit(Y, K, em_config, seed, n, input_id):
    return fit_gmm(Y, K, em_config, seed=np.random.SeedSequence([seed, n]), input_id=input_id)


def fit_local_mixtures(ds: DistributionValuedDataset, config: FitConfig) -> list[LocalMixtureFit]:
    K = config.K
    blocks = ds.sample_list()
    for pid, Y in zip(ds.ids, blocks):
        if Y.shape[0] < K:
            raise DataError(f"input {pid!r}: too few samples for K components ({Y.shape[0]} < {K})")
        if Y.shape[0] < 10 * K:
            warnings.warn(
                f"input {pid!r} has {Y.shape[0]} samples, fewer than 10*K = {10 * K}",
                RuntimeWarning,
                stacklevel=3,
            )
    items = [(Y, K, config.em, config.seed, n, pid) for n, (pid, Y) in enumerate(zip(ds.ids, blocks))]
    return _parallel(config.n_jobs, _local_fit, items)


def align_fits(fits: Sequence[LocalMixtureFit], X: np.ndarray, config: FitConfig) -> align_mod.AlignmentPlan:
    method = config.align
    if method == "auto":
        method = "sort" if fits[0].p == 1 else "hungarian"
    if method == "sort":
        return align_mod.sort_align(fits)
    if config.align_order == "nearest":
        order = align_mod.nearest_neighbor_order(X)
    else:
        order = align_mod.lexicographic_order(X)
    return align_mod.hungarian_align(fits, order, cost=config.align_cost, reference="sort")


def _train_one(X, targets, noise, config: FitConfig, seed):
    data = GpTrainingData.centered(X, targets, noise, floor_rel=config.gp.noise_floor_rel)
    return train_gp(data, config.gp.kernel, config.gp.n_restarts, config.gp.max_iter, seed)


def component_seed(seed: int, k: int, j: int) -> int:
    """Optimizer seed for the GP of component ``k``, coordinate ``j``."""
    return int(np.random.SeedSequence([seed, 1000 + k, j]).generate_state(1)[0])


def train_component_gps(fits: Sequence[LocalMixtureFit], X: np.ndarray, config: FitConfig) -> list[list[TrainedGp]]:
    M = np.stack([f.means for f in fits])  # (N, K, p)
    S = np.stack([f.variances for f in fits])
    K, p = M.shape[1], M.shape[2]
    items = [
        (X, M[:, k, j], S[:, k, j], config, component_seed(config.seed, k, j))
        for k in range(K)
        for j in range(p)
    ]
    flat = _parallel(config.n_jobs, _train_one, items)
    return [flat[k * p : (k + 1) * p] for k in range(K)]


def build_table(model: GgmpModel, ds: DistributionValuedDataset, objective: str = "samples", bins: int = 64):
    means, vars_ = model.training_params()
    if objective == "histogram":
        hist = histograms(ds, bins)
        return ComponentDensityTable.from_grids(means, vars_, [hist[i] for i in ds.ids])
    return ComponentDensityTable.from_samples(means, vars_, ds.sample_list())


def fit_weights(model: GgmpModel, ds: DistributionValuedDataset, config: FitConfig) -> GgmpModel:
    """(Re)run the weight stage on a model whose GPs are already trained."""
    K = model.K
    wc = config.weights
    if list(ds.ids) != list(model.input_ids):
        raise DataError("weight fitting needs the model's own training inputs")
    table = build_table(model, ds, wc.objective, wc.bins)
    diag = dict(model.diagnostics)
    diag["objective_equal"] = dist_loglik(table, np.full(K, 1.0 / K))
    if wc.mode == "equal":
        wm = EqualWeights(K)
    else:
        res = optimize_shared_weights(table, tol=wc.tol, max_iter=wc.max_iter)
        diag.update(objective_shared=res.objective, shared_iterations=res.n_iter, shared_converged=res.converged)
        wm = SharedWeights(res.weights)
        if wc.mode == "input":
            xres = optimize_xdep_weights(table, model.X_train, res.weights)
            diag["objective_input"] = xres.objective
            wm = InputDependentWeights(xres.beta, xres.b, xres.x_mean, xres.x_std)
    return replace(model, weight_model=wm, config=config, diagnostics=diag)


def fit(ds: DistributionValuedDataset, config: FitConfig | None = None, **overrides) -> GgmpModel:
    """Run the full pipeline on the sample blocks of ``ds``.

    Stages: per-input EM, alignment, per-(component, coordinate) GP
    training, averaged within-component variances, weight optimisation.
    Any failure is re-raised as :class:`StageError` naming the stage; no
    partially trained model is ever returned.
    """
    config = replace(config or FitConfig(), **overrides)
    config.validate()
    X = ds.X
    fits = _stage("local-fit")(fit_local_mixtures, ds, config)
    plan = _stage("align")(align_fits, fits, X, config)
    aligned = align_mod.apply_alignment(fits, plan)
    gps = _stage("gp-train")(train_component_gps, aligned, X, config)
    S = np.stack([f.variances for f in aligned])
    sbar2 = np.maximum(S.mean(axis=0), config.em.var_floor_abs)
    model = GgmpModel(
        K=config.K,
        p=aligned[0].p,
        d=ds.d,
        gps=gps,
        weight_model=EqualWeights(config.K),
        avg_within_var=sbar2,
        alignment=plan,
        fits=aligned,
        input_ids=list(ds.ids),
        X_train=X,
        config=config,
    )
    return _stage("weights")(fit_weights, model, ds, config)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _gp_to_dict(gp: TrainedGp) -> dict:
    return {
        "family": gp.params.family,
        "log_lengthscales": gp.params.log_lengthscales.tolist(),
        "log_signal_variance": gp.params.log_signal_variance,
        "targets": gp.data.targets.tolist(),
        "noise_vars": gp.data.noise_vars.tolist(),
        "prior_mean": gp.data.prior_mean,
    }


def _gp_from_dict(d: dict, X: np.ndarray) -> TrainedGp:
    params = KernelParams(np.asarray(d["log_lengthscales"], dtype=float), float(d["log_signal_variance"]), d["family"])
    data = GpTrainingData(X, np.asarray(d["targets"], dtype=float), np.asarray(d["noise_vars"], dtype=float), float(d["prior_mean"]))
    return TrainedGp.condition(params, data)


def model_to_dict(model: GgmpModel, extra: dict | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "K": model.K,
        "p": model.p,
        "d": model.d,
        "input_ids": list(model.input_ids),
        "X_train": model.X_train.tolist(),
        "gps": [[_gp_to_dict(g) for g in row] for row in model.gps],
        "weight_model": model.weight_model.to_dict(),
        "avg_within_var": model.avg_within_var.tolist(),
        "alignment": model.alignment.to_dict(),
        "fits": [f.to_dict() for f in model.fits],
        "config": model.config.to_dict(),
        "diagnostics": _jsonable(model.diagnostics),
        "extra": _jsonable(extra or {}),
    }


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    if isinstance(d, np.generic):
        return d.item()
    if isinstance(d, np.ndarray):
        return d.tolist()
    return d


def model_from_dict(d: dict) -> GgmpModel:
    if not isinstance(d, dict) or d.get("format_version") != FORMAT_VERSION:
        found = d.get("format_version") if isinstance(d, dict) else None
        raise SchemaError(f"unsupported model format {found!r}, expected {FORMAT_VERSION!r}")
    try:
        X = np.asarray(d["X_train"], dtype=float).reshape(len(d["input_ids"]), int(d["d"]))
        gps = [[_gp_from_dict(g, X) for g in row] for row in d["gps"]]
        return GgmpModel(
            K=int(d["K"]),
            p=int(d["p"]),
            d=int(d["d"]),
            gps=gps,
            weight_model=weight_model_from_dict(d["weight_model"]),
            avg_within_var=np.asarray(d["avg_within_var"], dtype=float),
            alignment=align_mod.AlignmentPlan.from_dict(d["alignment"]),
            fits=[LocalMixtureFit.from_dict(f) for f in d["fits"]],
            input_ids=list(d["input_ids"]),
            X_train=X,
            config=FitConfig.from_dict(d["config"]),
            diagnostics=dict(d.get("diagnostics", {})),
        )
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed model file: {exc}") from exc


def save_model(model: GgmpModel, path: str | Path, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, extra), indent=1))


def load_model(path: str | Path) -> GgmpModel:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"model file {path} is not valid JSON: {exc}") from None
    return model_from_dict(d)


def load_model_extra(path: str | Path) -> dict:
    return json.loads(Path(path).read_text()).get("extra", {})
