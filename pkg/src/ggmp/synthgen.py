"""Synthetic distribution-valued benchmarks.

The main field is a hierarchical mixture on ``x in [-3, 3]``: three blocks
of four Gaussian sub-components each, all riding on a common latent trend
``f(x)``. A separation field ``s(x)`` spaces the block offsets and drives
the block weights, so some x-regions are effectively unimodal while others
carry three well separated modes. The sub-component jitter is wide, so each
block is a broad non-Gaussian bump that a single Gaussian cannot match.
Outside the quiet region the outer blocks carry slightly more mass than the
centre one, which keeps the input-averaged mass of the three blocks close
to equal.

Parameter curves (all smooth in ``x``; ``phi`` are seeded phases)::

    s(x)        = 1.6 * sigmoid(2 sin(1.3 x))
    offset_1    = 0
    offset_2    = -2.0 s (1 + 0.15 sin(0.7 x + phi))
    offset_3    = +1.8 s (1 + 0.15 cos(0.9 x + phi))
    jitter_j    = 0.45 s u_j (1 + 0.3 sin(0.5 x + phi)),  u = (-1.5, -0.5, 0.5, 1.5)
    mu_bj       = f(x) + offset_b + jitter_j
    sigma_bj    = 0.15 + 0.20 sigmoid(1.5 sin(0.8 x + phi) + 0.5 cos(1.7 x + phi))
    g(x)        = sigmoid(10 (s - 0.45))
    logit_1     = 0
    logit_2     = -8 (1 - g) + 0.75 g + 0.3 sin(1.1 x + phi)
    logit_3     = -8 (1 - g) + 0.75 g + 0.3 cos(0.6 x + phi)
    alpha_bj    = softmax_j(0.5 sin(0.6 x + phi_bj))

A second, two-output field with two separated component tracks exercises
the multivariate path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

from .dataset import DistributionValuedDataset, GriddedDensity, InputPoint, SampleBlock
from .errors import DataError

N_BLOCKS = 3
N_SUB = 4
_U = np.array([-1.5, -0.5, 0.5, 1.5])


def latent_trend(x):
    """``0.95 sin(1.05x - 0.30) + 0.55 sin(2.45x + 0.80) - 0.38 tanh(1.8x) + 0.075 x^3``."""
    x = np.asarray(x, dtype=float)
    return (
        0.95 * np.sin(1.05 * x - 0.30)
        + 0.55 * np.sin(2.45 * x + 0.80)
        - 0.38 * np.tanh(1.8 * x)
        + 0.075 * x**3
    )


def separation(x):
    return 1.6 * expit(2.0 * np.sin(1.3 * np.asarray(x, dtype=float)))


def _softmax(Z: np.ndarray, axis: int = -1) -> np.ndarray:
    Z = Z - Z.max(axis=axis, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=axis, keepdims=True)


@dataclass(frozen=True)
class SyntheticField:
    """Seeded hierarchical-mixture field; see the module docstring."""

    seed: int = 0
    n_inputs: int = 300
    x_range: tuple[float, float] = (-3.0, 3.0)
    grid_size: int = 512
    phases: np.ndarray = field(init=False, repr=False)
    grid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xF1E1D]))
        # 0-1: offsets, 2: jitter, 3-14: sigma per (b, j), 15-26: alpha per (b, j), 27-28: logits
        object.__setattr__(self, "phases", rng.uniform(0.0, 2.0 * np.pi, size=29))
        mu, sd, _ = self.params(self.x)
        lo = float(np.min(mu)) - 3.0
        hi = float(np.max(mu)) + 3.0
        object.__setattr__(self, "grid", np.linspace(lo, hi, self.grid_size))

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_range[0], self.x_range[1], self.n_inputs)

    def block_weights(self, x) -> np.ndarray:
        """``(m, 3)`` block weights ``w_b(x)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        s = separation(x)
        ph = self.phases
        g = expit(10.0 * (s - 0.45))  # ~0 in the quiet region, ~1 elsewhere
        base = -8.0 * (1.0 - g) + 0.75 * g
        l2 = base + 0.3 * np.sin(1.1 * x + ph[27])
        l3 = base + 0.3 * np.cos(0.6 * x + ph[28])
        return _softmax(np.stack([np.zeros_like(x), l2, l3], axis=-1))

    def sub_weights(self, x) -> np.ndarray:
        """``(m, 3, 4)`` within-block weights ``alpha_bj(x)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ph = self.phases[15:27].reshape(N_BLOCKS, N_SUB)
        return _softmax(0.5 * np.sin(0.6 * x[:, None, None] + ph[None]), axis=-1)

    def params(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened component means, standard deviations and weights, each ``(m, 12)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ph = self.phases
        s = separation(x)
        f = latent_trend(x)
        off = np.stack(
            [
                np.zeros_like(x),
                -2.0 * s * (1.0 + 0.15 * np.sin(0.7 * x + ph[0])),
                1.8 * s * (1.0 + 0.15 * np.cos(0.9 * x + ph[1])),
            ],
            axis=-1,
        )  # (m, 3)
        jit = 0.45 * s[:, None] * _U[None, :] * (1.0 + 0.3 * np.sin(0.5 * x + ph[2]))[:, None]  # (m, 4)
        mu = f[:, None, None] + off[:, :, None] + jit[:, None, :]
        phs = ph[3:15].reshape(N_BLOCKS, N_SUB)
        arg = 1.5 * np.sin(0.8 * x[:, None, None] + phs) + 0.5 * np.cos(1.7 * x[:, None, None] + phs[::-1])
        sd = 0.15 + 0.20 * expit(arg)
        w = self.block_weights(x)[:, :, None] * self.sub_weights(x)
        m = x.size
        return mu.reshape(m, -1), sd.reshape(m, -1), w.reshape(m, -1)

    def raw_density(self, x: float, y) -> np.ndarray:
        """Unnormalised mixture density (exact on the real line)."""
        mu, sd, w = (a[0] for a in self.params(x))
        y = np.asarray(y, dtype=float)
        z = (y[..., None] - mu) / sd
        return np.exp(-0.5 * z * z) / (sd * np.sqrt(2.0 * np.pi)) @ w

    def cdf(self, x: float, y) -> np.ndarray:
        mu, sd, w = (a[0] for a in self.params(x))
        y = np.asarray(y, dtype=float)
        return ndtr((y[..., None] - mu) / sd) @ w

    def conditional_density(self, x: float, grid=None) -> GriddedDensity:
        """Density at ``x`` on ``grid`` (default: the field grid), trapezoid-normalised."""
        grid = self.grid if grid is None else np.asarray(grid, dtype=float)
        return GriddedDensity.from_values(_input_id(x), grid, self.raw_density(x, grid))

    def draw_samples(self, x: float, T: int, seed) -> np.ndarray:
        """Inverse-CDF sampling: uniforms pushed through the bisected mixture CDF."""
        if T < 1:
            raise DataError("T must be >= 1")
        rng = np.random.default_rng(seed)
        u = rng.uniform(size=T)
        mu, sd, _ = (a[0] for a in self.params(x))
        lo = np.full(T, float(np.min(mu - 12 * sd)))
        hi = np.full(T, float(np.max(mu + 12 * sd)))
        while np.max(hi - lo) > 1e-12:
            mid = 0.5 * (lo + hi)
            below = self.cdf(x, mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(mid == lo) or np.all(mid == hi):
                break
        return 0.5 * (lo + hi)


def _input_id(x: float) -> str:
    return f"x{float(x):+.6f}"


def make_dataset(
    field_: SyntheticField | None = None,
    T: int = 2000,
    seed: int = 0,
    with_truth: bool = True,
) -> DistributionValuedDataset:
    """Sample every input of the field; optionally attach the exact gridded densities.

    Input ``n`` uses the RNG stream ``SeedSequence([seed, n])`` so the result
    does not depend on evaluation order.
    """
    field_ = field_ or SyntheticField(seed=seed)
    inputs, samples, grids = [], {}, {}
    for n, x in enumerate(field_.x):
        pid = f"n{n:04d}"
        inputs.append(InputPoint(pid, np.array([x])))
        ys = field_.draw_samples(x, T, np.random.SeedSequence([seed, n]))
        samples[pid] = SampleBlock(pid, ys[:, None])
        if with_truth:
            g = field_.conditional_density(x)
            grids[pid] = GriddedDensity(pid, g.grid, g.density, g.quad_weights)
    return DistributionValuedDataset(tuple(inputs), samples, grids)


@dataclass(frozen=True)
class TwoTrackField:
    """Two-output field with two separated Gaussian component tracks.

    Track means are ``(f(x) +/- 1.2, 0.8 sin(x) +/- 1.0)``; the weight of the
    first track drifts between 0.35 and 0.65; per-coordinate standard
    deviations vary smoothly in [0.15, 0.30].
    """

    seed: int = 0
    n_inputs: int = 120
    x_range: tuple[float, float] = (-3.0, 3.0)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_range[0], self.x_range[1], self.n_inputs)

    def params(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Weights ``(m, 2)``, means ``(m, 2, 2)``, standard deviations ``(m, 2, 2)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        f = latent_trend(x)
        g = 0.8 * np.sin(x)
        means = np.stack(
            [np.stack([f + 1.2, g + 1.0], axis=-1), np.stack([f - 1.2, g - 1.0], axis=-1)], axis=1
        )
        base = 0.15 + 0.15 * expit(np.stack([np.sin(0.9 * x), np.cos(0.7 * x)], axis=-1))
        sds = np.stack([base, base[:, ::-1]], axis=1)
        w1 = 0.5 + 0.15 * np.sin(0.8 * x)
        return np.stack([w1, 1.0 - w1], axis=-1), means, sds

    def draw_samples(self, x: float, T: int, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        w, mu, sd = (a[0] for a in self.params(x))
        comp = rng.choice(2, size=T, p=w)
        return mu[comp] + sd[comp] * rng.standard_normal((T, 2))

    def make_dataset(self, T: int = 500, seed: int = 0) -> DistributionValuedDataset:
        inputs, samples = [], {}
        for n, x in enumerate(self.x):
            pid = f"n{n:04d}"
            inputs.append(InputPoint(pid, np.array([x])))
            samples[pid] = SampleBlock(pid, self.draw_samples(x, T, np.random.SeedSequence([seed, n])))
        return DistributionValuedDataset(tuple(inputs), samples)
