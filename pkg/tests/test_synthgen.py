import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import argrelmax

from ggmp.synthgen import SyntheticField, TwoTrackField, latent_trend, make_dataset, separation


@pytest.fixture(scope="module")
def field():
    return SyntheticField(seed=0)


class TestLatentTrend:
    def test_at_zero(self):
        assert latent_trend(0.0) == pytest.approx(0.95 * math.sin(-0.30) + 0.55 * math.sin(0.80), abs=1e-15)
        assert latent_trend(0.0) == pytest.approx(0.11380, abs=1e-5)

    def test_term_by_term(self):
        x = 3.0
        terms = [0.95 * math.sin(1.05 * x - 0.30), 0.55 * math.sin(2.45 * x + 0.80), -0.38 * math.tanh(1.8 * x), 0.075 * x**3]
        assert abs(latent_trend(x) - math.fsum(terms)) < 1e-14

    def test_tanh_vanishes_at_zero(self):
        assert math.tanh(1.8 * 0.0) == 0.0


class TestConditionalDensity:
    @given(st.floats(-3, 3))
    @settings(max_examples=50, deadline=None)
    def test_weights_on_simplex(self, x):
        f = SyntheticField(seed=1, n_inputs=5)
        assert abs(f.block_weights(x).sum() - 1) < 1e-12
        np.testing.assert_allclose(f.sub_weights(x).sum(axis=-1), 1.0, atol=1e-12)

    @given(st.floats(-3, 3))
    @settings(max_examples=30, deadline=None)
    def test_normalised_and_positive(self, x):
        f = SyntheticField(seed=2, n_inputs=5)
        g = f.conditional_density(x)
        assert abs(g.density @ g.quad_weights - 1) < 1e-8
        assert np.all(g.density > 0)

    def test_sigma_range(self, field):
        _, sd, _ = field.params(np.linspace(-3, 3, 500))
        assert sd.min() >= 0.08 and sd.max() <= 0.35

    def test_region_structure(self, field):
        """Some inputs are effectively unimodal, others carry at least three modes."""
        def n_modes(x):
            g = field.conditional_density(x)
            peaks = argrelmax(g.density)[0]
            return int(np.sum(g.density[peaks] > 0.1 * g.density.max()))

        xs = np.linspace(-3, 3, 121)
        counts = np.array([n_modes(x) for x in xs])
        assert counts.min() == 1
        assert counts.max() >= 3
        # where blocks 2 and 3 are switched off the density has a single dominant mode
        w = field.block_weights(xs)
        quiet = xs[(w[:, 1] < 0.01) & (w[:, 2] < 0.01)]
        assert quiet.size > 0
        assert all(n_modes(x) == 1 for x in quiet)

    def test_smooth_means(self, field):
        x = np.linspace(-3, 3, 2001)
        mu, _, _ = field.params(x)
        assert np.max(np.abs(np.diff(mu, axis=0)) / np.diff(x)[:, None]) < 20


class TestSampling:
    def test_moments(self, field):
        x = 0.7
        T = 1_000_000
        y = field.draw_samples(x, T, seed=5)
        g = field.conditional_density(x, np.linspace(-10, 10, 40001))
        mean = g.grid * g.density @ g.quad_weights
        var = (g.grid - mean) ** 2 * g.density @ g.quad_weights
        assert abs(y.mean() - mean) < 3 * math.sqrt(var / T)

    def test_ks(self, field):
        x = -1.3
        T = 5000
        y = np.sort(field.draw_samples(x, T, seed=11))
        F = field.cdf(x, y)
        ecdf_hi = np.arange(1, T + 1) / T
        ecdf_lo = np.arange(T) / T
        D = max(np.max(ecdf_hi - F), np.max(F - ecdf_lo))
        assert D < 1.63 / math.sqrt(T)

    def test_deterministic(self, field):
        np.testing.assert_array_equal(field.draw_samples(0.1, 100, 3), field.draw_samples(0.1, 100, 3))

    def test_dataset_shape(self):
        f = SyntheticField(seed=0, n_inputs=7)
        ds = make_dataset(f, T=20, seed=0)
        assert ds.N == 7 and all(ds.samples[i].T == 20 for i in ds.ids)
        assert all(ds.grids[i].grid.size == 512 for i in ds.ids)

    def test_dataset_default_size(self):
        f = SyntheticField()
        assert f.x.size == 300 and f.x[0] == -3 and f.x[-1] == 3


def test_separation_range():
    s = separation(np.linspace(-3, 3, 1000))
    assert s.min() > 0 and s.max() < 1.6


def test_two_track_field():
    f = TwoTrackField(n_inputs=6)
    ds = f.make_dataset(T=50, seed=1)
    assert ds.p == 2 and ds.N == 6
    w, mu, sd = f.params(f.x)
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    assert np.all(np.linalg.norm(mu[:, 0] - mu[:, 1], axis=1) > 2.0)
