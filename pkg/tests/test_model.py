import math
import warnings
from dataclasses import replace

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from ggmp.config import EMConfig, FitConfig, GPConfig
from ggmp.errors import SchemaError, StageError
from ggmp.gp import GpTrainingData, posterior_predict, train_gp
from ggmp.model import (
    EqualWeights,
    PredictiveMixture,
    SharedWeights,
    brute_force_joint_likelihood,
    component_predictive,
    component_seed,
    fit,
    load_model,
    log_density,
    predictive_mixtures,
    sample,
    save_model,
)

from conftest import make_dataset, parallel_tracks

FAST = FitConfig(em=EMConfig(n_restarts=2), gp=GPConfig(n_restarts=2))


@pytest.fixture(scope="module")
def tracks():
    return parallel_tracks(N=25, T=300)


@pytest.fixture(scope="module")
def tracks_model(tracks):
    return fit(tracks, replace(FAST, K=2))


@pytest.fixture(scope="module")
def wavy():
    rng = np.random.default_rng(3)
    X = np.linspace(-3, 3, 30)
    blocks = [np.sin(x) + (0.2 + 0.1 * np.cos(x)) * rng.standard_normal(200) for x in X]
    return make_dataset(X, blocks)


@pytest.fixture(scope="module")
def wavy_k1(wavy):
    return fit(wavy, replace(FAST, K=1))


class TestFit:
    def test_recovers_parallel_tracks(self, tracks_model):
        xs = np.linspace(-2, 2, 17)
        _, M, _ = tracks_model.predict_params(xs)
        np.testing.assert_allclose(np.sort(M[:, :, 0], axis=1), np.tile([-2.0, 2.0], (17, 1)), atol=0.1)

    def test_too_few_samples_names_input(self, tracks):
        blocks = [tracks.samples[i].samples for i in tracks.ids]
        blocks[3] = blocks[3][:1]
        ds = make_dataset(tracks.X, blocks)
        with pytest.raises(StageError, match="n003.*too few samples"):
            fit(ds, replace(FAST, K=2))

    def test_warns_on_small_blocks(self):
        rng = np.random.default_rng(0)
        ds = make_dataset(np.arange(5.0), [rng.normal(size=15) for _ in range(5)])
        with pytest.warns(RuntimeWarning, match="fewer than 10"):
            fit(ds, replace(FAST, K=2))

    def test_shared_weights_on_simplex(self, tracks_model):
        w = tracks_model.weight_model.w
        assert abs(w.sum() - 1) < 1e-10
        np.testing.assert_allclose(w, 0.5, atol=0.05)
        d = tracks_model.diagnostics
        assert d["objective_shared"] >= d["objective_equal"] - 1e-9

    def test_equal_weights(self, tracks):
        m = fit(tracks, replace(FAST, K=2, weights=replace(FAST.weights, mode="equal")))
        assert isinstance(m.weight_model, EqualWeights)
        np.testing.assert_array_equal(component_predictive(m, 0.3).weights, [0.5, 0.5])

    def test_input_weights_not_worse(self, tracks):
        m = fit(tracks, replace(FAST, K=2, weights=replace(FAST.weights, mode="input")))
        assert m.diagnostics["objective_input"] >= m.diagnostics["objective_shared"] - 1e-9

    def test_hungarian_path_multivariate(self):
        rng = np.random.default_rng(1)
        X = np.linspace(0, 1, 12)
        blocks = []
        for x in X:
            c = rng.uniform(size=200) < 0.5
            centre = np.where(c[:, None], [2.0, x], [-2.0, -x])
            blocks.append(centre + 0.1 * rng.standard_normal((200, 2)))
        m = fit(make_dataset(X, blocks), replace(FAST, K=2))
        assert m.alignment.method == "hungarian" and m.p == 2
        _, M, V = m.predict_params(np.array([0.5]))
        assert np.all(V > 0)
        np.testing.assert_allclose(np.sort(M[0, :, 0]), [-2, 2], atol=0.1)


class TestK1:
    def test_matches_standalone_gp(self, wavy, wavy_k1):
        Y = wavy.sample_list()
        means = np.array([y.mean() for y in Y])
        variances = np.array([y.var() for y in Y])
        gp = train_gp(
            GpTrainingData.centered(wavy.X, means, variances),
            "se",
            FAST.gp.n_restarts,
            FAST.gp.max_iter,
            component_seed(FAST.seed, 0, 0),
        )
        rng = np.random.default_rng(9)
        xs = rng.uniform(-3.5, 3.5, 50)
        mu, nu = posterior_predict(gp, xs[:, None])
        v = nu + variances.mean()
        for x, m_, v_ in zip(xs, mu, v):
            y = rng.normal(m_, 2 * math.sqrt(v_), size=5)
            expected = -0.5 * np.log(2 * np.pi * v_) - 0.5 * (y - m_) ** 2 / v_
            np.testing.assert_allclose(log_density(wavy_k1, x, y), expected, rtol=0, atol=1e-10)

    def test_at_mean(self, wavy_k1):
        mix = component_predictive(wavy_k1, 0.4)
        v = mix.vars[0, 0]
        assert log_density(wavy_k1, 0.4, mix.means[0, 0]) == pytest.approx(-0.5 * math.log(2 * math.pi * v), abs=1e-14)

    def test_near_training_input_variance(self, wavy_k1):
        x = wavy_k1.X_train[10]
        mix = component_predictive(wavy_k1, x)
        _, nu = posterior_predict(wavy_k1.gps[0][0], x[None])
        assert mix.vars[0, 0] == pytest.approx(nu[0] + wavy_k1.avg_within_var[0, 0], abs=1e-14)
        assert mix.vars[0, 0] == pytest.approx(wavy_k1.avg_within_var[0, 0], rel=0.25)

    def test_underspecified_variance(self, tracks):
        """K=1 on a symmetric two-mode field absorbs the separation into the variance."""
        m = fit(tracks, replace(FAST, K=1))
        mix = component_predictive(m, 0.0)
        alpha, gap = 0.5, 4.0
        assert mix.vars[0, 0] >= 0.9 * alpha * (1 - alpha) * gap**2


class TestPredictive:
    @given(
        st.floats(-5, 5), st.floats(1e-3, 4), st.floats(1e-3, 4), st.floats(-8, 8)
    )
    @settings(max_examples=40, deadline=None)
    def test_marginalisation_identity(self, mu, nu, s2, y):
        integrand = lambda g: math.exp(-0.5 * (y - g) ** 2 / s2) / math.sqrt(2 * math.pi * s2) * math.exp(-0.5 * (g - mu) ** 2 / nu) / math.sqrt(2 * math.pi * nu)
        sd = math.sqrt(nu)
        num, _ = integrate.quad(integrand, mu - 12 * sd, mu + 12 * sd, points=[y] if abs(y - mu) < 12 * sd else None, epsabs=1e-13, limit=200)
        closed = math.exp(-0.5 * (y - mu) ** 2 / (nu + s2)) / math.sqrt(2 * math.pi * (nu + s2))
        assert abs(num - closed) < 1e-6

    def test_far_tail_finite(self, tracks_model):
        mix = component_predictive(tracks_model, 0.0)
        y = mix.mean[0] + 50 * mix.std_scale
        val = log_density(tracks_model, 0.0, y)
        assert np.isfinite(val) and val < -100

    @given(st.integers(0, 10**6))
    @settings(max_examples=30, deadline=None)
    def test_extended_precision(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.dirichlet(np.ones(3))
        m = rng.normal(size=3) * 2
        v = rng.uniform(0.1, 2, size=3)
        mix = PredictiveMixture(w, m, v)
        y = rng.normal(size=4) * 3
        mpmath.mp.dps = 50
        for yi, got in zip(y, mix.log_pdf(y)):
            ref = mpmath.log(sum(mpmath.mpf(w[k]) * mpmath.npdf(mpmath.mpf(yi), mpmath.mpf(m[k]), mpmath.sqrt(mpmath.mpf(v[k]))) for k in range(3)))
            assert abs(got - float(ref)) < 1e-10

    def test_integrates_to_one(self, tracks_model):
        for mix in predictive_mixtures(tracks_model, np.linspace(-2, 2, 5)):
            sd = np.sqrt(mix.vars[:, 0])
            grid = np.linspace((mix.means[:, 0] - 10 * sd).min(), (mix.means[:, 0] + 10 * sd).max(), 20001)
            assert abs(np.trapezoid(mix.pdf(grid), grid) - 1) < 1e-6

    def test_redundant_components_flat(self, wavy_k1):
        dup = replace(
            wavy_k1,
            K=2,
            gps=[wavy_k1.gps[0], wavy_k1.gps[0]],
            avg_within_var=np.vstack([wavy_k1.avg_within_var] * 2),
        )
        xs = np.linspace(-3, 3, 7)
        ys = np.linspace(-2, 2, 9)
        base = np.array([log_density(wavy_k1, x, ys) for x in xs])
        for a in (0.0, 0.1, 0.5, 0.93, 1.0):
            m = replace(dup, weight_model=SharedWeights(np.array([a, 1 - a])))
            got = np.array([log_density(m, x, ys) for x in xs])
            assert np.max(np.abs(got - base)) < 1e-12

    def test_cdf_quantile_consistency(self):
        mix = PredictiveMixture(np.array([0.3, 0.7]), np.array([-1.0, 2.0]), np.array([0.5, 0.2]))
        q = mix.quantile([0.05, 0.5, 0.95])
        np.testing.assert_allclose(mix.cdf(q), [0.05, 0.5, 0.95], atol=1e-9)


class TestSampling:
    def test_clt(self, wavy_k1):
        mix = component_predictive(wavy_k1, 1.0)
        draws = sample(wavy_k1, 1.0, 100_000, seed=4)
        assert abs(draws.mean() - mix.means[0, 0]) < 3 * math.sqrt(mix.vars[0, 0] / 1e5)

    def test_degenerate_weights(self):
        mix = PredictiveMixture(np.array([1.0, 0.0]), np.array([0.0, 100.0]), np.array([1.0, 1.0]))
        assert np.all(mix.sample(1000, 0) < 50)

    def test_deterministic(self, tracks_model):
        np.testing.assert_array_equal(sample(tracks_model, 0.2, 50, seed=1), sample(tracks_model, 0.2, 50, seed=1))


class TestBruteForce:
    @pytest.mark.parametrize("N,K", [(3, 2), (1, 3), (4, 1), (6, 3)])
    def test_product_of_sums(self, rng, N, K):
        means = rng.normal(size=(N, K))
        variances = rng.uniform(0.3, 2, size=(N, K))
        w = rng.dirichlet(np.ones(K))
        y = rng.normal(size=N)
        dens = w * np.exp(-0.5 * (y[:, None] - means) ** 2 / variances) / np.sqrt(2 * np.pi * variances)
        prod = float(np.prod(dens.sum(axis=1)))
        assert brute_force_joint_likelihood(means, variances, w, y) == pytest.approx(prod, rel=1e-12, abs=1e-300)

    def test_budget(self):
        with pytest.raises(Exception, match="budget"):
            brute_force_joint_likelihood(np.zeros((30, 3)), np.ones((30, 3)), np.ones(3) / 3, np.zeros(30))


class TestPersistence:
    def test_round_trip(self, tmp_path, tracks_model):
        path = tmp_path / "m.json"
        save_model(tracks_model, path)
        back = load_model(path)
        ys = np.linspace(-4, 4, 33)
        for x in np.linspace(-2.5, 2.5, 6):
            np.testing.assert_allclose(log_density(back, x, ys), log_density(tracks_model, x, ys), rtol=0, atol=1e-10)
        np.testing.assert_array_equal(back.alignment.permutations, tracks_model.alignment.permutations)

    def test_wrong_version(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text('{"format_version": "other/9"}')
        with pytest.raises(SchemaError, match="unsupported model format"):
            load_model(p)

    def test_garbage(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("not json")
        with pytest.raises(SchemaError):
            load_model(p)
