import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from ggmp.dataset import GriddedDensity
from ggmp.errors import DataError
from ggmp.metrics import (
    DensityPair,
    calibration,
    crps_ensemble,
    crps_gaussian,
    crps_mixture,
    divergences,
    energy_distance,
    joint_divergences,
    read_report,
    report_rows,
    sliced_w1,
    summarize,
    wasserstein1_samples,
    write_plot_data,
    write_report,
)
from ggmp.model import PredictiveMixture


def gaussian_pair(m1, m2, s1=1.0, s2=1.0, n=8001, lo=-15.0, hi=15.0):
    grid = np.linspace(lo, hi, n)
    p = GriddedDensity.from_values("p", grid, norm.pdf(grid, m1, s1))
    return DensityPair.from_reference(p, norm.pdf(grid, m2, s2))


def random_mixture(rng, K=3):
    w = rng.dirichlet(np.ones(K))
    return PredictiveMixture(w, rng.normal(size=(K, 1)) * 2, rng.uniform(0.2, 1.5, size=(K, 1)))


class _FixedModel:
    """Minimal stand-in exposing what ``calibration`` needs."""

    def __init__(self, mixes):
        self.mixes = mixes


@pytest.fixture
def patch_predictive(monkeypatch):
    import ggmp.model as model_mod

    def fake(model, X):
        return model.mixes

    monkeypatch.setattr(model_mod, "predictive_mixtures", fake)


class TestDivergences:
    def test_identity_all_zero(self):
        pair = gaussian_pair(0.3, 0.3, 0.7, 0.7)
        for v in divergences(pair).values():
            assert abs(v) < 1e-8

    def test_gaussian_bhattacharyya_closed_form(self):
        # unit variances, mean gap 1: mu^2 / 8
        d = divergences(gaussian_pair(0.0, 1.0))
        assert d["bhattacharyya"] == pytest.approx(0.125, abs=1e-3)

    def test_gaussian_kl_and_w1_closed_form(self):
        d = divergences(gaussian_pair(0.0, 1.0))
        # KL(N0||N1) = 0.5 for unit variances; symmetric sum = 1
        assert d["symmetric_kl"] == pytest.approx(1.0, abs=1e-4)
        # W1 between equal-variance Gaussians is the mean gap
        assert d["wasserstein1"] == pytest.approx(1.0, abs=1e-3)
        # L1 = 2 (2 Phi(1/2) - 1)
        assert d["l1"] == pytest.approx(2 * (2 * norm.cdf(0.5) - 1), abs=1e-4)

    def test_narrow_spikes_w1(self):
        grid = np.linspace(-2, 3, 20001)
        widths = [0.2, 0.05, 0.01]
        errs = []
        for s in widths:
            p = GriddedDensity.from_values("p", grid, norm.pdf(grid, 0, s))
            pair = DensityPair.from_reference(p, norm.pdf(grid, 1, s))
            errs.append(abs(divergences(pair)["wasserstein1"] - 1.0))
        assert errs[-1] < 1e-3
        assert errs[-1] <= errs[0] + 1e-12

    def test_unnormalised_rejected(self):
        grid = np.linspace(-5, 5, 101)
        w = np.full(101, 0.1)
        with pytest.raises(DataError, match="normalised"):
            DensityPair(grid, norm.pdf(grid) * 2, norm.pdf(grid), w)

    def test_kl_floor_keeps_disjoint_support_finite(self):
        grid = np.linspace(-5, 5, 1001)
        p = np.where(grid < 0, 1.0, 0.0)
        q = np.where(grid >= 0, 1.0, 0.0)
        w = np.full(grid.size, 0.01)
        pair = DensityPair(grid, p / (p @ w), q / (q @ w), w)
        d = divergences(pair)
        assert np.isfinite(d["symmetric_kl"]) and d["symmetric_kl"] > 10

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_nonnegative_and_symmetric_kl(self, seed):
        rng = np.random.default_rng(seed)
        grid = np.linspace(-6, 6, 401)
        a = GriddedDensity.from_values("a", grid, random_mixture(rng).pdf(grid))
        b = GriddedDensity.from_values("b", grid, random_mixture(rng).pdf(grid))
        ab = divergences(DensityPair.from_reference(a, b.density))
        ba = divergences(DensityPair.from_reference(b, a.density))
        assert all(v >= 0 for v in ab.values())
        assert ab["symmetric_kl"] == pytest.approx(ba["symmetric_kl"], abs=1e-12)

    def test_cdf_w1_matches_sorted_samples(self, rng):
        # histograms of equal-size samples on a shared grid
        a = rng.normal(0, 1, 4000)
        b = rng.normal(0.7, 1.3, 4000)
        edges = np.linspace(-8, 8, 801)
        h = edges[1] - edges[0]
        centers = 0.5 * (edges[1:] + edges[:-1])
        pa, _ = np.histogram(a, edges, density=True)
        pb, _ = np.histogram(b, edges, density=True)
        w = np.full(centers.size, h)
        d = divergences(DensityPair(centers, pa, pb, w))
        assert d["wasserstein1"] == pytest.approx(wasserstein1_samples(a, b), abs=h)


class TestJointMetrics:
    def test_identical_sets(self, rng):
        X = rng.normal(size=(200, 2))
        d = joint_divergences(X, X.copy())
        assert abs(d["energy"]) < 1e-12
        assert d["sliced_w1"] == 0.0

    def test_point_masses(self):
        d = joint_divergences(np.zeros(50), np.ones(50))
        assert d["energy"] == pytest.approx(2.0, abs=1e-12)
        assert d["sliced_w1"] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("u", [1.0, -1.0])
    def test_sliced_equals_plain_in_1d(self, rng, u):
        a, b = rng.normal(size=300), rng.normal(1, 2, size=300)
        assert sliced_w1(a, b, directions=[[u]]) == pytest.approx(wasserstein1_samples(a, b), abs=1e-12)

    def test_unequal_sizes_w1(self):
        # {0, 1} vs {0.5}: integral of |F_a - F_b| = 0.5
        assert wasserstein1_samples([0.0, 1.0], [0.5]) == pytest.approx(0.5)

    def test_energy_known_gaussian_gap(self, rng):
        # 1-d energy distance between N(0,1) and N(d,1) in closed form
        d = 1.0
        est = np.mean([energy_distance(rng.normal(size=2000), rng.normal(d, 1, size=2000)) for _ in range(8)])
        exy = 2 * norm.pdf(d / np.sqrt(2)) * np.sqrt(2) + d * (2 * norm.cdf(d / np.sqrt(2)) - 1)
        exx = 2 / np.sqrt(np.pi)
        assert est == pytest.approx(2 * exy - 2 * exx, abs=0.02)

    def test_seeded_directions(self, rng):
        X, Y = rng.normal(size=(100, 3)), rng.normal(size=(100, 3))
        assert sliced_w1(X, Y, seed=5) == sliced_w1(X, Y, seed=5)

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            joint_divergences(np.zeros((3, 2)), np.zeros((3, 1)))


class TestCrps:
    def test_standard_normal_at_zero(self):
        expected = 2 * norm.pdf(0) - 1 / np.sqrt(np.pi)
        assert expected == pytest.approx(0.2337, abs=1e-4)
        assert crps_gaussian(0, 1, 0) == pytest.approx(expected, abs=1e-14)
        mix = PredictiveMixture(np.array([1.0]), np.zeros((1, 1)), np.ones((1, 1)))
        assert crps_mixture(mix, 0.0)[0] == pytest.approx(expected, abs=1e-8)

    def test_gaussian_closed_form_scaled(self):
        mix = PredictiveMixture(np.array([1.0]), np.array([[1.5]]), np.array([[4.0]]))
        for y in (-3.0, 1.5, 2.2, 9.0):
            assert crps_mixture(mix, y)[0] == pytest.approx(crps_gaussian(1.5, 2.0, y), abs=1e-8)

    def test_mixture_integral_oracle(self, rng):
        mix = random_mixture(rng)
        y = 0.4
        f = lambda z: (mix.cdf(np.array([z]))[0] - (z >= y)) ** 2
        ref = integrate.quad(f, -40, y, limit=200)[0] + integrate.quad(f, y, 40, limit=200)[0]
        assert crps_mixture(mix, y)[0] == pytest.approx(ref, abs=1e-6)

    def test_matches_monte_carlo(self, rng):
        mix = random_mixture(rng)
        y = 0.3
        draws = mix.sample(10**6, np.random.default_rng(7))[:, 0]
        mc, se = crps_ensemble(draws, y)
        assert abs(crps_mixture(mix, y)[0] - mc) < 3 * se


class TestCalibration:
    def test_self_consistency(self, patch_predictive):
        rng = np.random.default_rng(3)
        mixes = [random_mixture(rng) for _ in range(4)]
        blocks = [m.sample(25000, np.random.default_rng(10 + i)) for i, m in enumerate(mixes)]
        _, s = calibration(_FixedModel(mixes), np.zeros((4, 1)), blocks)
        assert abs(s["pit_mean"] - 0.5) < 0.01
        assert abs(s["cov90"] - 0.90) < 0.02
        assert abs(s["cov50"] - 0.50) < 0.02

    def test_pit_of_median(self, rng):
        mix = random_mixture(rng)
        med = mix.quantile([0.5])[0]
        assert mix.cdf(np.array([med]))[0] == pytest.approx(0.5, abs=1e-8)

    def test_summary_keys_and_ranges(self, patch_predictive, rng):
        mixes = [random_mixture(rng)]
        _, s = calibration(_FixedModel(mixes), np.zeros((1, 1)), [rng.normal(size=50)])
        assert set(s) == {"pit_mean", "pit_std", "cov50", "cov90", "cov95", "log_score", "crps"}
        assert 0 <= s["pit_mean"] <= 1 and 0 <= s["cov90"] <= 1

    def test_multivariate_marginals_pooled(self, patch_predictive, rng):
        mix = PredictiveMixture(np.array([0.5, 0.5]), rng.normal(size=(2, 2)), rng.uniform(0.5, 1, size=(2, 2)))
        Y = mix.sample(400, rng)
        rec, _ = calibration(_FixedModel([mix]), np.zeros((1, 1)), [Y])
        assert len(rec.pit_values) == 800
        assert all(0 <= v <= 1 for v in rec.pit_values)


class TestReports:
    def test_summarize(self):
        s = summarize([{"a": 1.0}, {"a": 3.0}])
        assert s["a"] == (2.0, 1.0)

    def test_report_round_trip(self, tmp_path):
        rows = report_rows("GGMP_3", 3, {"bhattacharyya": (0.1, 0.02), "l1": (0.5, 0.1)})
        path = tmp_path / "r.csv"
        write_report(path, rows, config={"K": 3})
        text = path.read_text().splitlines()
        assert text[0] == '# config: {"K": 3}'
        assert text[1] == "model,K,metric,mean,std"
        back = read_report(path)
        assert back[0] == {"model": "GGMP_3", "K": "3", "metric": "bhattacharyya", "mean": "0.1", "std": "0.02"}

    def test_plot_data(self, tmp_path):
        path = tmp_path / "p.csv"
        g = np.array([0.0, 0.5])
        write_plot_data(path, [("n0", g, np.array([1.0, 2.0]), np.array([3.0, 4.0]))])
        assert path.read_text().splitlines() == ["input_id,y,reference,predicted", "n0,0,1,3", "n0,0.5,2,4"]
