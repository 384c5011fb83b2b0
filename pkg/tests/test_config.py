import pytest

from ggmp.config import FitConfig, default_jobs, load_config_file, merge_config
from ggmp.errors import DataError


class TestFitConfig:
    def test_defaults_valid(self):
        FitConfig().validate()

    @pytest.mark.parametrize(
        "kwargs",
        [{"K": 0}, {"align": "greedy"}, {"align_cost": "kl"}, {"align_order": "random"}],
    )
    def test_invalid_values(self, kwargs):
        with pytest.raises(DataError):
            FitConfig(**kwargs).validate()

    def test_invalid_nested(self):
        cfg = FitConfig()
        cfg.weights.mode = "sparse"
        with pytest.raises(DataError, match="weight mode"):
            cfg.validate()
        cfg = FitConfig()
        cfg.em.tol = 0.0
        with pytest.raises(DataError, match="em.tol"):
            cfg.validate()

    def test_dict_round_trip(self):
        cfg = merge_config(FitConfig(), None, {"K": 7, "gp.kernel": "matern52", "em.n_restarts": 2})
        assert FitConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_keys(self):
        with pytest.raises(DataError, match="unknown config key"):
            FitConfig.from_dict({"Q": 1})
        with pytest.raises(DataError, match=r"\[em\]"):
            FitConfig.from_dict({"em": {"restarts": 1}})


class TestPrecedence:
    def test_flags_over_file_over_defaults(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('K = 4\nseed = 9\n[gp]\nkernel = "matern52"\n[em]\nn_restarts = 2\n')
        file_values = load_config_file(path)
        cfg = merge_config(FitConfig(), file_values, {"K": 6, "seed": None, "em.max_iter": 50})
        assert cfg.K == 6  # flag wins
        assert cfg.seed == 9  # file value survives an unset flag
        assert cfg.gp.kernel == "matern52"
        assert cfg.em.n_restarts == 2 and cfg.em.max_iter == 50
        assert cfg.em.tol == FitConfig().em.tol  # untouched default

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_config_file(tmp_path / "nope.toml")

    def test_bad_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("K = = 3")
        with pytest.raises(DataError, match="cannot parse"):
            load_config_file(path)

    def test_jobs_env(self, monkeypatch):
        monkeypatch.setenv("GGMP_JOBS", "3")
        assert default_jobs() == 3
        monkeypatch.setenv("GGMP_JOBS", "lots")
        assert default_jobs() == 1
