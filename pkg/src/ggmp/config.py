"""Configuration dataclasses and TOML config-file loading."""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import DataError

JOBS_ENV_VAR = "GGMP_JOBS"


def default_jobs() -> int:
    value = os.environ.get(JOBS_ENV_VAR, "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


@dataclass
class EMConfig:
    """Settings for the per-input EM fits."""

    n_restarts: int = 4
    tol: float = 1e-7  # on |delta loglik| / T
    max_iter: int = 500
    var_floor_rel: float = 1e-6  # relative to the block's total variance
    var_floor_abs: float = 1e-10


@dataclass
class GPConfig:
    kernel: str = "se"  # "se" | "matern52"
    n_restarts: int = 5
    max_iter: int = 200
    noise_floor_rel: float = 1e-8


@dataclass
class WeightConfig:
    mode: str = "shared"  # "equal" | "shared" | "input"
    tol: float = 1e-8
    max_iter: int = 10_000
    objective: str = "samples"  # "samples" | "histogram"
    bins: int = 64


@dataclass
class FitConfig:
    """Everything ``ggmp.model.fit`` needs besides the data."""

    K: int = 3
    align: str = "auto"  # "auto" | "sort" | "hungarian"
    align_cost: str = "w2"  # "w2" | "hellinger"
    align_order: str = "lexicographic"  # "lexicographic" | "nearest"
    em: EMConfig = field(default_factory=EMConfig)
    gp: GPConfig = field(default_factory=GPConfig)
    weights: WeightConfig = field(default_factory=WeightConfig)
    seed: int = 0
    n_jobs: int = field(default_factory=default_jobs)

    def validate(self) -> None:
        if self.K < 1:
            raise DataError(f"K must be >= 1, got {self.K}")
        if self.align not in ("auto", "sort", "hungarian"):
            raise DataError(f"unknown alignment method {self.align!r}")
        if self.align_cost not in ("w2", "hellinger"):
            raise DataError(f"unknown alignment cost {self.align_cost!r}")
        if self.align_order not in ("lexicographic", "nearest"):
            raise DataError(f"unknown input ordering {self.align_order!r}")
        if self.gp.kernel not in ("se", "matern52"):
            raise DataError(f"unknown kernel {self.gp.kernel!r}")
        if self.weights.mode not in ("equal", "shared", "input"):
            raise DataError(f"unknown weight mode {self.weights.mode!r}")
        if self.weights.objective not in ("samples", "histogram"):
            raise DataError(f"unknown weight objective {self.weights.objective!r}")
        for name, value in [
            ("em.tol", self.em.tol),
            ("weights.tol", self.weights.tol),
            ("em.var_floor_rel", self.em.var_floor_rel),
        ]:
            if not value > 0:
                raise DataError(f"{name} must be positive, got {value}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FitConfig":
        data = dict(data)
        nested = {
            "em": EMConfig,
            "gp": GPConfig,
            "weights": WeightConfig,
        }
        kwargs: dict[str, Any] = {}
        known = {f.name for f in dataclasses.fields(cls)}
        for key, value in data.items():
            if key not in known:
                raise DataError(f"unknown config key {key!r}")
            if key in nested:
                sub = nested[key]
                sub_known = {f.name for f in dataclasses.fields(sub)}
                bad = set(value) - sub_known
                if bad:
                    raise DataError(f"unknown config keys in [{key}]: {sorted(bad)}")
                kwargs[key] = sub(**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)


def load_config_file(path: str | os.PathLike) -> dict[str, Any]:
    """Read a TOML config file into a plain dict."""
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"cannot parse config file {path}: {exc}") from None


def merge_config(
    defaults: FitConfig,
    file_values: dict[str, Any] | None = None,
    overrides: dict[str, Any] | None = None,
) -> FitConfig:
    """CLI flags > config file > defaults.

    ``overrides`` uses dotted keys for nested settings (``"em.n_restarts"``);
    ``None`` values are ignored so unset flags fall through.
    """
    merged = defaults.to_dict()
    for source in (file_values or {}, _undot(overrides or {})):
        for key, value in source.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key].update(value)
            else:
                merged[key] = value
    cfg = FitConfig.from_dict(merged)
    cfg.validate()
    return cfg


def _undot(flat: dict[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in flat.items():
        if value is None:
            continue
        head, _, tail = key.partition(".")
        if tail:
            out.setdefault(head, {})[tail] = value
        else:
            out[head] = value
    return out

