"""Gaussian-mixture GP regression for distribution-valued data."""

from .config import EMConfig, FitConfig, GPConfig, WeightConfig
from .dataset import (
    DistributionValuedDataset,
    GriddedDensity,
    InputPoint,
    SampleBlock,
    load_gridded,
    load_samples,
    split_train_test,
    to_histogram,
)
from .errors import DataError, GgmpError, NumericalError, SchemaError, StageError
from .model import (
    GgmpModel,
    PredictiveMixture,
    component_predictive,
    fit,
    load_model,
    log_density,
    sample,
    save_model,
)

__version__ = "0.1.0"

__all__ = [
    "EMConfig",
    "FitConfig",
    "GPConfig",
    "WeightConfig",
    "DistributionValuedDataset",
    "GriddedDensity",
    "InputPoint",
    "SampleBlock",
    "load_gridded",
    "load_samples",
    "split_train_test",
    "to_histogram",
    "DataError",
    "GgmpError",
    "NumericalError",
    "SchemaError",
    "StageError",
    "GgmpModel",
    "PredictiveMixture",
    "component_predictive",
    "fit",
    "load_model",
    "log_density",
    "sample",
    "save_model",
]
