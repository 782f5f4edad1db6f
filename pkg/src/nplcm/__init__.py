"""Nested partially-latent class models for case-control multivariate binary data."""
from .config import __version__
from .errors import (CapabilityError, DimensionError, InfiniteLogOddsRatio, NplcmError,
                     NumericError, PatternNotFound, UndefinedVarianceError)
from .gibbs import PosteriorSamples, SamplerConfig, fit, run
from .model import Dataset, HyperPriors, ModelParams, read_dataset_csv, write_dataset_csv
from .simulation import generate, scenario, simulate

__all__ = [
    "__version__", "Dataset", "ModelParams", "HyperPriors", "SamplerConfig", "PosteriorSamples",
    "fit", "run", "scenario", "generate", "simulate", "read_dataset_csv", "write_dataset_csv",
    "NplcmError", "DimensionError", "CapabilityError", "NumericError", "InfiniteLogOddsRatio",
    "UndefinedVarianceError", "PatternNotFound",
]
