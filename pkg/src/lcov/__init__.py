"""Local covariance maps of filter-bank responses.

Learn filter banks whose responses to natural images are locally
low-dimensional, represent images as subsampled maps of local response
covariances, and synthesize or edit images from those maps.
"""

__version__ = "0.1.0"

from .covmap import CovarianceMap, count_measurements, extract
from .errors import DivergenceError, InvalidInputError
from .filterbank import FilterBank, apply, oriented_pair, random_bank, reconstruct
from .objective import PatchSpec, total_energy_and_gradient
from .synthesis import SynthConfig, synthesize
from .trainer import TrainConfig, train

__all__ = [
    "CovarianceMap",
    "DivergenceError",
    "FilterBank",
    "InvalidInputError",
    "PatchSpec",
    "SynthConfig",
    "TrainConfig",
    "apply",
    "count_measurements",
    "extract",
    "oriented_pair",
    "random_bank",
    "reconstruct",
    "synthesize",
    "total_energy_and_gradient",
    "train",
]
