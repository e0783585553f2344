"""Dictionary-guided transformer for single-shot mass-spectrum classification.

Subpackages and modules:

- ``numcore``    dense tensors with reverse-mode autodiff, thin SVD, Adam
- ``spectra``    synthetic single-shot spectra, splits, binary dataset I/O
- ``dictionary`` class-clustered dictionary and its rank-r denoised form
- ``embedding``  convolutional patchification and the m/z positional map
- ``encoder``    self-attention, slice-attention, and selection attention
- ``model``      full model, peak head, cosine classifier, efficient export
- ``training``   smoothed BCE, warmup + cosine schedule, the fit loop
- ``evaluation`` classification metrics, latency benchmark, attention dumps
- ``cli``        operator commands (gen-data, train, export-e, eval, ...)
"""

from . import numcore
from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    MsdgError,
    NumericError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "FormatError",
    "MsdgError",
    "NumericError",
    "UsageError",
    "numcore",
    "__version__",
]
