"""Convolutional patchification and the learned m/z positional embedding.

A spectrum of length l becomes N = (l - rho)/gamma + 1 overlapping patches,
each projected to the hidden width h by a strided 1-D convolution. The two
pathways (noisy input spectra vs. denoised dictionary spectra) own separate
convolution weights; the positional embedding -- the m/z axis patched the
same way and linearly projected -- is a single shared set added to both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numcore import DEFAULT_DTYPE, Tensor, conv1d, tensor, uniform_param, zeros_param

INPUT = "input"
DICTIONARY = "dictionary"


@dataclass
class EmbeddingWeights:
    """Convolution kernels for both pathways plus the shared positional map."""

    rho: int
    gamma: int
    input_kernels: Tensor        # [h, rho]
    input_bias: Tensor           # [h]
    pos_weight: Tensor           # [h, rho]
    pos_bias: Tensor             # [h]
    dict_kernels: Tensor | None  # [h, rho]; absent for the ablation
    dict_bias: Tensor | None


def init_embedding(
    rho: int,
    gamma: int,
    h: int,
    rng: np.random.Generator,
    with_dictionary: bool = True,
    dtype=DEFAULT_DTYPE,
) -> EmbeddingWeights:
    """Kernels and projection uniform in +-1/sqrt(rho), biases zero."""
    bound = 1.0 / np.sqrt(rho)
    return EmbeddingWeights(
        rho=rho,
        gamma=gamma,
        input_kernels=uniform_param(rng, (h, rho), bound, dtype),
        input_bias=zeros_param((h,), dtype),
        pos_weight=uniform_param(rng, (h, rho), bound, dtype),
        pos_bias=zeros_param((h,), dtype),
        dict_kernels=uniform_param(rng, (h, rho), bound, dtype) if with_dictionary else None,
        dict_bias=zeros_param((h,), dtype) if with_dictionary else None,
    )


def patchify_embed(signal, which: str, w: EmbeddingWeights) -> Tensor:
    """Embed one spectrum (or a stack of them) into ``[..., N, h]`` tokens."""
    if which == INPUT:
        kernels, bias = w.input_kernels, w.input_bias
    elif which == DICTIONARY:
        if w.dict_kernels is None:
            raise ConfigError("this model has no dictionary embedding pathway")
        kernels, bias = w.dict_kernels, w.dict_bias
    else:
        raise ConfigError(f"unknown embedding pathway {which!r}")
    if not isinstance(signal, Tensor):
        signal = tensor(np.asarray(signal), dtype=kernels.dtype)
    return conv1d(signal, kernels, bias, stride=w.gamma)


def mz_positional(axis_values, w: EmbeddingWeights) -> Tensor:
    """Patch the m/z axis with the same (rho, gamma) and project rho -> h.

    Depends only on the axis, so one dataset has one positional embedding,
    shared between the input tokens and every dictionary token sequence.
    The axis is mapped onto [0, 1] across its span before the projection;
    the affine map can still realize any function of the raw Dalton values
    (the rescaling is absorbable into weight and bias), but initialization
    starts at token-sized magnitudes instead of thousands of Daltons.
    """
    values = axis_values.data if isinstance(axis_values, Tensor) else np.asarray(axis_values)
    values = values.astype(np.float64)
    span = values[-1] - values[0]
    scaled = tensor((values - values[0]) / span, dtype=w.pos_weight.dtype)
    return conv1d(scaled, w.pos_weight, w.pos_bias, stride=w.gamma)
