"""Numpy-backed tensors, reverse-mode autodiff, thin SVD, and Adam."""

from .linalg import low_rank, thin_svd
from .optim import AdamState, ParameterStore, adam_step
from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    add,
    assert_finite,
    concat,
    conv1d,
    dropout,
    index,
    layer_norm,
    linear,
    log,
    matmul,
    mul,
    no_grad,
    ones_param,
    relu,
    reshape,
    sigmoid,
    softmax_rows,
    sub,
    tensor,
    tmean,
    transpose,
    tsum,
    uniform_param,
    windows,
    zeros_param,
)

__all__ = [
    "DEFAULT_DTYPE",
    "AdamState",
    "ParameterStore",
    "Tensor",
    "adam_step",
    "add",
    "assert_finite",
    "concat",
    "conv1d",
    "dropout",
    "index",
    "layer_norm",
    "linear",
    "log",
    "low_rank",
    "matmul",
    "mul",
    "no_grad",
    "ones_param",
    "relu",
    "reshape",
    "sigmoid",
    "softmax_rows",
    "sub",
    "tensor",
    "thin_svd",
    "tmean",
    "transpose",
    "tsum",
    "uniform_param",
    "windows",
    "zeros_param",
]
