"""Thin singular value decomposition used by the dictionary preprocessing."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NumericError
from .tensor import Tensor


def thin_svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD of a real matrix: ``m = U @ diag(S) @ V.T``.

    Returns ``(U, S, V)`` with shapes ``[a, q]``, ``[q]``, ``[b, q]`` for
    ``q = min(a, b)``; U and V have orthonormal columns and S is
    nonnegative and nonincreasing. Computation runs at 64-bit regardless
    of input dtype and the factors are returned in the input dtype. This
    routine is not differentiated; it only prepares dictionary data.
    """
    data = m.data if isinstance(m, Tensor) else np.asarray(m)
    if data.ndim != 2:
        raise DimensionError(f"thin_svd needs a matrix, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise NumericError("thin_svd input contains non-finite entries")
    try:
        u, s, vh = np.linalg.svd(data.astype(np.float64), full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed to converge: {exc}") from exc
    dtype = data.dtype
    return u.astype(dtype), s.astype(dtype), vh.T.astype(dtype)


def low_rank(m, rank: int) -> np.ndarray:
    """Best rank-``rank`` approximation in the Frobenius norm."""
    u, s, v = thin_svd(m)
    r = min(rank, s.shape[0])
    return (u[:, :r] * s[:r]) @ v[:, :r].T
