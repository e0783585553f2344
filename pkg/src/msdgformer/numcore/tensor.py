"""Dense real tensors with reverse-mode automatic differentiation.

Arrays are plain numpy buffers; every differentiable operation records a
node on a dynamically built tape. Calling ``backward()`` on a scalar walks
the tape once, accumulates gradients into every ``requires_grad`` tensor,
and then discards the graph. Storage is float32 by default; building the
same graph from float64 inputs runs the whole pipeline at 64-bit, which the
gradient-check harness uses for tight tolerances.

Tensors are never mutated by ops (gradient accumulation and optimizer
updates are the only sanctioned writes), so sharing nodes between branches
of a graph is safe and gradients through shared nodes add up.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from ..errors import DimensionError, NumericError, UsageError

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / benchmarking)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense real tensor participating in reverse-mode differentiation.

    ``data`` is row-major (C-order) numpy storage; ``grad`` is lazily
    allocated with the same shape and dtype. Non-leaf tensors carry the
    parents and the vector-Jacobian closure that built them.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._vjp = _vjp

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- gradient plumbing ----------------------------------------------

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            # g may be a view into another node's buffer; that is safe
            # because gradients are never written in place (the second
            # accumulation below allocates a fresh sum)
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf.

        Repeated calls (on fresh graphs) accumulate; the caller resets
        grads between optimizer steps. The tape is freed afterwards.
        """
        if self.data.size != 1:
            raise UsageError(
                f"backward() needs a scalar seed, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and (p.requires_grad or p._parents):
                    stack.append((p, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)
            # Free the tape; keep leaf grads, drop intermediate ones.
            if node._vjp is not None:
                node._parents = ()
                node._vjp = None
                if node is not self:
                    node.grad = None

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def tensor(data, dtype=None, requires_grad: bool = False) -> Tensor:
    """Build a tensor, defaulting to float32 storage."""
    arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=requires_grad)


def assert_finite(t: Tensor, what: str = "tensor"):
    """NaN/Inf is an error state; called at loss boundaries, not per op."""
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values in {what}")


# -- op construction ------------------------------------------------------


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _promote(a, b)
    out = a.data + b.data

    def vjp(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _node(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _promote(a, b)
    out = a.data - b.data

    def vjp(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(-_unbroadcast(g, b.shape))

    return _node(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _promote(a, b)
    out = a.data * b.data

    def vjp(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(out, (a, b), vjp)


def _promote(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _coerce(b, a)
    if isinstance(b, Tensor):
        return _coerce(a, b), b
    raise UsageError("at least one operand must be a Tensor")


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with stacked (batched) leading dimensions.

    Both operands must be at least rank 2; inner extents must agree.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner extents differ: {a.shape} @ {b.shape}"
        )
    out = a.data @ b.data

    def vjp(g):
        a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _node(out, (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``[..., in] @ [in, out] (+ [out])``.

    Equivalent to matmul with a rank-2 right operand, but all leading axes
    are flattened into one GEMM, which is much faster than stacked small
    products, and the weight gradient is a single GEMM as well.
    """
    if w.ndim != 2:
        raise DimensionError(f"linear weight must be rank 2, got {w.shape}")
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear extents differ: {x.shape} @ {w.shape}")
    *lead, n_in = x.shape
    n_out = w.shape[1]
    x2 = x.data.reshape(-1, n_in)
    out = x2 @ w.data
    if b is not None:
        if b.shape != (n_out,):
            raise DimensionError(f"bias shape {b.shape} does not match {n_out} outputs")
        np.add(out, b.data, out=out)
    out = out.reshape(*lead, n_out)
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        g2 = g.reshape(-1, n_out)
        if x.requires_grad or x._parents:
            x._accumulate((g2 @ w.data.T).reshape(x.shape))
        if w.requires_grad or w._parents:
            w._accumulate(x2.T @ g2)
        if b is not None:
            b._accumulate(g2.sum(axis=0))

    return _node(out, parents, vjp)


def windows(x: Tensor, width: int, stride: int) -> Tensor:
    """Overlapping sliding windows along the last axis.

    ``[..., l] -> [..., N, width]`` with ``N = (l - width)/stride + 1``.
    The tail must divide evenly; a leftover tail is rejected rather than
    silently truncated.
    """
    l = x.shape[-1]
    if l < width:
        raise DimensionError(f"signal length {l} shorter than window {width}")
    if (l - width) % stride != 0:
        raise DimensionError(
            f"(l - width) = {l - width} not divisible by stride {stride}; "
            "trim the signal or change the window geometry"
        )
    n = (l - width) // stride + 1
    view = np.lib.stride_tricks.sliding_window_view(x.data, width, axis=-1)
    out = np.ascontiguousarray(view[..., ::stride, :])

    idx = np.arange(n)[:, None] * stride + np.arange(width)[None, :]

    def vjp(g):
        if not x.requires_grad and not x._parents:
            return
        gx = np.zeros_like(x.data)
        if x.ndim == 1:
            np.add.at(gx, idx, g)
        else:
            lead = int(np.prod(x.shape[:-1]))
            gx2 = gx.reshape(lead, l)
            g2 = g.reshape(lead, n, width)
            np.add.at(gx2, (np.arange(lead)[:, None, None], idx[None]), g2)
        x._accumulate(gx)

    return _node(out, (x,), vjp)


def conv1d(signal: Tensor, kernels: Tensor, bias: Tensor, stride: int) -> Tensor:
    """Strided 1-D cross-correlation: ``[..., l] -> [..., N, h]``.

    Row i, channel j is ``sum_k kernels[j, k] * signal[stride*i + k] + bias[j]``.
    Differentiable in all three tensor arguments.
    """
    if kernels.ndim != 2:
        raise DimensionError(f"kernels must be [h, width], got {kernels.shape}")
    h, width = kernels.shape
    if bias.shape != (h,):
        raise DimensionError(
            f"bias shape {bias.shape} does not match {h} kernels"
        )
    patches = windows(signal, width, stride)
    return linear(patches, transpose(kernels, (1, 0)), bias)


# -- shape manipulation -----------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def vjp(g):
        x._accumulate(g.reshape(x.shape))

    return _node(out, (x,), vjp)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        x._accumulate(np.transpose(g, inverse))

    return _node(out, (x,), vjp)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = tuple(parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        for p, piece in zip(parts, np.split(g, cuts, axis=axis)):
            p._accumulate(piece)

    return _node(out, parts, vjp)


def index(x: Tensor, key) -> Tensor:
    """Basic (slice / integer) indexing with gradient scatter."""
    out = x.data[key]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[key] += g
        x._accumulate(gx)

    return _node(out, (x,), vjp)


# -- reductions ---------------------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape).astype(x.data.dtype))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).astype(x.data.dtype))

    return _node(out, (x,), vjp)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in ax]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# -- nonlinearities ------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def vjp(g):
        x._accumulate(g * (x.data > 0))

    return _node(out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function clamped to the open interval (0, 1).

    Saturated values are pulled one epsilon inside the interval so that
    downstream logs stay finite at any storage precision.
    """
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)
    eps = np.finfo(d.dtype).eps
    np.clip(out, eps, 1.0 - eps, out=out)

    def vjp(g):
        x._accumulate(g * out * (1.0 - out))

    return _node(out, (x,), vjp)


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)

    def vjp(g):
        x._accumulate(g / x.data)

    return _node(out, (x,), vjp)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction.

    Each last-axis slice of the output is a probability row: nonnegative,
    summing to one, stable for inputs of any finite magnitude.
    """
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        x._accumulate(out * (g - inner))

    return _node(out, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each last-axis slice to zero mean / unit variance, then affine.

    Zero-variance slices are handled by ``eps``; the slice length must be
    at least 2 for the variance to mean anything.
    """
    h = x.shape[-1]
    if h < 2:
        raise DimensionError(f"layer_norm needs slices of length >= 2, got {h}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        gxhat = g * gain.data
        if x.requires_grad or x._parents:
            s1 = gxhat.sum(axis=-1, keepdims=True)
            s2 = (gxhat * xhat).sum(axis=-1, keepdims=True)
            x._accumulate(inv / h * (h * gxhat - s1 - xhat * s2))
        lead = tuple(range(g.ndim - 1))
        gain._accumulate((g * xhat).sum(axis=lead))
        bias._accumulate(g.sum(axis=lead))

    return _node(out, (x, gain, bias), vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    if not training or rate == 0.0:
        return x
    draws = rng.random(x.shape, dtype=np.float32)
    scale = 1.0 / (1.0 - rate)
    # mask carries the inverted-dropout scale so forward/backward are one pass
    mask = np.multiply(draws >= rate, x.data.dtype.type(scale))
    out = x.data * mask

    def vjp(g):
        x._accumulate(g * mask)

    return _node(out, (x,), vjp)


# -- parameter helpers -----------------------------------------------------------


def uniform_param(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    bound: float,
    dtype=DEFAULT_DTYPE,
) -> Tensor:
    """Trainable tensor initialized uniformly in ``[-bound, bound]``."""
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def zeros_param(shape: tuple[int, ...], dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape: tuple[int, ...], dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)
