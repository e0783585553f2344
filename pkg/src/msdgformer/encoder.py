"""The three attention mechanisms.

- input encoder: pre-norm self-attention blocks over the N patch tokens
- dictionary encoder: the same block structure applied slice-wise -- at
  each patch position independently, attention runs across the alpha/c
  dictionary sequences plus one learnable token sequence, and the enriched
  learnable token is extracted as the class summary
- selection attention: one cross-attention layer where encoded input
  tokens query the c enriched class summaries position by position, with
  a residual back to the input

All attention maps are exposed (head-resolved, detached) for inspection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numcore import (
    DEFAULT_DTYPE,
    Tensor,
    concat,
    dropout,
    layer_norm,
    linear,
    matmul,
    relu,
    reshape,
    softmax_rows,
    transpose,
    uniform_param,
    zeros_param,
    ones_param,
)


@dataclass
class AttentionWeights:
    """Q/K/V/O projections of one multi-head attention, with biases."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


# Selection attention reuses the plain multi-head geometry.
SelectionWeights = AttentionWeights


@dataclass
class EncoderBlockWeights:
    """One pre-norm transformer block: LN -> MHA -> LN -> MLP, residuals."""

    attn: AttentionWeights
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    mlp_w1: Tensor  # [h, mlp_dim]
    mlp_b1: Tensor
    mlp_w2: Tensor  # [mlp_dim, h]
    mlp_b2: Tensor


@dataclass
class LearnableTokens:
    """One trainable [N, h] sequence per sub-dictionary."""

    tokens: list[Tensor]

    @property
    def c(self) -> int:
        return len(self.tokens)


def init_attention(h: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> AttentionWeights:
    bound = 1.0 / math.sqrt(h)
    return AttentionWeights(
        wq=uniform_param(rng, (h, h), bound, dtype), bq=zeros_param((h,), dtype),
        wk=uniform_param(rng, (h, h), bound, dtype), bk=zeros_param((h,), dtype),
        wv=uniform_param(rng, (h, h), bound, dtype), bv=zeros_param((h,), dtype),
        wo=uniform_param(rng, (h, h), bound, dtype), bo=zeros_param((h,), dtype),
    )


def init_block(h: int, mlp_dim: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> EncoderBlockWeights:
    return EncoderBlockWeights(
        attn=init_attention(h, rng, dtype),
        ln1_gain=ones_param((h,), dtype), ln1_bias=zeros_param((h,), dtype),
        ln2_gain=ones_param((h,), dtype), ln2_bias=zeros_param((h,), dtype),
        mlp_w1=uniform_param(rng, (h, mlp_dim), 1.0 / math.sqrt(h), dtype),
        mlp_b1=zeros_param((mlp_dim,), dtype),
        mlp_w2=uniform_param(rng, (mlp_dim, h), 1.0 / math.sqrt(mlp_dim), dtype),
        mlp_b2=zeros_param((h,), dtype),
    )


def init_tokens(
    c: int, n: int, h: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE
) -> LearnableTokens:
    return LearnableTokens(
        [Tensor((0.02 * rng.standard_normal((n, h))).astype(dtype), requires_grad=True)
         for _ in range(c)]
    )


# --------------------------------------------------------------- attention


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., t, h] -> [..., heads, t, d_k]"""
    *lead, t, h = x.shape
    d_k = h // heads
    x = reshape(x, (*lead, t, heads, d_k))
    nd = x.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return transpose(x, perm)


def _merge_heads(x: Tensor) -> Tensor:
    """[..., heads, t, d_k] -> [..., t, h]"""
    nd = x.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    x = transpose(x, perm)
    *lead, t, heads, d_k = x.shape
    return reshape(x, (*lead, t, heads * d_k))


def multi_head_attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    w: AttentionWeights,
    heads: int,
) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention; returns output and detached weights.

    ``queries`` is [..., tq, h]; ``keys``/``values`` are [..., tk, h] with
    broadcastable leading dims. The returned map is [..., heads, tq, tk].
    """
    h = queries.shape[-1]
    if h % heads != 0:
        raise ConfigError(f"hidden width {h} not divisible by {heads} heads")
    scale = 1.0 / math.sqrt(h // heads)
    # folding the 1/sqrt(d_k) into q scales the scores identically but
    # touches the smaller [.., t, h] array instead of [.., t, t] scores
    q = _split_heads(linear(queries, w.wq, w.bq) * scale, heads)
    k = _split_heads(linear(keys, w.wk, w.bk), heads)
    v = _split_heads(linear(values, w.wv, w.bv), heads)
    scores = matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    probs = softmax_rows(scores)
    ctx = _merge_heads(matmul(probs, v))
    out = linear(ctx, w.wo, w.bo)
    return out, probs.numpy()


def _mlp(x: Tensor, w: EncoderBlockWeights) -> Tensor:
    return linear(relu(linear(x, w.mlp_w1, w.mlp_b1)), w.mlp_w2, w.mlp_b2)


def encoder_block(
    x: Tensor,
    w: EncoderBlockWeights,
    heads: int,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Pre-norm residual block: x + Drop(MHA(LN(x))), then + Drop(MLP(LN(x)))."""
    normed = layer_norm(x, w.ln1_gain, w.ln1_bias)
    attn_out, amap = multi_head_attention(normed, normed, normed, w.attn, heads)
    x = x + dropout(attn_out, dropout_rate, rng, training)
    mlp_out = _mlp(layer_norm(x, w.ln2_gain, w.ln2_bias), w)
    x = x + dropout(mlp_out, dropout_rate, rng, training)
    return x, amap


def encode_input(
    p: Tensor,
    blocks: list[EncoderBlockWeights],
    heads: int,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Stack of self-attention blocks over the patch positions."""
    for w in blocks:
        p, _ = encoder_block(p, w, heads, dropout_rate, training, rng)
    return p


def encode_subdictionary(
    block_embedded: Tensor,
    token: Tensor,
    blocks: list[EncoderBlockWeights],
    heads: int,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Enrich one learnable token sequence with its sub-dictionary.

    ``block_embedded`` is [alpha/c, N, h] (positional already added); the
    token is appended as the last sequence, the stack is permuted to
    [N, alpha/c + 1, h], and the encoder blocks run slice-wise: attention
    mixes the alpha/c + 1 sequences at each patch position independently.
    Returns the enriched token rows [N, h] and the last block's attention
    from the token row, head-averaged: [N, alpha/c + 1].
    """
    if block_embedded.ndim != 3 or token.ndim != 2:
        raise ConfigError(
            f"expected [alpha/c, N, h] block and [N, h] token, got "
            f"{block_embedded.shape} and {token.shape}"
        )
    if block_embedded.shape[1:] != token.shape and block_embedded.shape[0] > 0:
        raise ConfigError(
            f"sub-dictionary {block_embedded.shape} and token {token.shape} disagree"
        )
    stacked = concat([block_embedded, reshape(token, (1, *token.shape))], axis=0)
    x = transpose(stacked, (1, 0, 2))  # [N, alpha/c + 1, h]
    amap = None
    for w in blocks:
        x, amap = encoder_block(x, w, heads, dropout_rate, training, rng)
    enriched = x[:, -1, :]
    token_attention = amap[:, :, -1, :].mean(axis=1)  # [N, alpha/c + 1]
    return enriched, token_attention


def selection_attention(
    p_enc: Tensor,
    tokens: Tensor,
    w: SelectionWeights,
    heads: int,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Cross-attention from input tokens to the c enriched class summaries.

    At each patch position the input token is the single query and the c
    enriched tokens at that position are keys and values; a residual keeps
    the input pathway intact. ``p_enc`` is [..., N, h], ``tokens`` is
    [N, c, h]. Returns the residual sum and the head-resolved selection
    map [..., N, heads, c].
    """
    if tokens.ndim != 3:
        raise ConfigError(f"enriched tokens must be [N, c, h], got {tokens.shape}")
    if tokens.shape[1] < 1:
        raise ConfigError("selection attention needs at least one sub-dictionary")
    n, c, h = tokens.shape
    if h % heads != 0:
        raise ConfigError(f"hidden width {h} not divisible by {heads} heads")
    d_k = h // heads
    scale = 1.0 / math.sqrt(d_k)
    batched = p_enc.ndim == 3
    b = p_enc.shape[0] if batched else 1
    # lay the projections out as [N, heads, {b|c}, d_k] so the per-position
    # attention products batch over (N, heads) instead of (b, N, heads)
    q = linear(p_enc, w.wq, w.bq) * scale
    q = reshape(q, (b, n, heads, d_k)) if batched else reshape(q, (1, n, heads, d_k))
    q = transpose(q, (1, 2, 0, 3))                      # [N, heads, b, d_k]
    k = transpose(reshape(linear(tokens, w.wk, w.bk), (n, c, heads, d_k)), (0, 2, 3, 1))
    v = transpose(reshape(linear(tokens, w.wv, w.bv), (n, c, heads, d_k)), (0, 2, 1, 3))
    probs = softmax_rows(matmul(q, k))                  # [N, heads, b, c]
    ctx = transpose(matmul(probs, v), (2, 0, 1, 3))     # [b, N, heads, d_k]
    ctx = reshape(ctx, (b, n, h)) if batched else reshape(ctx, (n, h))
    cross = linear(ctx, w.wo, w.bo)
    out = p_enc + dropout(cross, dropout_rate, rng, training)
    maps = np.transpose(probs.numpy(), (2, 0, 1, 3))    # [b, N, heads, c]
    if not batched:
        maps = maps[0]
    return out, maps
