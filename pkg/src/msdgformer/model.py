"""Model assembly: full dictionary-guided model, ablation, and efficient export.

The full model embeds the input spectrum and the denoised dictionary through
separate convolutional pathways (shared m/z positional embedding), encodes
them with separate transformer stacks, lets the input query the c enriched
class summaries through selection attention, and predicts per-patch peak
probabilities. Classification is cosine similarity of the predicted peak
vector against each class's ground-truth peak vector.

The ablation (no dictionary pathway, no selection) is a standard
transformer encoder over the same patch tokens. The efficient export
precomputes the c enriched token sequences once and drops the whole
dictionary pathway; its forwards match the full model's.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import encoder as enc
from .dictionary import DenoisedDictionary
from .embedding import DICTIONARY, INPUT, EmbeddingWeights, init_embedding, mz_positional, patchify_embed
from .errors import ConfigError, FormatError
from .numcore import (
    DEFAULT_DTYPE,
    ParameterStore,
    Tensor,
    concat,
    dropout,
    linear,
    no_grad,
    relu,
    reshape,
    sigmoid,
    tensor,
    transpose,
    uniform_param,
    zeros_param,
)
from .spectra import DUST_CLASS, N_CLASSES, ClassTemplate, MzAxis, peak_ground_truth

FULL = "full"
MS_FORMER = "ms-former"
EFFICIENT = "efficient"


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class ModelConfig:
    """Every architectural hyperparameter in one place."""

    l: int
    rho: int
    gamma: int
    h: int
    heads: int
    d_k: int
    layers: int
    mlp_dim: int
    phi: int
    alpha: int
    c: int
    r: int
    dropout: float = 0.1
    dictionary_enabled: bool = True
    tau: float = 0.5

    def validate(self) -> "ModelConfig":
        if self.h != self.heads * self.d_k:
            raise ConfigError(f"h={self.h} must equal heads*d_k={self.heads * self.d_k}")
        if self.l < self.rho:
            raise ConfigError(f"l={self.l} shorter than patch width rho={self.rho}")
        if (self.l - self.rho) % self.gamma != 0:
            raise ConfigError(
                f"(l - rho) = {self.l - self.rho} not divisible by gamma={self.gamma}"
            )
        if self.alpha % self.c != 0:
            raise ConfigError(f"alpha={self.alpha} not divisible by c={self.c}")
        if not 1 <= self.r <= self.alpha // self.c:
            raise ConfigError(f"rank r={self.r} outside 1..alpha/c={self.alpha // self.c}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")
        return self

    @property
    def n_patches(self) -> int:
        return (self.l - self.rho) // self.gamma + 1

    @property
    def per_class(self) -> int:
        return self.alpha // self.c


def paper_config(**overrides) -> ModelConfig:
    """Published hyperparameters: 88300-point spectra, 1765 patches."""
    cfg = ModelConfig(
        l=88300, rho=100, gamma=50, h=256, heads=8, d_k=32, layers=3,
        mlp_dim=2048, phi=512, alpha=32, c=4, r=2,
    )
    return replace(cfg, **overrides).validate()


def desk_config(**overrides) -> ModelConfig:
    """Small configuration that trains on a desktop in minutes."""
    cfg = ModelConfig(
        l=4000, rho=40, gamma=20, h=64, heads=4, d_k=16, layers=2,
        mlp_dim=256, phi=128, alpha=8, c=4, r=2,
    )
    return replace(cfg, **overrides).validate()


# ------------------------------------------------------------------ weights


@dataclass
class PeakHeadWeights:
    """Two-layer MLP mapping each patch token to one peak probability."""

    w1: Tensor  # [h, phi]
    b1: Tensor  # [phi]
    w2: Tensor  # [phi, 1]
    b2: Tensor  # [1]


@dataclass
class ModelWeights:
    embedding: EmbeddingWeights
    input_blocks: list[enc.EncoderBlockWeights]
    dict_blocks: list[enc.EncoderBlockWeights] | None
    tokens: enc.LearnableTokens | None
    selection: enc.SelectionWeights | None
    head: PeakHeadWeights

    def parameter_store(self) -> ParameterStore:
        store = ParameterStore()
        emb = self.embedding
        store.add("embed.input.kernels", emb.input_kernels)
        store.add("embed.input.bias", emb.input_bias)
        store.add("embed.pos.weight", emb.pos_weight)
        store.add("embed.pos.bias", emb.pos_bias)
        if emb.dict_kernels is not None:
            store.add("embed.dict.kernels", emb.dict_kernels)
            store.add("embed.dict.bias", emb.dict_bias)
        _add_blocks(store, "input_enc", self.input_blocks)
        if self.dict_blocks is not None:
            _add_blocks(store, "dict_enc", self.dict_blocks)
        if self.tokens is not None:
            for i, t in enumerate(self.tokens.tokens):
                store.add(f"tokens.{i}", t)
        if self.selection is not None:
            _add_attention(store, "selection", self.selection)
        store.add("head.w1", self.head.w1)
        store.add("head.b1", self.head.b1)
        store.add("head.w2", self.head.w2)
        store.add("head.b2", self.head.b2)
        return store


def _add_attention(store: ParameterStore, prefix: str, a: enc.AttentionWeights):
    for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
        store.add(f"{prefix}.{name}", getattr(a, name))


def _add_blocks(store: ParameterStore, prefix: str, blocks):
    for i, b in enumerate(blocks):
        _add_attention(store, f"{prefix}.{i}.attn", b.attn)
        for name in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
                     "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2"):
            store.add(f"{prefix}.{i}.{name}", getattr(b, name))


def init_weights(cfg: ModelConfig, seed, dtype=DEFAULT_DTYPE) -> ModelWeights:
    """Fresh trainable weights for the configured architecture."""
    cfg.validate()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    with_dict = cfg.dictionary_enabled
    embedding = init_embedding(cfg.rho, cfg.gamma, cfg.h, rng, with_dict, dtype)
    input_blocks = [enc.init_block(cfg.h, cfg.mlp_dim, rng, dtype) for _ in range(cfg.layers)]
    dict_blocks = tokens = selection = None
    if with_dict:
        dict_blocks = [enc.init_block(cfg.h, cfg.mlp_dim, rng, dtype) for _ in range(cfg.layers)]
        tokens = enc.init_tokens(cfg.c, cfg.n_patches, cfg.h, rng, dtype)
        selection = enc.init_attention(cfg.h, rng, dtype)
    head = PeakHeadWeights(
        w1=uniform_param(rng, (cfg.h, cfg.phi), 1.0 / np.sqrt(cfg.h), dtype),
        b1=zeros_param((cfg.phi,), dtype),
        w2=uniform_param(rng, (cfg.phi, 1), 1.0 / np.sqrt(cfg.phi), dtype),
        b2=zeros_param((1,), dtype),
    )
    return ModelWeights(embedding, input_blocks, dict_blocks, tokens, selection, head)


# ------------------------------------------------------------------ references


@dataclass(frozen=True)
class ClassReference:
    """Ground-truth peak vector per class; dust is the all-zero vector."""

    matrix: np.ndarray  # [N_CLASSES, N] of 0/1 float32
    is_dust: np.ndarray  # [N_CLASSES] bool

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float32)
        d = np.asarray(self.is_dust, dtype=bool)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "is_dust", d)
        if m.shape[0] != N_CLASSES or d.shape != (N_CLASSES,):
            raise ConfigError(f"need {N_CLASSES} reference rows, got {m.shape}")
        for row, dust in zip(m, d):
            if dust and row.any():
                raise ConfigError("dust reference must be the zero vector")
            if not dust and not row.any():
                raise ConfigError("positive-class reference needs at least one set bit")


def make_class_reference(
    templates: Sequence[ClassTemplate], axis: MzAxis, rho: int, gamma: int
) -> ClassReference:
    rows = []
    dust = []
    for t in sorted(templates, key=lambda t: t.class_id):
        pv = peak_ground_truth(t, axis, rho, gamma)
        rows.append(pv.bits.astype(np.float32))
        dust.append(t.n_peaks == 0)
    return ClassReference(np.stack(rows), np.array(dust))


# ------------------------------------------------------------------ forward


@dataclass
class ForwardResult:
    peaks: Tensor                 # [..., N] in (0, 1)
    selection_maps: np.ndarray | None  # [..., N, heads, c], detached
    token_maps: list[np.ndarray] | None  # c arrays [N, alpha/c + 1], detached


def _peak_head(x: Tensor, head: PeakHeadWeights) -> Tensor:
    hidden = relu(linear(x, head.w1, head.b1))
    out = linear(hidden, head.w2, head.b2)
    return sigmoid(reshape(out, out.shape[:-1]))


def enrich_tokens(
    dictionary: DenoisedDictionary,
    cfg: ModelConfig,
    weights: ModelWeights,
    pos: Tensor,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, list[np.ndarray]]:
    """Run the dictionary pathway once: returns [N, c, h] enriched tokens.

    The result is input-independent, which is what makes the efficient
    export possible; during training it is shared by every spectrum in
    the batch and gradients flow through it once. The c sub-dictionaries
    go through the shared encoder stack as one [c, N, alpha/c + 1, h]
    batch; this matches per-class ``encode_subdictionary`` calls because
    every op acts position-wise over the last axes.
    """
    n, h, per = cfg.n_patches, cfg.h, cfg.per_class
    all_rows = tensor(dictionary.spectra, dtype=weights.embedding.input_kernels.dtype)
    embedded = patchify_embed(all_rows, DICTIONARY, weights.embedding) + pos
    embedded = dropout(embedded, cfg.dropout, rng, training)
    stacked = transpose(reshape(embedded, (cfg.c, per, n, h)), (0, 2, 1, 3))
    toks = concat(
        [reshape(t, (1, n, 1, h)) for t in weights.tokens.tokens], axis=0
    )
    x = concat([stacked, toks], axis=2)  # [c, N, alpha/c + 1, h]
    amap = None
    for w in weights.dict_blocks:
        x, amap = enc.encoder_block(x, w, cfg.heads, cfg.dropout, training, rng)
    enriched = x[:, :, -1, :]  # [c, N, h]
    if amap is None:
        uniform = 1.0 / (per + 1)
        token_maps = [np.full((n, per + 1), uniform, dtype=np.float32)
                      for _ in range(cfg.c)]
    else:
        token_maps = [amap[i, :, :, -1, :].mean(axis=1) for i in range(cfg.c)]
    return transpose(enriched, (1, 0, 2)), token_maps


def _check_forward_inputs(spectra: np.ndarray, axis: MzAxis, dictionary, cfg: ModelConfig,
                          weights: ModelWeights):
    cfg.validate()
    if spectra.shape[-1] != cfg.l:
        raise ConfigError(f"spectrum length {spectra.shape[-1]} != configured l={cfg.l}")
    if len(axis) != cfg.l:
        raise ConfigError(f"axis length {len(axis)} != configured l={cfg.l}")
    if cfg.dictionary_enabled:
        if dictionary is None:
            raise ConfigError("this configuration needs a denoised dictionary")
        if dictionary.alpha != cfg.alpha or dictionary.c != cfg.c:
            raise ConfigError(
                f"dictionary {dictionary.alpha}x{dictionary.c} classes does not "
                f"match config alpha={cfg.alpha}, c={cfg.c}"
            )
        if dictionary.spectra.shape[1] != cfg.l:
            raise ConfigError(
                f"dictionary spectra length {dictionary.spectra.shape[1]} != l={cfg.l}"
            )
        if weights.tokens is None or weights.dict_blocks is None or weights.selection is None:
            raise ConfigError("weights lack the dictionary pathway")


def forward_graph(
    spectra: np.ndarray,
    axis: MzAxis,
    dictionary: DenoisedDictionary | None,
    cfg: ModelConfig,
    weights: ModelWeights,
    training: bool = False,
    rng: np.random.Generator | None = None,
    cached_tokens: Tensor | None = None,
) -> ForwardResult:
    """Differentiable forward over ``[..., l]`` spectra.

    ``cached_tokens`` short-circuits the dictionary pathway (efficient
    variant); otherwise it is recomputed from the dictionary when enabled.
    """
    spectra = np.asarray(spectra)
    if cached_tokens is None:
        _check_forward_inputs(spectra, axis, dictionary, cfg, weights)
    else:
        if spectra.shape[-1] != cfg.l:
            raise ConfigError(f"spectrum length {spectra.shape[-1]} != configured l={cfg.l}")
        if weights.selection is None:
            raise ConfigError("cached tokens need selection-attention weights")
    dtype = weights.embedding.input_kernels.dtype
    pos = mz_positional(axis.values, weights.embedding)
    x = patchify_embed(tensor(spectra, dtype=dtype), INPUT, weights.embedding) + pos
    x = dropout(x, cfg.dropout, rng, training)
    x = enc.encode_input(x, weights.input_blocks, cfg.heads, cfg.dropout, training, rng)

    selection_maps = None
    token_maps = None
    if cached_tokens is not None:
        x, selection_maps = enc.selection_attention(
            x, cached_tokens, weights.selection, cfg.heads, cfg.dropout, training, rng
        )
    elif cfg.dictionary_enabled:
        tokens, token_maps = enrich_tokens(dictionary, cfg, weights, pos, training, rng)
        x, selection_maps = enc.selection_attention(
            x, tokens, weights.selection, cfg.heads, cfg.dropout, training, rng
        )
    peaks = _peak_head(x, weights.head)
    return ForwardResult(peaks, selection_maps, token_maps)


def forward(
    spectrum,
    axis: MzAxis,
    dictionary: DenoisedDictionary | None,
    cfg: ModelConfig,
    weights: ModelWeights,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Single-spectrum inference: peak probabilities [N] and selection maps."""
    arr = spectrum.intensities if hasattr(spectrum, "intensities") else np.asarray(spectrum)
    with no_grad():
        out = forward_graph(arr, axis, dictionary, cfg, weights, training, rng)
    return out.peaks.numpy(), out.selection_maps


# ------------------------------------------------------------------ classify


def classify(peaks: np.ndarray, refs: ClassReference, tau: float) -> int:
    """Cosine-similarity argmax over positive classes, dust below threshold.

    Dust's reference is the zero vector, whose similarity is defined as 0,
    so dust can never win the argmax directly; it is predicted when no
    positive class clears ``tau`` (or the prediction itself is all zero).
    """
    peaks = np.asarray(peaks, dtype=np.float64)
    if peaks.shape != (refs.matrix.shape[1],):
        raise ConfigError(
            f"prediction length {peaks.shape} != reference length {refs.matrix.shape[1]}"
        )
    norm = float(np.linalg.norm(peaks))
    dust_id = int(np.flatnonzero(refs.is_dust)[0]) + 1 if refs.is_dust.any() else DUST_CLASS
    if norm == 0.0:
        return dust_id
    sims = np.zeros(N_CLASSES)
    for i in range(N_CLASSES):
        if refs.is_dust[i]:
            continue
        ref = refs.matrix[i].astype(np.float64)
        sims[i] = float(peaks @ ref) / (norm * float(np.linalg.norm(ref)))
    best = int(np.argmax(sims))
    if sims[best] < tau:
        return dust_id
    return best + 1


# ------------------------------------------------------------------ counting


@dataclass(frozen=True)
class ParameterCount:
    """Itemized trainable-scalar counts.

    ``weights`` counts network weights only; the learnable token sequences
    scale with the patch grid (c * N * h) and are itemized separately,
    matching how the reference totals for this architecture are quoted.
    ``total`` includes them.
    """

    items: dict[str, int]

    @property
    def weights(self) -> int:
        return sum(v for k, v in self.items.items() if k != "learnable_tokens")

    @property
    def tokens(self) -> int:
        return self.items.get("learnable_tokens", 0)

    @property
    def total(self) -> int:
        return self.weights + self.tokens


def count_parameters(cfg: ModelConfig, kind: str | None = None) -> ParameterCount:
    """Exact trainable-scalar count per component, as a pure function of config."""
    cfg.validate()
    if kind is None:
        kind = FULL if cfg.dictionary_enabled else MS_FORMER
    if kind not in (FULL, MS_FORMER, EFFICIENT):
        raise ConfigError(f"unknown model kind {kind!r}")
    h, rho, mlp, phi = cfg.h, cfg.rho, cfg.mlp_dim, cfg.phi
    conv = h * rho + h
    attn = 4 * (h * h + h)
    block = attn + 2 * 2 * h + (h * mlp + mlp) + (mlp * h + h)
    items = {
        "input_embedding": conv,
        "positional_embedding": conv,
        "input_encoder": cfg.layers * block,
        "peak_head": h * phi + phi + phi * 1 + 1,
    }
    if kind == FULL:
        items["dictionary_embedding"] = conv
        items["dictionary_encoder"] = cfg.layers * block
        items["learnable_tokens"] = cfg.c * cfg.n_patches * h
        items["selection_attention"] = attn
    elif kind == EFFICIENT:
        items["selection_attention"] = attn
    return ParameterCount(items)


# ------------------------------------------------------------------ containers


@dataclass
class Model:
    """A loaded/trained model: immutable for inference, owned by training."""

    cfg: ModelConfig
    weights: ModelWeights
    axis: MzAxis
    refs: ClassReference
    dictionary: DenoisedDictionary | None

    @property
    def kind(self) -> str:
        return FULL if self.cfg.dictionary_enabled else MS_FORMER

    def predict(self, spectra, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Peak probabilities for ``[l]`` or ``[B, l]`` raw intensities."""
        arr = np.asarray(spectra)
        with no_grad():
            out = forward_graph(arr, self.axis, self.dictionary, self.cfg,
                                self.weights, training, rng)
        return out.peaks.numpy()

    def classify_spectrum(self, spectrum) -> int:
        arr = spectrum.intensities if hasattr(spectrum, "intensities") else np.asarray(spectrum)
        return classify(self.predict(arr), self.refs, self.cfg.tau)

    def maps(self, spectrum) -> ForwardResult:
        arr = spectrum.intensities if hasattr(spectrum, "intensities") else np.asarray(spectrum)
        with no_grad():
            return forward_graph(arr, self.axis, self.dictionary, self.cfg, self.weights)


@dataclass
class EfficientModel:
    """Inference export: cached enriched tokens, no dictionary pathway."""

    cfg: ModelConfig
    weights: ModelWeights  # dictionary parts stripped
    axis: MzAxis
    refs: ClassReference
    cached_tokens: np.ndarray  # [N, c, h]

    kind: str = field(default=EFFICIENT, init=False)

    def predict(self, spectra, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        arr = np.asarray(spectra)
        cache = tensor(self.cached_tokens, dtype=self.weights.embedding.input_kernels.dtype)
        with no_grad():
            out = forward_graph(arr, self.axis, None, self.cfg, self.weights,
                                training, rng, cached_tokens=cache)
        return out.peaks.numpy()

    def classify_spectrum(self, spectrum) -> int:
        arr = spectrum.intensities if hasattr(spectrum, "intensities") else np.asarray(spectrum)
        return classify(self.predict(arr), self.refs, self.cfg.tau)

    def maps(self, spectrum) -> ForwardResult:
        arr = spectrum.intensities if hasattr(spectrum, "intensities") else np.asarray(spectrum)
        cache = tensor(self.cached_tokens, dtype=self.weights.embedding.input_kernels.dtype)
        with no_grad():
            return forward_graph(arr, self.axis, None, self.cfg, self.weights,
                                 cached_tokens=cache)


def export_efficient(model: Model) -> EfficientModel:
    """Precompute the c enriched token sequences and drop the dictionary.

    The exported model's forwards match the full model's because the
    dictionary pathway never depended on the input spectrum.
    """
    if not model.cfg.dictionary_enabled or model.dictionary is None:
        raise ConfigError("only a full dictionary-guided model can be exported")
    with no_grad():
        pos = mz_positional(model.axis.values, model.weights.embedding)
        tokens, _ = enrich_tokens(model.dictionary, model.cfg, model.weights, pos)
    emb = model.weights.embedding
    stripped = ModelWeights(
        embedding=EmbeddingWeights(
            rho=emb.rho, gamma=emb.gamma,
            input_kernels=emb.input_kernels, input_bias=emb.input_bias,
            pos_weight=emb.pos_weight, pos_bias=emb.pos_bias,
            dict_kernels=None, dict_bias=None,
        ),
        input_blocks=model.weights.input_blocks,
        dict_blocks=None,
        tokens=None,
        selection=model.weights.selection,
        head=model.weights.head,
    )
    return EfficientModel(
        cfg=replace(model.cfg, dictionary_enabled=True),
        weights=stripped,
        axis=model.axis,
        refs=model.refs,
        cached_tokens=tokens.numpy().copy(),
    )


# ------------------------------------------------------------------ checkpoint

_MAGIC = b"MSDG"
_VERSION = 1
_KIND_CODE = {FULL: 0, MS_FORMER: 1, EFFICIENT: 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}
_CFG_STRUCT = struct.Struct("<B13QfBf")  # kind, 13 extents, dropout, dict flag, tau


def _pack_config(kind: str, cfg: ModelConfig) -> bytes:
    return _CFG_STRUCT.pack(
        _KIND_CODE[kind], cfg.l, cfg.rho, cfg.gamma, cfg.h, cfg.heads, cfg.d_k,
        cfg.layers, cfg.mlp_dim, cfg.phi, cfg.alpha, cfg.c, cfg.r, cfg.n_patches,
        cfg.dropout, int(cfg.dictionary_enabled), cfg.tau,
    )


def _unpack_config(blob: bytes, off: int) -> tuple[str, ModelConfig, int]:
    vals = _CFG_STRUCT.unpack_from(blob, off)
    kind_code, l, rho, gamma, h, heads, d_k, layers, mlp, phi, alpha, c, r, n, \
        drop, dict_flag, tau = vals
    if kind_code not in _CODE_KIND:
        raise FormatError(f"unknown model kind code {kind_code}", offset=off)
    cfg = ModelConfig(l, rho, gamma, h, heads, d_k, layers, mlp, phi, alpha, c, r,
                      float(drop), bool(dict_flag), float(tau))
    if cfg.n_patches != n:
        raise FormatError(f"stored patch count {n} != derived {cfg.n_patches}", offset=off)
    return _CODE_KIND[kind_code], cfg, off + _CFG_STRUCT.size


def _tensor_entries(model) -> dict[str, np.ndarray]:
    entries = {name: t.data for name, t in model.weights.parameter_store().items()}
    entries["axis.mz"] = model.axis.values
    entries["refs.matrix"] = model.refs.matrix
    entries["refs.dust"] = model.refs.is_dust.astype(np.float32)
    if isinstance(model, EfficientModel):
        entries["cache.enriched"] = model.cached_tokens
    elif model.dictionary is not None:
        d = model.dictionary
        entries["dict.spectra"] = d.spectra
        entries["dict.singvals"] = d.singular_values
        entries["dict.class_ids"] = np.asarray(d.class_ids, dtype=np.float32)
    return entries


def save_checkpoint(path, model) -> None:
    """Write the MSDG container: config block plus a named float32 tensor table."""
    kind = model.kind
    entries = _tensor_entries(model)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(_pack_config(kind, model.cfg))
        fh.write(struct.pack("<I", len(entries)))
        for name in sorted(entries):
            arr = np.ascontiguousarray(entries[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read an MSDG container back into a Model or EfficientModel."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != _MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {_MAGIC!r}", offset=0)
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    kind, cfg, off = _unpack_config(blob, 8)
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    table: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        rank = blob[off]
        off += 1
        shape = struct.unpack_from(f"<{rank}Q", blob, off) if rank else ()
        off += 8 * rank
        n_items = int(np.prod(shape)) if shape else 1
        end = off + 4 * n_items
        if end > len(blob):
            raise FormatError(f"tensor {name!r} truncated", offset=len(blob))
        table[name] = np.frombuffer(blob, dtype="<f4", count=n_items, offset=off
                                    ).reshape(shape).copy()
        off = end
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes after tensor table", offset=off)
    return _rebuild(kind, cfg, table)


def _rebuild(kind: str, cfg: ModelConfig, table: dict[str, np.ndarray]):
    build_cfg = cfg if kind == FULL else replace(cfg, dictionary_enabled=(kind == FULL))
    if kind == EFFICIENT:
        # efficient weights have no dictionary pathway but keep selection
        build_cfg = replace(cfg, dictionary_enabled=False)
    weights = init_weights(build_cfg, seed=0)
    if kind == EFFICIENT:
        rng = np.random.default_rng(0)
        weights.selection = enc.init_attention(cfg.h, rng)
    store = weights.parameter_store()
    for name, t in store.items():
        if name not in table:
            raise FormatError(f"checkpoint lacks tensor {name!r}")
        if table[name].shape != t.data.shape:
            raise FormatError(
                f"tensor {name!r} has shape {table[name].shape}, expected {t.data.shape}"
            )
        t.data = table[name].astype(t.data.dtype)
    for required in ("axis.mz", "refs.matrix", "refs.dust"):
        if required not in table:
            raise FormatError(f"checkpoint lacks tensor {required!r}")
    axis = MzAxis(table["axis.mz"])
    refs = ClassReference(table["refs.matrix"], table["refs.dust"].astype(bool))
    if kind == EFFICIENT:
        if "cache.enriched" not in table:
            raise FormatError("efficient checkpoint lacks tensor 'cache.enriched'")
        cache = table["cache.enriched"]
        if cache.shape != (cfg.n_patches, cfg.c, cfg.h):
            raise FormatError(
                f"tensor 'cache.enriched' has shape {cache.shape}, expected "
                f"{(cfg.n_patches, cfg.c, cfg.h)}"
            )
        return EfficientModel(replace(cfg, dictionary_enabled=True), weights, axis,
                              refs, cache)
    dictionary = None
    if kind == FULL:
        for required in ("dict.spectra", "dict.singvals", "dict.class_ids"):
            if required not in table:
                raise FormatError(f"checkpoint lacks tensor {required!r}")
        ids = tuple(int(v) for v in table["dict.class_ids"])
        dictionary = DenoisedDictionary(
            table["dict.spectra"], ids, cfg.per_class, cfg.r, table["dict.singvals"]
        )
    return Model(cfg if kind == FULL else replace(cfg, dictionary_enabled=False),
                 weights, axis, refs, dictionary)
