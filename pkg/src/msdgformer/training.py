"""Loss, learning-rate schedule, and the training loop.

Targets are the class's binary peak vector smoothed to (0.9, 0.1) inside
the loss; the schedule ramps linearly over the first 10% of steps and
cosine-decays to zero. All randomness (weight init, shuffling, dropout)
flows through one generator seeded from the config, so a fixed seed
reproduces the exact history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dictionary import DenoisedDictionary
from .errors import ConfigError, NumericError
from .model import ClassReference, Model, ModelConfig, ModelWeights, forward_graph, init_weights
from .numcore import AdamState, Tensor, adam_step, log, sub, tensor, tmean
from .spectra import Dataset, PeakVector


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 8
    base_lr: float = 1e-4
    warmup_fraction: float = 0.10
    smooth_high: float = 0.9
    smooth_low: float = 0.1
    dropout: float = 0.1
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError(f"warmup fraction {self.warmup_fraction} outside [0, 1)")
        if not self.smooth_high > self.smooth_low:
            raise ConfigError(
                f"smoothing pair needs high > low, got ({self.smooth_high}, {self.smooth_low})"
            )
        if not (0.0 < self.smooth_low and self.smooth_high < 1.0):
            raise ConfigError("smoothing targets must stay inside (0, 1)")
        return self


@dataclass
class TrainHistory:
    """Per-epoch traces; ``test_macro_f1`` is NaN where not evaluated."""

    mean_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    test_macro_f1: list[float] = field(default_factory=list)


def smooth_targets(bits, high: float = 0.9, low: float = 0.1) -> np.ndarray:
    """Map binary peak bits to smoothed targets: 1 -> high, 0 -> low."""
    raw = bits.bits if isinstance(bits, PeakVector) else np.asarray(bits)
    return (low + (high - low) * raw.astype(np.float64)).astype(np.float32)


def bce_smoothed(peaks: Tensor, bits, high: float = 0.9, low: float = 0.1) -> Tensor:
    """Mean binary cross-entropy against smoothed targets.

    ``peaks`` is the sigmoid output in (0, 1), shape [..., N]; ``bits`` the
    matching binary ground truth. Differentiable in ``peaks``.
    """
    t = smooth_targets(bits, high, low)
    if t.shape != peaks.shape:
        raise ConfigError(f"targets {t.shape} do not match predictions {peaks.shape}")
    t = tensor(t, dtype=peaks.dtype)
    one_minus_t = tensor(1.0 - t.data, dtype=peaks.dtype)
    loss = t * log(peaks) + one_minus_t * log(sub(1.0, peaks))
    return -tmean(loss)


def smoothed_entropy_floor(bits, high: float = 0.9, low: float = 0.1) -> float:
    """Greatest lower bound of the smoothed BCE for these targets.

    The per-bit minimum sits at prediction == target, where the loss equals
    the target's Bernoulli entropy; with the symmetric (0.9, 0.1) pair this
    is about 0.3251 regardless of the bit mix.
    """
    t = smooth_targets(bits, high, low).astype(np.float64)
    return float(np.mean(-(t * np.log(t) + (1 - t) * np.log(1 - t))))


def lr_at(step: int, total_steps: int, tc: TrainConfig) -> float:
    """Linear 0 -> base over the warmup steps, then cosine base -> 0."""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside 0..{total_steps}")
    warmup = math.ceil(tc.warmup_fraction * total_steps)
    if step <= warmup:
        if warmup == 0:
            return tc.base_lr
        return tc.base_lr * step / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return tc.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def fit(
    cfg: ModelConfig,
    train_set: Dataset,
    dictionary: DenoisedDictionary | None,
    tc: TrainConfig,
    refs: ClassReference,
    eval_set: Dataset | None = None,
    eval_every: int = 1,
    log_fn=None,
) -> tuple[ModelWeights, TrainHistory]:
    """Train from scratch; returns final weights and the per-epoch history.

    The class reference supplies each spectrum's target peak vector. The
    training-config dropout overrides the model config's for the run.
    Aborts with epoch/batch coordinates if the loss goes non-finite.
    """
    cfg = replace(cfg, dropout=tc.dropout).validate()
    tc.validate()
    if len(train_set) == 0:
        raise ConfigError("empty training set")
    rng = np.random.default_rng(tc.seed)
    weights = init_weights(cfg, rng)
    store = weights.parameter_store()
    state = AdamState(store)

    x_all = np.stack([s.intensities for s in train_set.spectra])
    labels = np.array([s.label for s in train_set.spectra])
    axis = train_set.axis
    n = len(train_set)
    steps_per_epoch = math.ceil(n / tc.batch_size)
    total_steps = max(1, tc.epochs * steps_per_epoch)

    history = TrainHistory()
    step = 0
    lr = 0.0
    for epoch in range(tc.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, tc.batch_size):
            idx = perm[lo : lo + tc.batch_size]
            bits = refs.matrix[labels[idx] - 1]
            out = forward_graph(x_all[idx], axis, dictionary, cfg, weights,
                                training=True, rng=rng)
            loss = bce_smoothed(out.peaks, bits, tc.smooth_high, tc.smooth_low)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {lo // tc.batch_size}"
                )
            store.zero_grad()
            loss.backward()
            lr = lr_at(step, total_steps, tc)
            adam_step(store, state, lr)
            step += 1
            epoch_loss += value * len(idx)
        history.mean_loss.append(epoch_loss / n)
        history.lr.append(lr)
        f1 = float("nan")
        if eval_set is not None and (epoch + 1) % eval_every == 0:
            f1 = _quick_macro_f1(cfg, weights, axis, dictionary, refs, eval_set)
        history.test_macro_f1.append(f1)
        if log_fn is not None:
            log_fn(epoch, history.mean_loss[-1], lr, f1)
    return weights, history


def _quick_macro_f1(cfg, weights, axis, dictionary, refs, eval_set, batch: int = 32) -> float:
    from .evaluation import evaluate  # local import: evaluation depends on model only

    model = Model(cfg, weights, axis, refs, dictionary)
    return evaluate(model, eval_set).macro_f1
