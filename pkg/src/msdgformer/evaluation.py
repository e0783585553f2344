"""Classification metrics, inference benchmarking, attention extraction.

Metric conventions: per-class scores are one-vs-rest binary
precision/recall/F1 ("micro F1 per class"); macro scores are unweighted
class means; "macro accuracy" is the mean per-class recall (balanced
accuracy), reported alongside plain accuracy since the two are easy to
conflate.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from .model import EfficientModel, Model, classify
from .spectra import Dataset, N_CLASSES


# ------------------------------------------------------------------ metrics


@dataclass(frozen=True)
class MetricsReport:
    confusion: np.ndarray            # [5, 5], rows true, columns predicted
    per_class_precision: np.ndarray  # one-vs-rest
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray         # a.k.a. micro F1 per class
    accuracy: float                  # plain trace / total
    macro_accuracy: float            # mean per-class recall (balanced)
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("metric,class,value\n")
        for c in range(N_CLASSES):
            out.write(f"precision,{c + 1},{self.per_class_precision[c]:.6f}\n")
            out.write(f"recall,{c + 1},{self.per_class_recall[c]:.6f}\n")
            out.write(f"f1,{c + 1},{self.per_class_f1[c]:.6f}\n")
        out.write(f"accuracy,all,{self.accuracy:.6f}\n")
        out.write(f"macro_accuracy,all,{self.macro_accuracy:.6f}\n")
        out.write(f"macro_precision,all,{self.macro_precision:.6f}\n")
        out.write(f"macro_recall,all,{self.macro_recall:.6f}\n")
        out.write(f"macro_f1,all,{self.macro_f1:.6f}\n")
        return out.getvalue()

    def to_table(self) -> str:
        lines = ["class  precision  recall  f1"]
        for c in range(N_CLASSES):
            lines.append(
                f"{c + 1:>5}  {self.per_class_precision[c]:9.3f}  "
                f"{self.per_class_recall[c]:6.3f}  {self.per_class_f1[c]:.3f}"
            )
        lines.append(
            f"accuracy {self.accuracy:.3f} | macro acc {self.macro_accuracy:.3f} "
            f"prec {self.macro_precision:.3f} rec {self.macro_recall:.3f} "
            f"f1 {self.macro_f1:.3f}"
        )
        return "\n".join(lines)


def metrics_from_confusion(confusion: np.ndarray) -> MetricsReport:
    """All reported metrics as a pure function of the confusion matrix."""
    conf = np.asarray(confusion, dtype=np.int64)
    if conf.shape != (N_CLASSES, N_CLASSES):
        raise ConfigError(f"confusion must be {N_CLASSES}x{N_CLASSES}, got {conf.shape}")
    total = conf.sum()
    if total == 0:
        raise UsageError("empty confusion matrix")
    precision = np.zeros(N_CLASSES)
    recall = np.zeros(N_CLASSES)
    f1 = np.zeros(N_CLASSES)
    for c in range(N_CLASSES):
        tp = conf[c, c]
        fp = conf[:, c].sum() - tp
        fn = conf[c, :].sum() - tp
        precision[c] = tp / (tp + fp) if tp + fp else 0.0
        recall[c] = tp / (tp + fn) if tp + fn else 0.0
        denom = precision[c] + recall[c]
        f1[c] = 2 * precision[c] * recall[c] / denom if denom else 0.0
    return MetricsReport(
        confusion=conf,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        accuracy=float(np.trace(conf) / total),
        macro_accuracy=float(recall.mean()),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
    )


def evaluate(model: Model | EfficientModel, test_set: Dataset,
             batch: int = 32) -> MetricsReport:
    """Classify every spectrum and report the metric suite."""
    if len(test_set) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    spectra = test_set.spectra
    for lo in range(0, len(spectra), batch):
        chunk = spectra[lo : lo + batch]
        x = np.stack([s.intensities for s in chunk])
        peaks = model.predict(x)
        for s, row in zip(chunk, peaks):
            pred = classify(row, model.refs, model.cfg.tau)
            conf[s.label - 1, pred - 1] += 1
    return metrics_from_confusion(conf)


# ------------------------------------------------------------------ benchmark


@dataclass(frozen=True)
class BenchRow:
    model: str
    batch: int
    mean_ms: float
    std_ms: float
    spectra_per_s: float


@dataclass(frozen=True)
class BenchReport:
    rows: tuple[BenchRow, ...]

    def to_csv(self) -> str:
        out = ["model,batch,mean_ms,std_ms,spectra_per_s"]
        for r in self.rows:
            out.append(
                f"{r.model},{r.batch},{r.mean_ms:.4f},{r.std_ms:.4f},{r.spectra_per_s:.2f}"
            )
        return "\n".join(out) + "\n"


def benchmark(
    model: Model | EfficientModel,
    batch_sizes=(1, 4, 8),
    warmup: int = 10,
    runs: int = 100,
    seed: int = 0,
    name: str | None = None,
) -> BenchReport:
    """Wall-clock forward latency per batch size.

    Inputs are generated once per batch size from a seeded stream before
    any timing starts, so generation and I/O never land in the timed
    region. Timing uses the monotonic nanosecond clock; means and spreads
    are over ``runs`` measured forwards after ``warmup`` unmeasured ones.
    """
    label = name if name is not None else model.kind
    rng = np.random.default_rng(seed)
    rows = []
    for batch in batch_sizes:
        x = rng.standard_normal((batch, model.cfg.l)).astype(np.float32)
        for _ in range(warmup):
            model.predict(x)
        samples_ns = np.empty(runs, dtype=np.float64)
        for i in range(runs):
            t0 = time.perf_counter_ns()
            model.predict(x)
            samples_ns[i] = time.perf_counter_ns() - t0
        mean_ms = float(samples_ns.mean() / 1e6)
        std_ms = float(samples_ns.std() / 1e6)
        rows.append(BenchRow(label, batch, mean_ms, std_ms, batch * 1000.0 / mean_ms))
    return BenchReport(tuple(rows))


# ------------------------------------------------------------------ attention


def dump_attention(model: Model, spectrum) -> dict[str, np.ndarray]:
    """Head-averaged attention maps for one spectrum.

    Returns ``selection`` ([N, c], the input's attention over the enriched
    class summaries) plus ``token_i`` ([N, alpha/c + 1]) for each class:
    the learnable token's slice-attention over its sub-dictionary in the
    last dictionary-encoder layer. Needs the full dictionary-guided model.
    """
    if not isinstance(model, Model) or not model.cfg.dictionary_enabled:
        raise ConfigError("attention dumps need the full dictionary-guided model")
    result = model.maps(spectrum)
    maps = {"selection": result.selection_maps.mean(axis=1)}
    for i, tm in enumerate(result.token_maps):
        maps[f"token_{i}"] = tm
    return maps


def attention_csv(matrix: np.ndarray, column_prefix: str) -> str:
    """CSV with a header row and one row per patch position."""
    cols = ",".join(f"{column_prefix}{j + 1}" for j in range(matrix.shape[1]))
    lines = ["patch," + cols]
    for i, row in enumerate(matrix):
        lines.append(f"{i}," + ",".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"
