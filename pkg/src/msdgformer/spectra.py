"""Synthetic single-shot spectra and dataset plumbing.

The real instrument data is access-restricted, so this module generates a
surrogate: five classes of single-shot spectra over a shared m/z axis --
two bacterial-like profiles (many peaks), two protein-like profiles (few
peaks), and one peakless background class standing in for dust. Each shot
is a sum of Gaussian peaks with per-shot amplitude jitter, a decaying
baseline, random clutter peaks, and additive Gaussian noise.

Everything is deterministic for a fixed seed, and the on-disk format
round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError

MZ_MIN_DA = 500.0
MZ_MAX_DA = 10000.0

BACTERIAL = "bacterial-multipeak"
PROTEIN = "protein-fewpeak"
PEAKLESS = "peakless"

N_CLASSES = 5
DUST_CLASS = 5


@dataclass(frozen=True)
class MzAxis:
    """Shared mass-to-charge axis, strictly increasing, in Daltons."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size < 2:
            raise ConfigError("m/z axis must be a vector of at least 2 points")
        if not np.all(np.diff(v) > 0):
            raise ConfigError("m/z axis must be strictly increasing")
        if v[0] < MZ_MIN_DA - 1e-3 or v[-1] > MZ_MAX_DA + 1e-3:
            raise ConfigError(
                f"m/z axis must lie within [{MZ_MIN_DA}, {MZ_MAX_DA}] Da"
            )

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def mz_min(self) -> float:
        return float(self.values[0])

    @property
    def mz_max(self) -> float:
        return float(self.values[-1])


def linear_axis(l: int, mz_min: float = MZ_MIN_DA, mz_max: float = MZ_MAX_DA) -> MzAxis:
    return MzAxis(np.linspace(mz_min, mz_max, l, dtype=np.float32))


@dataclass(frozen=True)
class ClassTemplate:
    """Noiseless description of one class: peak positions, widths, heights."""

    class_id: int
    kind: str
    centers: np.ndarray  # Da
    widths: np.ndarray   # Gaussian sigma, Da
    amplitudes: np.ndarray

    def __post_init__(self):
        for name in ("centers", "widths", "amplitudes"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = len(self.centers)
        if len(self.widths) != n or len(self.amplitudes) != n:
            raise ConfigError("centers, widths, amplitudes must have equal length")
        if self.kind == PEAKLESS and n != 0:
            raise ConfigError("peakless template must have no peaks")
        if self.kind == BACTERIAL and n < 6:
            raise ConfigError("bacterial template needs at least 6 peaks")
        if self.kind == PROTEIN and not 1 <= n <= 3:
            raise ConfigError("protein template needs 1 to 3 peaks")
        if n and np.any(self.amplitudes <= 0):
            raise ConfigError("peak amplitudes must be positive")

    @property
    def n_peaks(self) -> int:
        return len(self.centers)


@dataclass(frozen=True)
class NoiseParams:
    """Distortions applied per shot; the baseline is part of every shot.

    Defaults are tuned so that (a) a stack of same-class shots keeps >= 90%
    of its energy in the top two singular directions, and (b) a naive
    nearest-mean classifier on raw single shots lands near 0.6 macro F1:
    noisy enough to be hard, structured enough to be learnable.
    """

    sigma: float = 0.5
    baseline_amplitude: float = 5.0
    baseline_decay: float = 2500.0  # Da
    amplitude_jitter: float = 0.6   # peak scale drawn from [1-j, 1+j]
    peak_dropout: float = 0.35     # chance a template peak is missing per shot
    gain_jitter: float = 0.15      # whole-shot scale drawn from [1-g, 1+g]
    clutter_count: int = 10        # spurious peaks per shot
    clutter_amplitude: float = 1.1  # max clutter height
    clutter_width: float = 6.0      # clutter sigma, Da

    @classmethod
    def noiseless(cls, base: "NoiseParams | None" = None) -> "NoiseParams":
        """Same baseline, but no stochastic distortion at all."""
        base = base or cls()
        return replace(
            base, sigma=0.0, amplitude_jitter=0.0, peak_dropout=0.0,
            gain_jitter=0.0, clutter_count=0,
        )


@dataclass(frozen=True)
class Spectrum:
    """One single-shot intensity vector plus its class label."""

    intensities: np.ndarray
    label: int

    def __post_init__(self):
        v = np.asarray(self.intensities, dtype=np.float32)
        object.__setattr__(self, "intensities", v)
        if not np.all(np.isfinite(v)):
            raise ConfigError("spectrum intensities must be finite")
        if not 1 <= int(self.label) <= N_CLASSES:
            raise ConfigError(f"class label {self.label} outside 1..{N_CLASSES}")


@dataclass
class Dataset:
    axis: MzAxis
    spectra: list[Spectrum] = field(default_factory=list)

    def __post_init__(self):
        l = len(self.axis)
        for s in self.spectra:
            if s.intensities.size != l:
                raise ConfigError(
                    f"spectrum length {s.intensities.size} != axis length {l}"
                )

    def __len__(self) -> int:
        return len(self.spectra)

    def class_counts(self) -> dict[int, int]:
        counts = {c: 0 for c in range(1, N_CLASSES + 1)}
        for s in self.spectra:
            counts[s.label] += 1
        return counts

    def by_class(self, class_id: int) -> list[Spectrum]:
        return [s for s in self.spectra if s.label == class_id]


@dataclass(frozen=True)
class PeakVector:
    """Per-patch binary ground truth for one class."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if not np.all((b == 0) | (b == 1)):
            raise ConfigError("peak vector entries must be 0 or 1")
        object.__setattr__(self, "bits", b)

    def __len__(self) -> int:
        return int(self.bits.size)


# ----------------------------------------------------------------- templates


def default_templates(
    axis: MzAxis,
    seed: int,
    min_separation: float = 300.0,
    margin: float = 200.0,
) -> list[ClassTemplate]:
    """Five deterministic class templates with well-separated peak sets.

    Classes 1-2 are bacterial-like (8 peaks each), 3-4 protein-like
    (2 and 3 peaks), 5 peakless. Peak centers of different classes are
    kept at least ``min_separation`` Da apart so the per-class patch
    signatures stay disjoint.
    """
    rng = np.random.default_rng(seed)
    peaks_per_class = [8, 8, 2, 3, 0]
    total = sum(peaks_per_class)
    lo, hi = axis.mz_min + margin, axis.mz_max - margin
    if hi <= lo or (hi - lo) / total < min_separation:
        raise ConfigError(
            f"axis span {axis.mz_min}..{axis.mz_max} Da too short to place "
            f"{total} peaks {min_separation} Da apart"
        )
    slot = (hi - lo) / total
    centers = lo + (np.arange(total) + 0.5) * slot
    centers = centers + rng.uniform(-0.05, 0.05, size=total) * slot
    order = rng.permutation(total)

    templates = []
    start = 0
    for class_id, n_peaks in enumerate(peaks_per_class, start=1):
        if n_peaks == 0:
            templates.append(
                ClassTemplate(class_id, PEAKLESS, np.array([]), np.array([]), np.array([]))
            )
            continue
        kind = BACTERIAL if n_peaks >= 6 else PROTEIN
        idx = np.sort(order[start : start + n_peaks])
        start += n_peaks
        widths = rng.uniform(3.0, 8.0, size=n_peaks)
        if kind == BACTERIAL:
            amps = rng.uniform(0.5, 1.0, size=n_peaks)
        else:
            amps = rng.uniform(0.8, 1.3, size=n_peaks)
        templates.append(ClassTemplate(class_id, kind, centers[idx], widths, amps))
    return templates


# ----------------------------------------------------------------- synthesis


def baseline_curve(axis: MzAxis, noise: NoiseParams) -> np.ndarray:
    """Deterministic decaying baseline shared by every shot."""
    mz = axis.values.astype(np.float64)
    return noise.baseline_amplitude * np.exp(-(mz - mz[0]) / noise.baseline_decay)


def clean_spectrum(template: ClassTemplate, axis: MzAxis, noise: NoiseParams) -> np.ndarray:
    """Noiseless shot: baseline plus unjittered template peaks, float64."""
    mz = axis.values.astype(np.float64)
    out = baseline_curve(axis, noise)
    for mu, sig, amp in zip(template.centers, template.widths, template.amplitudes):
        out += amp * np.exp(-0.5 * ((mz - mu) / sig) ** 2)
    return out


def synthesize_spectrum(
    template: ClassTemplate,
    axis: MzAxis,
    noise: NoiseParams,
    seed,
) -> Spectrum:
    """One single shot of the given class.

    ``seed`` is an integer or a ``numpy.random.Generator``; passing a
    generator lets callers draw many shots from one stream.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mz = axis.values.astype(np.float64)
    out = baseline_curve(axis, noise)
    for mu, sig, amp in zip(template.centers, template.widths, template.amplitudes):
        if noise.peak_dropout > 0 and rng.random() < noise.peak_dropout:
            continue
        scale = 1.0
        if noise.amplitude_jitter > 0:
            scale = rng.uniform(1.0 - noise.amplitude_jitter, 1.0 + noise.amplitude_jitter)
        out += amp * scale * np.exp(-0.5 * ((mz - mu) / sig) ** 2)
    for _ in range(noise.clutter_count):
        mu = rng.uniform(mz[0], mz[-1])
        amp = rng.uniform(0.15, noise.clutter_amplitude)
        sig = noise.clutter_width * rng.uniform(0.6, 1.6)
        out += amp * np.exp(-0.5 * ((mz - mu) / sig) ** 2)
    if noise.gain_jitter > 0:
        out *= rng.uniform(1.0 - noise.gain_jitter, 1.0 + noise.gain_jitter)
    if noise.sigma > 0:
        out += rng.normal(0.0, noise.sigma, size=mz.size)
    return Spectrum(out.astype(np.float32), template.class_id)


def generate_dataset(
    axis: MzAxis,
    templates: Sequence[ClassTemplate],
    counts: dict[int, int],
    noise: NoiseParams,
    seed: int,
) -> Dataset:
    """Seeded dataset: ``counts[class_id]`` shots per class, shuffled."""
    for class_id, n in counts.items():
        if n < 1:
            raise ConfigError(f"count for class {class_id} must be >= 1, got {n}")
    by_id = {t.class_id: t for t in templates}
    rng = np.random.default_rng(seed)
    spectra: list[Spectrum] = []
    for class_id in sorted(counts):
        template = by_id[class_id]
        for _ in range(counts[class_id]):
            spectra.append(synthesize_spectrum(template, axis, noise, rng))
    perm = rng.permutation(len(spectra))
    return Dataset(axis, [spectra[i] for i in perm])


# ----------------------------------------------------------------- split


def split_dataset(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Per-class stratified split into disjoint train/test subsets."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    labels = np.array([s.label for s in ds.spectra])
    for class_id in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == class_id)
        if idx.size < 2:
            raise ConfigError(
                f"class {class_id} has {idx.size} sample(s); need at least 2 to split"
            )
        idx = idx[rng.permutation(idx.size)]
        n_train = int(round(train_fraction * idx.size))
        n_train = min(max(n_train, 1), idx.size - 1)
        train_idx.extend(idx[:n_train].tolist())
        test_idx.extend(idx[n_train:].tolist())
    train_idx.sort()
    test_idx.sort()
    train = Dataset(ds.axis, [ds.spectra[i] for i in train_idx])
    test = Dataset(ds.axis, [ds.spectra[i] for i in test_idx])
    return train, test


# ----------------------------------------------------------------- ground truth


def patch_count(l: int, rho: int, gamma: int) -> int:
    if l < rho:
        raise ConfigError(f"signal length {l} shorter than patch width {rho}")
    if (l - rho) % gamma != 0:
        raise ConfigError(f"(l - rho) = {l - rho} not divisible by stride {gamma}")
    return (l - rho) // gamma + 1


def peak_ground_truth(
    template: ClassTemplate, axis: MzAxis, rho: int, gamma: int
) -> PeakVector:
    """Bit j is 1 iff some peak center falls in patch j's half-open window.

    Patch j covers axis indices ``[gamma*j, gamma*j + rho)``; with
    overlapping patches a center can light up several bits.
    """
    n = patch_count(len(axis), rho, gamma)
    bits = np.zeros(n, dtype=np.uint8)
    for mu in template.centers:
        if mu < axis.mz_min or mu > axis.mz_max:
            raise ConfigError(f"peak center {mu} Da outside the axis")
        k = int(np.searchsorted(axis.values, np.float32(mu), side="right") - 1)
        j_lo = max(0, (k - rho) // gamma + 1)
        j_hi = min(n - 1, k // gamma)
        if j_lo <= j_hi:
            bits[j_lo : j_hi + 1] = 1
    return PeakVector(bits)


def estimate_peak_bits(ds: Dataset, rho: int, gamma: int, z: float = 8.0) -> np.ndarray:
    """Per-class peak bits recovered from class-averaged training spectra.

    Averaging a class's shots cancels per-shot noise and clutter, leaving
    the stable class peaks on top of the smooth baseline. A running-median
    baseline is subtracted and runs of points more than ``z`` robust sigmas
    above it are marked as peaks; each run lights the patch windows that
    contain its apex. Classes with no stable peaks (dust) come out all
    zero. Returns a ``[N_CLASSES, n_patches]`` 0/1 array.
    """
    n = patch_count(len(ds.axis), rho, gamma)
    l = len(ds.axis)
    win = max(31, l // 40) | 1  # odd median window, wide enough to span peaks
    bits = np.zeros((N_CLASSES, n), dtype=np.uint8)
    for class_id in range(1, N_CLASSES + 1):
        members = ds.by_class(class_id)
        if not members:
            continue
        mean = np.mean([s.intensities for s in members], axis=0).astype(np.float64)
        baseline = _running_median(mean, win)
        resid = mean - baseline
        sigma = 1.4826 * np.median(np.abs(resid - np.median(resid)))
        mask = resid > z * max(sigma, 1e-12)
        for lo, hi in _runs(mask):
            k = lo + int(np.argmax(resid[lo:hi]))
            j_lo = max(0, (k - rho) // gamma + 1)
            j_hi = min(n - 1, k // gamma)
            if j_lo <= j_hi:
                bits[class_id - 1, j_lo : j_hi + 1] = 1
    return bits


def _running_median(x: np.ndarray, win: int) -> np.ndarray:
    half = win // 2
    padded = np.pad(x, half, mode="edge")
    view = np.lib.stride_tricks.sliding_window_view(padded, win)
    return np.median(view, axis=-1)


def _runs(mask: np.ndarray):
    edges = np.flatnonzero(np.diff(np.concatenate(([0], mask.view(np.int8), [0]))))
    return zip(edges[::2], edges[1::2])


# ----------------------------------------------------------------- file I/O

_MAGIC = b"MSPC"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")  # magic, version, n, l


def save_dataset(path, ds: Dataset) -> None:
    """Write the dataset in the little-endian MSPC container."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, len(ds.spectra), len(ds.axis)))
        fh.write(ds.axis.values.astype("<f4").tobytes())
        for s in ds.spectra:
            fh.write(struct.pack("<B", s.label))
            fh.write(s.intensities.astype("<f4").tobytes())


def load_dataset(path) -> Dataset:
    """Read an MSPC container; malformed input raises with the byte offset."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header", offset=len(blob))
    magic, version, n, l = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}", offset=0)
    if version != _VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)
    off = _HEADER.size
    axis_bytes = 4 * l
    if len(blob) < off + axis_bytes:
        raise FormatError("truncated m/z axis", offset=len(blob))
    axis = MzAxis(np.frombuffer(blob, dtype="<f4", count=l, offset=off).copy())
    off += axis_bytes
    record = 1 + axis_bytes
    if len(blob) != off + n * record:
        raise FormatError(
            f"expected {off + n * record} bytes for {n} records, file has {len(blob)}",
            offset=min(len(blob), off + n * record),
        )
    spectra = []
    for _ in range(n):
        label = blob[off]
        off += 1
        vals = np.frombuffer(blob, dtype="<f4", count=l, offset=off).copy()
        off += axis_bytes
        spectra.append(Spectrum(vals, label))
    return Dataset(axis, spectra)
