"""Class-clustered training dictionary and its rank-r denoised form.

The dictionary stacks a few training spectra per positive class as rows,
grouped contiguously by class. Each class block is then replaced by its
best rank-r approximation, so the stacked result is a union of rank-r
subspaces that carries denoised class signatures into the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .numcore import thin_svd
from .spectra import DUST_CLASS, Dataset


@dataclass(frozen=True)
class RawDictionary:
    """alpha spectra as rows, grouped contiguously by class."""

    spectra: np.ndarray          # [alpha, l]
    class_ids: tuple[int, ...]   # one per block, in row order
    per_class: int               # alpha / c

    def __post_init__(self):
        object.__setattr__(self, "spectra", np.asarray(self.spectra))
        alpha = self.spectra.shape[0]
        if alpha != self.per_class * len(self.class_ids):
            raise ConfigError(
                f"{alpha} rows inconsistent with {len(self.class_ids)} blocks "
                f"of {self.per_class}"
            )

    @property
    def alpha(self) -> int:
        return int(self.spectra.shape[0])

    @property
    def c(self) -> int:
        return len(self.class_ids)

    def block(self, i: int) -> np.ndarray:
        lo = i * self.per_class
        return self.spectra[lo : lo + self.per_class]


@dataclass(frozen=True)
class DenoisedDictionary:
    """Same layout as the raw dictionary with every block rank-r approximated."""

    spectra: np.ndarray
    class_ids: tuple[int, ...]
    per_class: int
    rank: int
    singular_values: np.ndarray  # [c, rank], retained per block

    @property
    def alpha(self) -> int:
        return int(self.spectra.shape[0])

    @property
    def c(self) -> int:
        return len(self.class_ids)

    def block(self, i: int) -> np.ndarray:
        lo = i * self.per_class
        return self.spectra[lo : lo + self.per_class]


def build_dictionary(
    train: Dataset,
    per_class: int,
    positive_classes: tuple[int, ...] = (1, 2, 3, 4),
    seed: int = 0,
) -> RawDictionary:
    """Pick ``per_class`` training spectra per positive class, seeded.

    The background/dust class is never admitted: it has no stable peak
    structure for a low-rank block to capture.
    """
    if DUST_CLASS in positive_classes:
        raise ConfigError("the dust class cannot be a dictionary class")
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    rows = []
    for class_id in positive_classes:
        members = train.by_class(class_id)
        if len(members) < per_class:
            raise ConfigError(
                f"class {class_id} has {len(members)} training spectra, "
                f"need {per_class} for the dictionary"
            )
        pick = rng.permutation(len(members))[:per_class]
        rows.extend(members[i].intensities for i in sorted(pick.tolist()))
    return RawDictionary(
        np.stack(rows), tuple(positive_classes), per_class
    )


def denoise(raw: RawDictionary, rank: int) -> DenoisedDictionary:
    """Replace each class block with its best rank-``rank`` approximation.

    Per block, the Frobenius error of the result equals the energy of the
    discarded singular values (Eckart-Young). The SVD runs at 64-bit and
    the result is cast back to the block dtype.
    """
    if rank < 1:
        raise ConfigError(f"rank must be >= 1, got {rank}")
    if rank > min(raw.per_class, raw.spectra.shape[1]):
        raise ConfigError(
            f"rank {rank} exceeds block extent "
            f"min({raw.per_class}, {raw.spectra.shape[1]})"
        )
    blocks = []
    retained = []
    for i, class_id in enumerate(raw.class_ids):
        block = raw.block(i)
        try:
            u, s, v = thin_svd(block.astype(np.float64))
        except NumericError as exc:
            raise NumericError(
                f"SVD failed on dictionary block {i} (class {class_id}): {exc}"
            ) from exc
        approx = (u[:, :rank] * s[:rank]) @ v[:, :rank].T
        blocks.append(approx.astype(raw.spectra.dtype))
        retained.append(s[:rank])
    return DenoisedDictionary(
        np.concatenate(blocks, axis=0),
        raw.class_ids,
        raw.per_class,
        rank,
        np.stack(retained),
    )
