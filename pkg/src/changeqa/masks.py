"""Semantic change masks and the pixel statistics that drive QA generation.

A mask is an H x W grid of labels (0 background, 1 intact, 2 damaged,
3 destroyed). Everything downstream - question answers, severity, spatial
patterns - is a function of these grids, so validation is strict here and
all derived quantities are exact (integer counts, rational percentages).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class Label(IntEnum):
    BACKGROUND = 0
    INTACT = 1
    DAMAGED = 2
    DESTROYED = 3


BUILDING_LABELS = (Label.INTACT, Label.DAMAGED, Label.DESTROYED)
DESTRUCTION_LABELS = (Label.DAMAGED, Label.DESTROYED)


@dataclass(frozen=True)
class PixelCoord:
    """(x, y) = (column, row)."""

    x: int
    y: int


@dataclass(frozen=True)
class SemanticMask:
    """Validated label grid. ``labels`` is (height, width), row-major."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask must be a 2-D grid, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"mask labels must be integers, got dtype {arr.dtype}")
        bad = (arr < 0) | (arr > 3)
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise ValueError(
                f"invalid label {int(arr[y, x])} at (x={int(x)}, y={int(y)}); "
                "labels must be in {0,1,2,3}"
            )
        object.__setattr__(self, "labels", np.ascontiguousarray(arr, dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def n_total(self) -> int:
        return self.labels.size

    @classmethod
    def from_rows(cls, rows) -> "SemanticMask":
        return cls(np.asarray(rows, dtype=np.int64))


@dataclass(frozen=True)
class ClassCounts:
    """Per-label pixel counts for one mask. Counts are exact 64-bit ints."""

    n_background: int
    n_intact: int
    n_damaged: int
    n_destroyed: int
    n_total: int

    def __post_init__(self):
        parts = self.n_background + self.n_intact + self.n_damaged + self.n_destroyed
        if parts != self.n_total:
            raise ValueError(f"counts sum {parts} != n_total {self.n_total}")
        if min(self.n_background, self.n_intact, self.n_damaged, self.n_destroyed) < 0:
            raise ValueError("counts must be nonnegative")

    @property
    def n_building(self) -> int:
        return self.n_intact + self.n_damaged + self.n_destroyed

    @property
    def n_destruction(self) -> int:
        return self.n_damaged + self.n_destroyed

    def of(self, label: Label) -> int:
        return (self.n_background, self.n_intact, self.n_damaged, self.n_destroyed)[
            int(label)
        ]


def count_labels(mask: SemanticMask) -> ClassCounts:
    """Tally pixels per label."""
    counts = np.bincount(mask.labels.ravel(), minlength=4)
    return ClassCounts(
        n_background=int(counts[0]),
        n_intact=int(counts[1]),
        n_damaged=int(counts[2]),
        n_destroyed=int(counts[3]),
        n_total=int(mask.n_total),
    )


def destruction_percentage(counts: ClassCounts) -> float:
    """Exact (unfloored) percent of pixels that are damaged or destroyed."""
    if counts.n_total <= 0:
        raise ValueError("n_total must be positive")
    return 100.0 * counts.n_destruction / counts.n_total


def destruction_pixels(mask: SemanticMask) -> list[PixelCoord]:
    """Coordinates of all damaged-or-destroyed cells, row-major order."""
    arr = mask.labels
    ys, xs = np.nonzero((arr == Label.DAMAGED) | (arr == Label.DESTROYED))
    return [PixelCoord(int(x), int(y)) for y, x in zip(ys, xs)]
