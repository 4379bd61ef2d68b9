"""Spatial divide-and-conquer merging of multi-resolution count maps.

DIV_0 = C_0 and, for every stage i >= 1,

    DIV_i = (1 - W_i) * avg(DIV_{i-1}) + W_i * C_i

where ``avg`` splits each parent count equally over its 2x2 children.
The merge is defined on count maps alone so it can be tested without a network.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import CountMap, ShapeError


@dataclass(frozen=True)
class DivisionMask:
    values: np.ndarray
    cell_px: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"DivisionMask needs a 2D grid, got {v.shape}")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("division weights must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class MergeResult:
    div: CountMap
    stages: int

    def total(self) -> float:
        return image_count(self)


def upsample_avg(v: np.ndarray) -> np.ndarray:
    """Array form of avg redistribution over the last two axes."""
    return np.repeat(np.repeat(v, 2, axis=-2), 2, axis=-1) / 4.0


def avg_redistribute(c: CountMap) -> CountMap:
    if c.cell_px % 2:
        raise ShapeError(f"cannot halve a {c.cell_px}px cell")
    return CountMap(upsample_avg(c.values), c.cell_px // 2)


def merge_values(prev: np.ndarray, c_i: np.ndarray, w_i: np.ndarray) -> np.ndarray:
    """Array form of one merge stage (no type or range checks)."""
    return (1.0 - w_i) * upsample_avg(prev) + w_i * c_i


def merge_stage(prev: CountMap, c_i: CountMap, w_i: DivisionMask, stage: int | None = None) -> CountMap:
    label = f"stage {stage}" if stage is not None else "merge stage"
    h, w = prev.shape
    if c_i.shape != (2 * h, 2 * w) or w_i.shape != c_i.shape:
        raise ShapeError(
            f"{label}: expected division count and mask of shape {(2 * h, 2 * w)}, "
            f"got {c_i.shape} and {w_i.shape}")
    if c_i.cell_px * 2 != prev.cell_px:
        raise ShapeError(f"{label}: cell size {c_i.cell_px}px is not half of {prev.cell_px}px")
    return CountMap(merge_values(prev.values, c_i.values, w_i.values), c_i.cell_px)


def multi_stage_merge(c_0: CountMap, counts: list[CountMap], masks: list[DivisionMask]) -> MergeResult:
    if len(counts) != len(masks):
        raise ShapeError(f"{len(counts)} division counts but {len(masks)} masks")
    div = c_0
    for i, (c_i, w_i) in enumerate(zip(counts, masks), start=1):
        div = merge_stage(div, c_i, w_i, stage=i)
    return MergeResult(div, len(counts))


def image_count(m: MergeResult | CountMap) -> float:
    div = m.div if isinstance(m, MergeResult) else m
    return float(div.values.sum())
