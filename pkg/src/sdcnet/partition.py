"""Count-interval partitions: local counts <-> closed-set class labels.

Classes are indexed ``0..M+1``: class 0 is the singleton ``{0}``, class ``j``
(``1 <= j <= M``) is ``(C_{j-1}, C_j]`` with ``C_0 = 0``, and class ``M+1`` is
the open tail ``(C_M, inf)``.  Recovery uses interval midpoints; the tail
recovers to ``C_M``, which is the saturation error S-DC is meant to remove.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import CountMap

_TOL = 1e-9


class PartitionError(ValueError):
    pass


def _n_steps(span: float, step: float, what: str) -> int:
    n = span / step
    k = round(n)
    if k < 1 or abs(n - k) > _TOL * max(1.0, n):
        raise PartitionError(f"{what}: {span} is not a positive integer multiple of step {step}")
    return k


@dataclass(frozen=True)
class IntervalPartition:
    boundaries: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)
    medians: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        if b.ndim != 1 or b.size == 0:
            raise PartitionError("partition needs at least one boundary")
        if b[0] <= 0 or np.any(np.diff(b) <= 0):
            raise PartitionError("boundaries must be positive and strictly increasing")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)
        lower = np.concatenate([[0.0], b[:-1]])
        med = np.concatenate([[0.0], (lower + b) / 2.0, [b[-1]]])
        med.setflags(write=False)
        object.__setattr__(self, "medians", med)

    @property
    def c_max(self) -> float:
        return float(self.boundaries[-1])

    @property
    def num_classes(self) -> int:
        return self.boundaries.size + 2

    def class_of(self, count):
        """Class index of ``count`` (scalar or array)."""
        c = np.asarray(count, dtype=np.float64)
        if np.any(c < 0) or np.any(np.isnan(c)):
            raise PartitionError("counts must be non-negative")
        cls = np.searchsorted(self.boundaries, c, side="left") + 1
        cls = np.where(c == 0, 0, cls)
        return int(cls) if cls.ndim == 0 else cls.astype(np.int64)

    def count_of(self, cls):
        idx = np.asarray(cls)
        if np.any(idx < 0) or np.any(idx >= self.num_classes):
            raise PartitionError(f"class index out of range [0, {self.num_classes})")
        out = self.medians[idx]
        return float(out) if np.ndim(out) == 0 else out

    def interval(self, cls: int) -> tuple[float, float]:
        """(low, high] bounds of a class; class 0 is (0, 0), the tail has high=inf."""
        if cls == 0:
            return 0.0, 0.0
        if cls == self.num_classes - 1:
            return self.c_max, math.inf
        low = 0.0 if cls == 1 else float(self.boundaries[cls - 2])
        return low, float(self.boundaries[cls - 1])

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def build_one_linear(step: float, c_max: float) -> IntervalPartition:
    if step <= 0 or c_max <= 0:
        raise PartitionError("step and c_max must be positive")
    m = _n_steps(c_max, step, "c_max")
    bounds = np.round(step * np.arange(1, m + 1), 10)
    bounds[-1] = c_max
    return IntervalPartition(bounds, "one-linear", {"step": step, "c_max": c_max})


def build_two_linear(fine_step: float, fine_end: float, coarse_step: float,
                     c_max: float) -> IntervalPartition:
    if min(fine_step, fine_end, coarse_step, c_max) <= 0:
        raise PartitionError("all partition parameters must be positive")
    if fine_end >= c_max:
        raise PartitionError(f"fine_end ({fine_end}) must be below c_max ({c_max})")
    n_fine = _n_steps(fine_end, fine_step, "fine_end")
    n_coarse = _n_steps(c_max - fine_end, coarse_step, "c_max - fine_end")
    fine = np.round(fine_step * np.arange(1, n_fine + 1), 10)
    coarse = np.round(fine_end + coarse_step * np.arange(1, n_coarse + 1), 10)
    fine[-1] = fine_end
    coarse[-1] = c_max
    params = {"fine_step": fine_step, "fine_end": fine_end, "coarse_step": coarse_step, "c_max": c_max}
    return IntervalPartition(np.concatenate([fine, coarse]), "two-linear", params)


def partition_from_dict(d: dict) -> IntervalPartition:
    d = dict(d)
    kind = d.pop("kind")
    if kind == "one-linear":
        return build_one_linear(d["step"], d["c_max"])
    if kind == "two-linear":
        return build_two_linear(d["fine_step"], d["fine_end"], d["coarse_step"], d["c_max"])
    raise PartitionError(f"unknown partition kind {kind!r}")


def class_of(p: IntervalPartition, count):
    return p.class_of(count)


def count_of(p: IntervalPartition, cls):
    return p.count_of(cls)


def labels_from_counts(p: IntervalPartition, counts) -> np.ndarray:
    """Elementwise class labels for a CountMap (or a raw array of counts)."""
    values = counts.values if isinstance(counts, CountMap) else np.asarray(counts, dtype=np.float64)
    return np.asarray(p.class_of(values), dtype=np.int64)


def cmax_from_quantile(counts, q: float) -> float:
    """Nearest-rank q-quantile of observed local counts."""
    c = np.sort(np.asarray(counts, dtype=np.float64).ravel())
    if c.size == 0:
        raise PartitionError("cannot take a quantile of an empty list")
    if not 0 < q <= 1:
        raise PartitionError(f"q must lie in (0, 1], got {q}")
    if c[0] < 0:
        raise PartitionError("counts must be non-negative")
    rank = max(1, math.ceil(q * c.size - 1e-9))
    return float(c[rank - 1])


def round_up_to_step(value: float, step: float) -> float:
    return round(math.ceil(value / step - 1e-9) * step, 10)
