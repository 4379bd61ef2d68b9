"""Dense grid helpers shared by every other module, plus the ``.grid`` file format.

Grids are plain ``numpy.ndarray`` objects (row-major, float64 by default).
A :class:`CountMap` pairs a 2D grid of non-negative sub-region counts with the
side length, in pixels, of the square each cell summarises.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GRID_MAGIC = "GRID"


class GridError(ValueError):
    pass


class ShapeError(GridError):
    pass


class GridFormatError(GridError):
    pass


class MalformedHeaderError(GridFormatError):
    pass


class TruncatedPayloadError(GridFormatError):
    pass


class UnsupportedVersionError(GridFormatError):
    pass


@dataclass(frozen=True)
class CountMap:
    values: np.ndarray
    cell_px: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"CountMap needs a 2D grid, got shape {values.shape}")
        if self.cell_px < 1:
            raise ValueError(f"cell_px must be positive, got {self.cell_px}")
        if np.any(values < 0):
            raise ValueError("CountMap cells must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def total(self) -> float:
        return float(self.values.sum())


def block_sum(g: np.ndarray, k: int) -> np.ndarray:
    """Sum non-overlapping k x k blocks over the last two axes."""
    g = np.asarray(g)
    if k < 1:
        raise ValueError(f"block size must be positive, got {k}")
    if g.ndim < 2:
        raise ShapeError(f"block_sum needs at least 2 dims, got shape {g.shape}")
    h, w = g.shape[-2:]
    if h % k:
        raise ShapeError(f"height {h} (axis {g.ndim - 2}) is not divisible by {k}")
    if w % k:
        raise ShapeError(f"width {w} (axis {g.ndim - 1}) is not divisible by {k}")
    if k == 1:
        return g.copy()
    lead = g.shape[:-2]
    return g.reshape(*lead, h // k, k, w // k, k).sum(axis=(-3, -1))


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def write_grid(g: np.ndarray, path) -> None:
    g = np.asarray(g, dtype="<f8")
    if g.ndim == 0 or min(g.shape) < 1:
        raise ShapeError(f"grid dimensions must all be >= 1, got {g.shape}")
    header = f"{GRID_MAGIC} {g.ndim} " + " ".join(str(d) for d in g.shape) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(g).tobytes(order="C"))


def read_grid(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise MalformedHeaderError(f"{path}: missing header line")
    try:
        tokens = raw[:nl].decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise MalformedHeaderError(f"{path}: header is not ASCII") from exc
    if not tokens:
        raise MalformedHeaderError(f"{path}: empty header")
    if tokens[0] != GRID_MAGIC:
        if re.fullmatch(r"GRID\S+", tokens[0]):
            raise UnsupportedVersionError(f"{path}: unsupported grid format {tokens[0]!r}")
        raise MalformedHeaderError(f"{path}: bad magic {tokens[0]!r}")
    try:
        dims = [int(t) for t in tokens[1:]]
    except ValueError as exc:
        raise MalformedHeaderError(f"{path}: non-integer header field") from exc
    if not dims or dims[0] < 1 or len(dims) != dims[0] + 1:
        raise MalformedHeaderError(f"{path}: header dimension count does not match")
    shape = tuple(dims[1:])
    if min(shape) < 1:
        raise MalformedHeaderError(f"{path}: dimension sizes must be >= 1, got {shape}")
    payload = raw[nl + 1:]
    expected = 8 * int(np.prod(shape))
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    if len(payload) > expected:
        raise MalformedHeaderError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
