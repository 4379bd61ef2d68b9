"""Ground-truth density maps from dot annotations and their local-count integrals."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import CountMap, block_sum


@dataclass
class PointSet:
    width: int
    height: int
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if pts.size and (np.any(pts < 0) or np.any(pts[:, 0] >= self.width) or np.any(pts[:, 1] >= self.height)):
            raise ValueError(f"points must lie inside the {self.width}x{self.height} image")
        self.points = pts

    def __len__(self):
        return len(self.points)

    def to_json(self) -> dict:
        return {"width": self.width, "height": self.height,
                "points": [[float(x), float(y)] for x, y in self.points]}

    @classmethod
    def from_json(cls, d: dict) -> "PointSet":
        return cls(int(d["width"]), int(d["height"]), np.asarray(d["points"], dtype=np.float64).reshape(-1, 2))


def write_points(ps: PointSet, path) -> None:
    with open(path, "w") as fh:
        json.dump(ps.to_json(), fh)


def read_points(path) -> PointSet:
    with open(path) as fh:
        return PointSet.from_json(json.load(fh))


@dataclass(frozen=True)
class FixedKernel:
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class AdaptiveKernel:
    """Geometry-adaptive kernel: sigma = beta * mean distance to the k nearest neighbours."""
    beta: float = 0.3
    k: int = 3
    fallback_sigma: float = 15.0

    def __post_init__(self):
        if self.beta <= 0 or self.k < 1 or self.fallback_sigma <= 0:
            raise ValueError("beta and fallback_sigma must be positive, k >= 1")


def kernel_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("variant")
    if kind == "fixed":
        return FixedKernel(**d)
    if kind == "geometry_adaptive":
        return AdaptiveKernel(**d)
    raise ValueError(f"unknown kernel variant {kind!r}")


def kernel_to_dict(ks) -> dict:
    if isinstance(ks, FixedKernel):
        return {"variant": "fixed", "sigma": ks.sigma}
    return {"variant": "geometry_adaptive", "beta": ks.beta, "k": ks.k, "fallback_sigma": ks.fallback_sigma}


def point_sigmas(points: np.ndarray, ks) -> np.ndarray:
    n = len(points)
    if isinstance(ks, FixedKernel):
        return np.full(n, ks.sigma)
    if n < ks.k + 1:
        return np.full(n, ks.fallback_sigma)
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    nearest = np.sort(dist, axis=1)[:, 1:ks.k + 1]
    sig = ks.beta * nearest.mean(axis=1)
    # coincident neighbours would give a zero-width kernel
    return np.where(sig > 0, sig, ks.fallback_sigma)


def splat_kernel(x: float, y: float, sigma: float, height: int, width: int):
    """Truncated, renormalised Gaussian for one point.

    Support is the square of half-width ceil(3 sigma) around the nearest pixel,
    clipped to the image. Returns (row slice, col slice, weights) with unit mass.
    """
    r = int(math.ceil(3 * sigma))
    cx, cy = int(round(x)), int(round(y))
    x0, x1 = max(cx - r, 0), min(cx + r, width - 1)
    y0, y1 = max(cy - r, 0), min(cy + r, height - 1)
    gx = np.exp(-((np.arange(x0, x1 + 1) - x) ** 2) / (2 * sigma ** 2))
    gy = np.exp(-((np.arange(y0, y1 + 1) - y) ** 2) / (2 * sigma ** 2))
    k = np.outer(gy, gx)
    return slice(y0, y1 + 1), slice(x0, x1 + 1), k / k.sum()


def density_from_points(pts: PointSet, ks) -> np.ndarray:
    dmap = np.zeros((pts.height, pts.width))
    sigmas = point_sigmas(pts.points, ks)
    for (x, y), s in zip(pts.points, sigmas):
        rows, cols, k = splat_kernel(x, y, s, pts.height, pts.width)
        dmap[rows, cols] += k
    return dmap


def local_counts(d: np.ndarray, cell_px: int) -> CountMap:
    # kernels are non-negative; clip the rounding dust from float32 inputs
    return CountMap(np.maximum(block_sum(np.asarray(d, dtype=np.float64), cell_px), 0.0), cell_px)


def point_counts(pts: PointSet, cell_px: int, height: int | None = None, width: int | None = None) -> CountMap:
    """Exact per-cell point counts (evaluation ground truth)."""
    h = height or pts.height
    w = width or pts.width
    if h % cell_px or w % cell_px:
        raise ValueError(f"{h}x{w} is not a multiple of cell size {cell_px}")
    grid = np.zeros((h // cell_px, w // cell_px))
    if len(pts):
        rows = (pts.points[:, 1] // cell_px).astype(int)
        cols = (pts.points[:, 0] // cell_px).astype(int)
        np.add.at(grid, (rows, cols), 1.0)
    return CountMap(grid, cell_px)


def pad_to_stride(g: np.ndarray, stride: int) -> np.ndarray:
    """Zero-pad the last two axes at the bottom/right up to multiples of ``stride``."""
    g = np.asarray(g)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = g.shape[-2:]
    ph = -h % stride
    pw = -w % stride
    if ph == 0 and pw == 0:
        return g.copy()
    pad = [(0, 0)] * (g.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(g, pad)
