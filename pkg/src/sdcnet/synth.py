"""Synthetic cell-counting images with exact per-sub-region counts.

Each square sub-region independently draws a target count, places that many
cell centres far enough from its border that no cell straddles two
sub-regions, and renders every cell as an additive Gaussian blob.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .density import PointSet, write_points

FORMAT_VERSION = 1
BLOB_PEAK = (0.6, 1.0)
NOISE_SIGMA = 0.02


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 256
    subregion_px: int = 64
    n_images: int = 500
    count_range: tuple[int, int] = (0, 10)
    cell_radius_px: float = 6.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "count_range", tuple(int(c) for c in self.count_range))
        lo, hi = self.count_range
        if self.image_size % self.subregion_px:
            raise SynthError("image_size must be a multiple of subregion_px")
        if not 0 <= lo <= hi:
            raise SynthError(f"bad count_range {self.count_range}")
        if self.cell_radius_px <= 0:
            raise SynthError("cell_radius_px must be positive")
        if self.n_images < 0:
            raise SynthError("n_images must be >= 0")

    def to_json(self) -> dict:
        d = asdict(self)
        d["count_range"] = list(self.count_range)
        return d

    @property
    def density_sigma(self) -> float:
        """GT kernel width whose 3-sigma support never leaves a cell's sub-region."""
        return self.cell_radius_px / 3.0


def _placement_interval(cfg: SynthConfig) -> tuple[float, float]:
    # pixel centres sit at integer coordinates; keep round(x) +- r inside the sub-region
    r = math.ceil(cfg.cell_radius_px)
    return float(r), float(cfg.subregion_px - 1 - r)


def check_feasible(cfg: SynthConfig, count: int) -> None:
    lo, hi = _placement_interval(cfg)
    inner = max(hi - lo, 0.0)
    if count and (inner <= 0 or count * math.pi * cfg.cell_radius_px ** 2 > inner ** 2):
        raise SynthError(
            f"cannot place {count} cells of radius {cfg.cell_radius_px} in a "
            f"{cfg.subregion_px}px sub-region")


def gen_image(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, PointSet]:
    """Return (image [1, S, S] in [0, 1], points)."""
    check_feasible(cfg, cfg.count_range[1])
    size, sub = cfg.image_size, cfg.subregion_px
    lo, hi = _placement_interval(cfg)
    n_sub = size // sub
    points = []
    for gy in range(n_sub):
        for gx in range(n_sub):
            n = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
            xy = rng.uniform(lo, hi, size=(n, 2))
            xy[:, 0] += gx * sub
            xy[:, 1] += gy * sub
            points.append(xy)
    pts = np.concatenate(points) if points else np.zeros((0, 2))
    peaks = rng.uniform(*BLOB_PEAK, size=len(pts))

    img = np.zeros((size, size))
    sigma = cfg.cell_radius_px / 2.0
    r = int(math.ceil(4 * sigma))
    for (x, y), peak in zip(pts, peaks):
        cx, cy = int(round(x)), int(round(y))
        x0, x1 = max(cx - r, 0), min(cx + r, size - 1)
        y0, y1 = max(cy - r, 0), min(cy + r, size - 1)
        gx_ = np.exp(-((np.arange(x0, x1 + 1) - x) ** 2) / (2 * sigma ** 2))
        gy_ = np.exp(-((np.arange(y0, y1 + 1) - y) ** 2) / (2 * sigma ** 2))
        img[y0:y1 + 1, x0:x1 + 1] += peak * np.outer(gy_, gx_)
    img = np.clip(img, 0.0, 1.0)
    img = np.clip(img + rng.normal(0.0, NOISE_SIGMA, size=img.shape), 0.0, 1.0)
    return img[None], PointSet(size, size, pts)


def image_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def write_pgm(img: np.ndarray, path) -> None:
    """Write a 2D array in [0, 1] as binary PGM (P5, maxval 255)."""
    img = np.asarray(img)
    if img.ndim == 3:
        img = img[0]
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a float64 array scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = np.uint8 if maxval < 256 else ">u2"
    n = w * h * (1 if maxval < 256 else 2)
    if len(raw) - pos < n:
        raise ValueError(f"{path}: truncated PGM payload")
    data = np.frombuffer(raw[pos:pos + n], dtype=dtype).reshape(h, w)
    return data.astype(np.float64) / maxval


def _write_split(cfg: SynthConfig, out_dir: Path, split: str) -> list[dict]:
    (out_dir / split).mkdir(parents=True, exist_ok=True)
    items = []
    for i in range(cfg.n_images):
        img, pts = gen_image(cfg, image_rng(cfg.seed, i))
        stem = f"{split}/img_{i:04d}"
        write_pgm(img, out_dir / f"{stem}.pgm")
        write_points(pts, out_dir / f"{stem}.json")
        items.append({"image": f"{stem}.pgm", "points": f"{stem}.json"})
    return items


def gen_dataset(cfg_train: SynthConfig, cfg_test: SynthConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "generator": {
            "blob_sigma": "cell_radius_px / 2",
            "blob_peak_range": list(BLOB_PEAK),
            "noise_sigma": NOISE_SIGMA,
        },
        "density_kernel": {"variant": "fixed", "sigma": cfg_train.density_sigma},
        "splits": {
            "train": {"config": cfg_train.to_json(), "items": _write_split(cfg_train, out_dir, "train")},
            "test": {"config": cfg_test.to_json(), "items": _write_split(cfg_test, out_dir, "test")},
        },
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest
