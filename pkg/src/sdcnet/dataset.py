"""Loading image / point-annotation pairs from a dataset directory."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .density import FixedKernel, PointSet, density_from_points, kernel_from_dict, read_points
from .synth import read_pgm

log = logging.getLogger(__name__)


@dataclass
class Sample:
    name: str
    image: np.ndarray  # [H, W] in [0, 1]
    points: PointSet


def _items_without_manifest(root: Path) -> list[dict]:
    items = []
    for img in sorted(root.rglob("*.pgm")):
        ann = img.with_suffix(".json")
        if ann.exists():
            items.append({"image": str(img.relative_to(root)), "points": str(ann.relative_to(root))})
    return items


def read_manifest(root) -> dict | None:
    path = Path(root) / "manifest.json"
    if not path.exists():
        return None
    with open(path) as fh:
        return json.load(fh)


def load_split(root, split: str = "train", limit: int | None = None) -> list[Sample]:
    """Load one split; directories without a manifest are read as PGM + JSON pairs."""
    root = Path(root)
    manifest = read_manifest(root)
    if manifest is None:
        items = _items_without_manifest(root)
        if not items:
            raise FileNotFoundError(f"{root}: no manifest.json and no PGM/JSON pairs")
    else:
        splits = manifest["splits"]
        if split not in splits:
            raise KeyError(f"{root}: manifest has no split {split!r} (has {sorted(splits)})")
        items = splits[split]["items"]
    if limit is not None:
        items = items[:limit]
    samples = []
    for it in items:
        img = read_pgm(root / it["image"])
        pts = read_points(root / it["points"])
        if img.shape != (pts.height, pts.width):
            raise ValueError(f"{it['image']}: image {img.shape} does not match annotation size")
        samples.append(Sample(Path(it["image"]).stem, img, pts))
    return samples


def dataset_kernel(root, default_sigma: float = 15.0):
    manifest = read_manifest(root)
    if manifest and "density_kernel" in manifest:
        return kernel_from_dict(manifest["density_kernel"])
    return FixedKernel(default_sigma)


def densities(samples: list[Sample], kernel) -> list[np.ndarray]:
    return [density_from_points(s.points, kernel) for s in samples]
