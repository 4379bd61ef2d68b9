"""Counting error metrics: MAE / RMSE, GAME(L), and per-count-bin error tables.

The column the counting literature labels "MSE" is a root-mean-square error;
it is computed here as RMSE.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .grid import CountMap, ShapeError


@dataclass
class EvalRecord:
    pred: float
    gt: float
    pred_map: CountMap | None = None
    gt_map: CountMap | None = None

    def __post_init__(self):
        if self.gt < 0:
            raise ValueError("GT counts must be non-negative")


def mae_rmse(records) -> tuple[float, float]:
    if not records:
        raise ValueError("no records to evaluate")
    err = np.array([r.pred - r.gt for r in records], dtype=np.float64)
    return float(np.abs(err).mean()), float(np.sqrt((err ** 2).mean()))


def game(pred, gt, L: int) -> float:
    """Sum over the 4^L regions of |pred_region - gt_region| for one image."""
    p = pred.values if isinstance(pred, CountMap) else np.asarray(pred, dtype=np.float64)
    g = gt.values if isinstance(gt, CountMap) else np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and GT {g.shape} grids differ")
    n = 2 ** L
    h, w = p.shape
    if h % n or w % n:
        raise ShapeError(f"a {h}x{w} grid cannot be split into {n}x{n} regions")
    # each axis splits into 2^L equal strips, so regions need not be square
    bh, bw = h // n, w // n
    pr = p.reshape(n, bh, n, bw).sum(axis=(1, 3))
    gr = g.reshape(n, bh, n, bw).sum(axis=(1, 3))
    return float(np.abs(pr - gr).sum())


def mean_game(pairs, L: int) -> float:
    """GAME(L) averaged over images; ``pairs`` yields (pred_map, gt_map)."""
    vals = [game(p, g, L) for p, g in pairs]
    if not vals:
        raise ValueError("no images to evaluate")
    return float(np.mean(vals))


@dataclass
class BinRow:
    low: float
    high: float
    n: int
    mae: float | None
    rmae: float | None
    abs_err_sum: float = 0.0


def per_bin_errors(records, bin_edges) -> list[BinRow]:
    """Bin sub-regions by GT count into [edge_k, edge_k+1) and report MAE / rMAE per bin.

    rMAE is the bin MAE divided by the bin's mean GT count; it is left empty
    when that mean is zero.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be strictly increasing with at least two entries")
    preds, gts = [], []
    for r in records:
        if r.pred_map is None or r.gt_map is None:
            raise ValueError("per-bin errors need sub-region maps on every record")
        if r.pred_map.shape != r.gt_map.shape or r.pred_map.cell_px != r.gt_map.cell_px:
            raise ShapeError("prediction and GT sub-region maps must share a grid")
        preds.append(r.pred_map.values.ravel())
        gts.append(r.gt_map.values.ravel())
    pred = np.concatenate(preds) if preds else np.zeros(0)
    gt = np.concatenate(gts) if gts else np.zeros(0)
    err = np.abs(pred - gt)
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (gt >= lo) & (gt < hi)
        n = int(sel.sum())
        if n == 0:
            rows.append(BinRow(float(lo), float(hi), 0, None, None))
            continue
        mae = float(err[sel].mean())
        mean_gt = float(gt[sel].mean())
        rows.append(BinRow(float(lo), float(hi), n, mae, mae / mean_gt if mean_gt > 0 else None,
                           float(err[sel].sum())))
    return rows


def range_mae(rows: list[BinRow], lo: float, hi: float) -> float:
    """Mean of the per-bin MAEs over non-empty bins whose low edge lies in [lo, hi]."""
    vals = [r.mae for r in rows if lo <= r.low <= hi and r.n > 0]
    return float(np.mean(vals)) if vals else math.nan


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_bins_csv(rows: list[BinRow], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["bin_low", "bin_high", "n", "mae", "rmae"])
        for r in rows:
            wr.writerow([_fmt(r.low), _fmt(r.high), r.n, _fmt(r.mae), _fmt(r.rmae)])


def read_bins_csv(path) -> list[BinRow]:
    rows = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            rows.append(BinRow(float(d["bin_low"]), float(d["bin_high"]), int(d["n"]),
                               float(d["mae"]) if d["mae"] else None,
                               float(d["rmae"]) if d["rmae"] else None))
    return rows


def write_summary_csv(metrics: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["metric", "value"])
        for k, v in metrics.items():
            wr.writerow([k, _fmt(v)])


def read_summary_csv(path) -> dict:
    with open(path, newline="") as fh:
        return {d["metric"]: float(d["value"]) for d in csv.DictReader(fh)}
