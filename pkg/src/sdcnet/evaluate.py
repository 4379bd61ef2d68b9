"""Dataset-level evaluation of a trained model (or of the ground-truth oracle)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .density import point_counts
from .grid import CountMap, block_sum
from .metrics import BinRow, EvalRecord, game, mae_rmse, per_bin_errors
from .net.model import OUTPUT_STRIDE
from .plotting import plot_masks
from .sdc import avg_redistribute
from .synth import write_pgm
from .train.loop import Prediction, predict

log = logging.getLogger(__name__)

BIN_CELL_PX = 64
DEFAULT_BIN_EDGES = tuple(range(0, 22))  # unit bins [k, k+1) for k = 0..20


def padded_size(h: int, w: int) -> tuple[int, int]:
    return h + (-h % OUTPUT_STRIDE), w + (-w % OUTPUT_STRIDE)


def checkpoint_predictor(ckpt, partition=None):
    return lambda sample: predict(sample.image, ckpt, partition)


def oracle_predictor(cell_px: int = 1):
    """Predictions that reproduce the annotated counts exactly (pixel cells by default)."""

    def run(sample) -> Prediction:
        h, w = padded_size(*sample.image.shape)
        div = point_counts(sample.points, cell_px, h, w)
        return Prediction(div, div.total(), [div], [])

    return run


def refine_to(m: CountMap, cell_px: int) -> CountMap:
    """Spread a coarser map down to ``cell_px`` by repeated avg redistribution."""
    if m.cell_px % cell_px:
        raise ValueError(f"cannot refine {m.cell_px}-px cells to {cell_px} px")
    while m.cell_px > cell_px:
        m = avg_redistribute(m)
    return m


def game_cell(h: int, w: int, cell_px: int, levels: int) -> int:
    """Largest cell size <= cell_px whose grid splits into 2^L x 2^L regions."""
    n = 2 ** levels
    c = cell_px
    while c > 1 and ((h // c) % n or (w // c) % n):
        c //= 2
    if (h % c) or (w % c) or (h // c) % n or (w // c) % n:
        raise ValueError(f"a {h}x{w} image cannot be split into {n}x{n} regions")
    return c


@dataclass
class EvalResult:
    summary: dict
    bins: list[BinRow]
    records: list[EvalRecord] = field(default_factory=list)


def evaluate(samples, predictor, game_levels: int = 0, bin_edges=DEFAULT_BIN_EDGES,
             mask_dir=None, mask_figures: int = 4) -> EvalResult:
    """Image-count MAE / RMSE, GAME(0..L) and per-bin errors on 64-px sub-regions."""
    if not samples:
        raise ValueError("no samples to evaluate")
    records = []
    games = {L: [] for L in range(game_levels + 1)}
    if mask_dir is not None:
        Path(mask_dir).mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(samples):
        pred = predictor(s)
        h, w = padded_size(*s.image.shape)
        div = pred.div
        pred64 = CountMap(block_sum(div.values, BIN_CELL_PX // div.cell_px), BIN_CELL_PX)
        gt64 = point_counts(s.points, BIN_CELL_PX, h, w)
        records.append(EvalRecord(pred.count, float(len(s.points)), pred64, gt64))
        for L in games:
            c = game_cell(h, w, div.cell_px, L)
            games[L].append(game(refine_to(div, c), point_counts(s.points, c, h, w), L))
        if mask_dir is not None:
            for i, m in enumerate(pred.masks, start=1):
                up = np.kron(m.values, np.ones((m.cell_px, m.cell_px)))
                write_pgm(up, Path(mask_dir) / f"{s.name}_w{i}.pgm")
            if pred.masks and k < mask_figures:
                plot_masks(s.image, pred.masks, Path(mask_dir) / f"{s.name}_masks.png", title=s.name)
    mae, rmse = mae_rmse(records)
    summary = {"n_images": len(records), "mae": mae, "rmse": rmse}
    for L, vals in games.items():
        summary[f"game{L}"] = float(np.mean(vals))
    bins = per_bin_errors(records, bin_edges)
    log.info("evaluated %d images: mae %.4f rmse %.4f", len(records), mae, rmse)
    return EvalResult(summary, bins, records)
