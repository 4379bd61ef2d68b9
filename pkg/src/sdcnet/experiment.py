"""Train / evaluate pipelines shared by the CLI and the acceptance suite."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, write_config_echo
from .dataset import dataset_kernel, densities, load_split
from .density import local_counts
from .evaluate import BIN_CELL_PX, EvalResult, checkpoint_predictor, evaluate
from .metrics import range_mae, write_bins_csv, write_summary_csv
from .plotting import plot_bin_curves, plot_loss
from .synth import gen_dataset
from .train.checkpoint import save_checkpoint
from .train.losses import ModelVariant
from .train.loop import TrainConfig, network_for, train

log = logging.getLogger(__name__)

TOY_VARIANTS = ("classification", "regression", "sdcnet")


def write_loss_log(history: list, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "iters", "loss", "lr"])
        for h in history:
            wr.writerow([h["epoch"], h["iters"], repr(h["loss"]), repr(h["lr"])])


def synth_data(cfg: RunConfig, out_dir) -> dict:
    tr, te = cfg.synth_configs()
    return gen_dataset(tr, te, out_dir)


def partition_for_data(cfg: RunConfig, train_dens):
    counts = None
    if cfg.partition.c_max_quantile is not None:
        counts = np.concatenate([local_counts(d, BIN_CELL_PX).values.ravel() for d in train_dens])
    return cfg.partition_for(counts)


def train_run(cfg: RunConfig, data_dir, out_dir, variant: str | None = None, stages: int | None = None,
              train_cfg: TrainConfig | None = None):
    """Train one model on the ``train`` split and write checkpoint, loss log and config echo."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load_split(data_dir, "train")
    kernel = cfg.kernel_spec() or dataset_kernel(data_dir)
    dens = densities(samples, kernel)
    partition = partition_for_data(cfg, dens)
    variant = variant or cfg.variant
    v = ModelVariant.make(variant, cfg.stages if stages is None else stages,
                          c_max=partition.c_max)
    spec = network_for(v, partition, cfg.network.widths, cfg.network.head_width)
    tcfg = train_cfg or cfg.train_config(variant)
    t0 = time.perf_counter()
    res = train([s.image for s in samples], dens, tcfg, spec, v, partition, extra_config={"run": cfg.to_json()})
    log.info("trained %s in %.1f s", v.name, time.perf_counter() - t0)
    save_checkpoint(res.checkpoint, out_dir / "model.ckpt")
    write_loss_log(res.history, out_dir / "loss_log.csv")
    write_config_echo(cfg, out_dir, {"resolved_variant": v.to_json(), "resolved_train": tcfg.to_json()})
    plot_loss(res.history, out_dir / "loss.png", title=v.name)
    return res


def write_eval(result: EvalResult, out_dir, label: str = "", c_max: float | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_summary_csv(result.summary, out_dir / "summary.csv")
    write_bins_csv(result.bins, out_dir / "bins.csv")
    with open(out_dir / "game.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["L", "game"])
        for k, v in result.summary.items():
            if k.startswith("game"):
                wr.writerow([int(k[4:]), repr(v)])
    plot_bin_curves({label or "model": result.bins}, out_dir / "bins.png", c_max=c_max)


@dataclass
class ToyOutcome:
    bins: dict = field(default_factory=dict)  # variant -> list[BinRow]
    summaries: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)
    iters: dict = field(default_factory=dict)
    c_max: float = 10.0

    def range_mae(self, variant: str, lo: float, hi: float) -> float:
        return range_mae(self.bins[variant], lo, hi)

    def max_bin_mae(self, variant: str, lo: float, hi: float) -> float:
        return max(r.mae for r in self.bins[variant] if lo <= r.low <= hi and r.n > 0)

    def criteria(self) -> dict:
        cls_hi = self.range_mae("classification", 15, 20)
        cls_mid = self.range_mae("classification", 3, 8)
        sdc_hi = self.range_mae("sdcnet", 15, 20)
        worst_low = max(self.max_bin_mae(v, 0, 8) for v in self.bins)
        return {
            "cls_mae_15_20": cls_hi, "cls_mae_3_8": cls_mid, "sdc_mae_15_20": sdc_hi,
            "worst_mae_0_8": worst_low,
            "a_saturation": cls_hi >= 3.0 * cls_mid,
            "b_sdc_gain": sdc_hi <= 0.5 * cls_hi,
            "c_closed_set": worst_low <= 2.0,
        }


def run_toy(cfg: RunConfig, out_dir, variants=TOY_VARIANTS) -> ToyOutcome:
    """Closed-to-open toy experiment: synthesize, train each variant, evaluate on the test split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_dir = out_dir / "data"
    synth_data(cfg, data_dir)
    write_config_echo(cfg, out_dir)
    test = load_split(data_dir, "test")
    outcome = ToyOutcome()
    for name in variants:
        t0 = time.perf_counter()
        res = train_run(cfg, data_dir, out_dir / name, variant=name)
        outcome.seconds[name] = time.perf_counter() - t0
        outcome.iters[name] = res.history[-1]["iters"] if res.history else 0
        ckpt = res.checkpoint
        outcome.c_max = float(ckpt.config["partition"]["c_max"])
        ev = evaluate(test, checkpoint_predictor(ckpt))
        write_eval(ev, out_dir / name, label=name, c_max=outcome.c_max)
        outcome.bins[name] = ev.bins
        outcome.summaries[name] = ev.summary
    plot_bin_curves(outcome.bins, out_dir / "bin_mae.png", c_max=outcome.c_max,
                    title="per-bin MAE, 64x64 sub-regions")
    with open(out_dir / "bin_mae.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["bin_low", "bin_high", *outcome.bins])
        first = next(iter(outcome.bins.values()))
        for k, r in enumerate(first):
            wr.writerow([repr(r.low), repr(r.high),
                         *("" if rows[k].mae is None else repr(rows[k].mae) for rows in outcome.bins.values())])
    if set(TOY_VARIANTS) <= set(outcome.bins):
        write_summary_csv({k: float(v) for k, v in outcome.criteria().items()}, out_dir / "criteria.csv")
    return outcome
