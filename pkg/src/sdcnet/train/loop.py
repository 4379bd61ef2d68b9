"""SGD training with a plateau learning-rate schedule, and inference."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..density import pad_to_stride
from ..grid import CountMap
from ..net.model import OUTPUT_STRIDE, NetworkSpec, backward, forward, init_params, recover_count_arrays
from ..sdc import DivisionMask, MergeResult, multi_stage_merge
from .checkpoint import Checkpoint
from .losses import ModelVariant, compute_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 0.001
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    batch_size: int = 1
    max_epochs: int = 100
    max_iters: int | None = None
    momentum: float = 0.0
    seed: int = 0
    crop_px: int | None = 128
    hflip: bool = True
    dtype: str = "float32"
    init_std: float = 0.01
    encoder_init: str = "he"

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.crop_px is not None and self.crop_px % OUTPUT_STRIDE:
            raise ValueError(f"crop_px must be a multiple of {OUTPUT_STRIDE}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.encoder_init not in ("he", "gaussian", "he_all"):
            raise ValueError(f"unknown encoder_init {self.encoder_init!r}")

    def to_json(self) -> dict:
        return asdict(self)


class PlateauSchedule:
    """Multiply the rate by ``factor`` after ``patience`` epochs without a new best loss."""

    def __init__(self, lr0: float, factor: float = 0.1, patience: int = 10):
        self.lr = lr0
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, epoch_loss: float) -> float:
        if epoch_loss < self.best:
            self.best = epoch_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


class SGD:
    def __init__(self, params: dict, momentum: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()} if momentum else None

    def step(self, grads: dict, lr: float) -> None:
        for name, p in self.params.items():
            g = grads[name].astype(p.dtype, copy=False)
            if self.velocity is not None:
                v = self.velocity[name]
                v *= self.momentum
                v += g
                g = v
            p -= lr * g


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list = field(default_factory=list)


def network_for(variant: ModelVariant, partition, widths=(16, 32, 64, 64, 64), head_width: int = 64) -> NetworkSpec:
    k = partition.num_classes if variant.head == "classify" else 1
    return NetworkSpec(num_classes=k, stages=variant.stages, widths=tuple(widths), head_width=head_width,
                       head=variant.head)


def _crop(rng, img, dens, crop, hflip):
    H, W = img.shape
    if crop is not None and crop < max(H, W):
        # grid-aligned offsets keep every level's cells on sub-region boundaries
        oy = OUTPUT_STRIDE * int(rng.integers(0, (H - crop) // OUTPUT_STRIDE + 1)) if H > crop else 0
        ox = OUTPUT_STRIDE * int(rng.integers(0, (W - crop) // OUTPUT_STRIDE + 1)) if W > crop else 0
        img = img[oy:oy + crop, ox:ox + crop]
        dens = dens[oy:oy + crop, ox:ox + crop]
    if hflip and rng.random() < 0.5:
        img = img[:, ::-1]
        dens = dens[:, ::-1]
    return img, dens


def train(images: list[np.ndarray], dens_maps: list[np.ndarray], cfg: TrainConfig, spec: NetworkSpec,
          variant: ModelVariant, partition, extra_config: dict | None = None, on_epoch=None) -> TrainResult:
    """Train on in-memory images [H, W] and matching GT density maps."""
    if len(images) != len(dens_maps) or not images:
        raise ValueError("need equally many (non-zero) images and density maps")
    dtype = np.dtype(cfg.dtype)
    images = [pad_to_stride(np.asarray(im, dtype=np.float64), OUTPUT_STRIDE) for im in images]
    dens_maps = [pad_to_stride(np.asarray(d, dtype=np.float64), OUTPUT_STRIDE) for d in dens_maps]
    params = init_params(spec, cfg.seed, std=cfg.init_std, encoder_init=cfg.encoder_init, dtype=dtype)
    opt = SGD(params, cfg.momentum)
    sched = PlateauSchedule(cfg.lr0, cfg.plateau_factor, cfg.plateau_patience)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    history = []
    it = 0
    n = len(images)
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        lr = sched.lr
        for s in range(0, n, cfg.batch_size):
            if cfg.max_iters is not None and it >= cfg.max_iters:
                break
            batch = [_crop(rng, images[j], dens_maps[j], cfg.crop_px, cfg.hflip) for j in order[s:s + cfg.batch_size]]
            shapes = {b[0].shape for b in batch}
            if len(shapes) > 1:
                # mixed sizes cannot be stacked; fall back to the first sample
                batch = batch[:1]
            x = np.stack([b[0] for b in batch])[:, None]
            d = np.stack([b[1] for b in batch])
            out = forward(spec, params, x)
            report, d_cls, d_w = compute_loss(out, d, partition, variant)
            if not math.isfinite(report.total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, iteration {it}: {report.to_json()} (lr={lr})")
            grads = backward(spec, params, out, d_cls, d_w)
            opt.step(grads, lr)
            losses.append(report.total)
            it += 1
        if not losses:
            break
        mean_loss = float(np.mean(losses))
        new_lr = sched.step(mean_loss)
        rec = {"epoch": epoch, "iters": it, "loss": mean_loss, "lr": lr, "seconds": time.perf_counter() - t0}
        history.append(rec)
        log.info("epoch %d  iters %d  loss %.5f  lr %.2e", epoch, it, mean_loss, lr)
        if on_epoch is not None:
            on_epoch(rec)
        if new_lr != lr:
            log.info("plateau: lr %.2e -> %.2e", lr, new_lr)
        if cfg.max_iters is not None and it >= cfg.max_iters:
            break
    config = {"train": cfg.to_json(), "variant": variant.to_json(), "partition": partition.to_dict(),
              **(extra_config or {})}
    return TrainResult(Checkpoint(params, spec, config), history)


@dataclass
class Prediction:
    div: CountMap
    count: float
    counts: list  # per-level CountMaps C_0..C_N
    masks: list  # DivisionMask for levels 1..N


def predict(image, ckpt: Checkpoint, partition=None) -> Prediction:
    """Pad, run the network, recover counts, merge and integrate."""
    from ..partition import partition_from_dict

    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[0]
    img = pad_to_stride(img, OUTPUT_STRIDE)
    variant = ModelVariant(**ckpt.config["variant"])
    if partition is None and variant.head == "classify":
        partition = partition_from_dict(ckpt.config["partition"])
    out = forward(ckpt.spec, ckpt.params, img[None])
    part = partition if variant.head == "classify" else None
    arrays = recover_count_arrays(out, part, variant.clip_max)
    counts = [CountMap(a[0], OUTPUT_STRIDE >> i) for i, a in enumerate(arrays)]
    masks = [DivisionMask(np.asarray(w[0], dtype=np.float64), OUTPUT_STRIDE >> i)
             for i, w in enumerate(out.w) if w is not None]
    merged: MergeResult = multi_stage_merge(counts[0], counts[1:], masks)
    return Prediction(merged.div, float(merged.div.values.sum()), counts, masks)
