"""Training objectives: per-level count losses plus the merged-map l1 term.

Total loss is ``sum_i L_C^i + L_R^N``.  ``L_C^i`` is softmax cross-entropy
against interval labels (or l1 for regression heads).  ``L_R^N`` compares
DIV_N against integrated ground truth at the finest level.  The recovered
counts C_i enter the merge as constants, so ``L_R^N`` only trains the decider
and the features beneath it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..grid import block_sum
from ..net.model import OUTPUT_STRIDE, ForwardOutputs, recover_count_arrays
from ..sdc import upsample_avg

VARIANTS = ("sdcnet", "classification", "regression", "regression_sdc_open", "regression_sdc_closed")


@dataclass(frozen=True)
class ModelVariant:
    name: str
    stages: int = 0
    c_max: float | None = None

    def __post_init__(self):
        if self.name not in VARIANTS:
            raise ValueError(f"unknown variant {self.name!r}; choose from {', '.join(VARIANTS)}")
        if self.name in ("classification", "regression") and self.stages != 0:
            raise ValueError(f"{self.name} has no division stages")
        if self.name in ("sdcnet", "regression_sdc_open", "regression_sdc_closed") and self.stages < 1:
            raise ValueError(f"{self.name} needs at least one division stage")
        if self.name == "regression_sdc_closed" and self.c_max is None:
            raise ValueError("regression_sdc_closed needs c_max")

    @classmethod
    def make(cls, name: str, stages: int = 2, c_max: float | None = None) -> "ModelVariant":
        if name in ("classification", "regression"):
            stages = 0
        return cls(name, stages, c_max if name == "regression_sdc_closed" else None)

    @property
    def head(self) -> str:
        return "classify" if self.name in ("sdcnet", "classification") else "regress"

    @property
    def uses_merge(self) -> bool:
        return self.stages > 0

    @property
    def clip_max(self) -> float | None:
        return self.c_max if self.name == "regression_sdc_closed" else None

    def to_json(self) -> dict:
        return {"name": self.name, "stages": self.stages, "c_max": self.c_max}


@dataclass
class LossReport:
    l_c: list[float]
    l_r: float | None
    total: float
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"l_c": list(self.l_c), "l_r": self.l_r, "total": self.total}


def level_targets(gt_density, levels: int) -> list[np.ndarray]:
    """Integrated GT counts per level, each [B, h_i, w_i]."""
    d = np.asarray(gt_density, dtype=np.float64)
    if d.ndim == 2:
        d = d[None]
    return [np.maximum(block_sum(d, OUTPUT_STRIDE >> i), 0.0) for i in range(levels)]


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over cells; logits [B, K, h, w], labels [B, h, w]."""
    z = np.moveaxis(logits, 1, -1).astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    n = labels.size
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    grad = np.exp(logp)
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], axis=-1) - 1.0, axis=-1)
    return float(-picked.sum() / n), np.moveaxis(grad / n, -1, 1)


def l1_mean(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred.astype(np.float64) - target
    n = diff.size
    return float(np.abs(diff).sum() / n), np.sign(diff) / n


def merge_with_grad(counts: list[np.ndarray], masks: list, target: np.ndarray):
    """L_R^N and its gradient w.r.t. each W_i, counts held constant."""
    divs = [counts[0]]
    for i in range(1, len(counts)):
        w = masks[i].astype(np.float64)
        divs.append((1.0 - w) * upsample_avg(divs[-1]) + w * counts[i])
    l_r, d_div = l1_mean(divs[-1], target)
    d_w = [None] * len(counts)
    for i in range(len(counts) - 1, 0, -1):
        w = masks[i].astype(np.float64)
        up = upsample_avg(divs[i - 1])
        d_w[i] = d_div * (counts[i] - up)
        d_up = d_div * (1.0 - w)
        b, h, wd = d_up.shape
        d_div = d_up.reshape(b, h // 2, 2, wd // 2, 2).sum(axis=(2, 4)) / 4.0
    return l_r, d_w, divs[-1]


def compute_loss(outputs: ForwardOutputs, gt_density, partition, variant: ModelVariant,
                 use_c: bool = True, use_r: bool = True, frozen_counts=None):
    """Returns (LossReport, d_cls, d_w) for ``net.backward``.

    ``frozen_counts`` replaces the recovered C_i (used by the gradient checker to
    evaluate the same surrogate the analytic gradient differentiates).
    """
    levels = outputs.levels
    if levels != variant.stages + 1:
        raise ValueError(f"outputs have {levels} levels but variant {variant.name} expects {variant.stages + 1}")
    targets = level_targets(gt_density, levels)
    for i, (logits, t) in enumerate(zip(outputs.cls, targets)):
        if logits.shape[0] != t.shape[0] or logits.shape[2:] != t.shape[1:]:
            raise ValueError(f"level {i}: prediction grid {logits.shape[2:]} does not match GT {t.shape[1:]}")

    dtype = outputs.cls[0].dtype
    l_c, d_cls = [], [None] * levels
    for i in range(levels):
        if variant.head == "classify":
            labels = partition.class_of(targets[i])
            val, grad = softmax_xent(outputs.cls[i], labels)
        else:
            val, g = l1_mean(outputs.cls[i][:, 0], targets[i])
            grad = g[:, None]
        l_c.append(val)
        if use_c:
            d_cls[i] = grad.astype(dtype)

    l_r = None
    d_w = [None] * levels
    if variant.uses_merge:
        if frozen_counts is not None:
            counts = [np.asarray(c, dtype=np.float64) for c in frozen_counts]
        elif variant.head == "classify":
            counts = recover_count_arrays(outputs, partition)
        else:
            counts = recover_count_arrays(outputs, None, variant.clip_max)
        l_r, gw, _ = merge_with_grad(counts, outputs.w, targets[-1])
        if use_r:
            d_w = [None if g is None else g.astype(dtype) for g in gw]

    total = (sum(l_c) if use_c else 0.0) + (l_r if (use_r and l_r is not None) else 0.0)
    report = LossReport(l_c if use_c else [], l_r if use_r else None, total)
    return report, d_cls, d_w
