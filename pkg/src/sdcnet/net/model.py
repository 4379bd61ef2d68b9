"""Toy encoder-decoder with a shared count head and a division decider.

Encoder: five blocks of (conv3x3 + relu) x 2 followed by a 2x2 max-pool, so the
deepest feature map F_0 has stride 32.  Each decoder stage upsamples the
previous feature map, concatenates the pooled encoder output of matching
stride and fuses it back to the F_0 width with conv3x3 + relu.  Both heads
start with a stride-2 average pool, so level i predicts one value per
(64 / 2**i)-pixel cell.  The count head is shared by every level; the decider
runs on levels 1..N only.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..grid import CountMap
from . import layers as L

OUTPUT_STRIDE = 64
N_BLOCKS = 5


@dataclass(frozen=True)
class NetworkSpec:
    num_classes: int
    stages: int = 2
    widths: tuple = (16, 32, 64, 64, 64)
    head_width: int = 64
    head: str = "classify"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != N_BLOCKS:
            raise ValueError(f"need {N_BLOCKS} encoder widths, got {self.widths}")
        if not 0 <= self.stages <= N_BLOCKS - 1:
            raise ValueError(f"stages must be in [0, {N_BLOCKS - 1}], got {self.stages}")
        if self.head not in ("classify", "regress"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == "regress" and self.num_classes != 1:
            raise ValueError("a regression head has exactly one output channel")

    @property
    def feature_width(self) -> int:
        # every decoder level matches F_0 so the count head can be shared
        return self.widths[-1]

    def cell_px(self, level: int) -> int:
        return OUTPUT_STRIDE >> level

    def to_json(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


def param_shapes(spec: NetworkSpec) -> dict[str, tuple]:
    shapes = {}
    c_in = 1
    for b, c in enumerate(spec.widths, start=1):
        shapes[f"enc{b}.conv1.w"] = (3, 3, c_in, c)
        shapes[f"enc{b}.conv1.b"] = (c,)
        shapes[f"enc{b}.conv2.w"] = (3, 3, c, c)
        shapes[f"enc{b}.conv2.b"] = (c,)
        c_in = c
    d = spec.feature_width
    for i in range(1, spec.stages + 1):
        skip = spec.widths[N_BLOCKS - 1 - i]
        shapes[f"dec{i}.conv.w"] = (3, 3, d + skip, d)
        shapes[f"dec{i}.conv.b"] = (d,)
    heads = [("cls", spec.num_classes)] + ([("div", 1)] if spec.stages > 0 else [])
    for name, n_out in heads:
        shapes[f"{name}.fc1.w"] = (d, spec.head_width)
        shapes[f"{name}.fc1.b"] = (spec.head_width,)
        shapes[f"{name}.fc2.w"] = (spec.head_width, n_out)
        shapes[f"{name}.fc2.b"] = (n_out,)
    return shapes


def init_params(spec: NetworkSpec, seed: int, std: float = 0.01, encoder_init: str = "he",
                dtype=np.float64) -> dict[str, np.ndarray]:
    """Gaussian init with zero biases.

    Non-encoder weights are N(0, std^2).  The encoder stands in for a pretrained
    backbone, so by default it uses He-normal scaling instead; pass
    ``encoder_init="gaussian"`` to apply ``std`` everywhere, or ``"he_all"`` to
    He-scale every hidden layer (only the head output layers keep ``std``).
    """
    if encoder_init not in ("he", "gaussian", "he_all"):
        raise ValueError(f"unknown encoder_init {encoder_init!r}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        s = std
        he = (encoder_init == "he" and name.startswith("enc")) or (
            encoder_init == "he_all" and not name.endswith("fc2.w"))
        if he:
            s = np.sqrt(2.0 / np.prod(shape[:-1]))
        params[name] = (rng.standard_normal(shape) * s).astype(dtype)
    return params


def check_params(spec: NetworkSpec, params: dict) -> None:
    expected = param_shapes(spec)
    for name, shape in expected.items():
        if name not in params:
            raise ValueError(f"missing parameter tensor {name}")
        if tuple(params[name].shape) != tuple(shape):
            raise ValueError(f"shape mismatch for tensor {name}: expected {shape}, got {params[name].shape}")
        if not np.all(np.isfinite(params[name])):
            raise ValueError(f"non-finite values in tensor {name}")
    extra = set(params) - set(expected)
    if extra:
        raise ValueError(f"unexpected parameter tensors: {sorted(extra)}")


@dataclass
class ForwardOutputs:
    """Per-level head outputs for a batch.

    ``cls[i]`` has shape [B, K, h_i, w_i]; ``w[i]`` has shape [B, h_i, w_i] and
    is ``None`` at level 0, which has no division decision.
    """
    cls: list
    w: list
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def levels(self) -> int:
        return len(self.cls)


def as_batch(images, dtype) -> np.ndarray:
    x = np.asarray(images)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"expected an image [1, H, W] or batch [B, 1, H, W], got {x.shape}")
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=dtype)


def _sub(params, prefix):
    return {"w": params[prefix + ".w"], "b": params[prefix + ".b"]}


def _head_forward(params, name, feat, sigmoid):
    a, c_pool = L.avgpool2s2_forward(feat)
    h, c_fc1 = L.conv1x1_forward(a, _sub(params, f"{name}.fc1"), path=f"{name}.fc1")
    h, c_relu = L.relu_forward(h)
    y, c_fc2 = L.conv1x1_forward(h, _sub(params, f"{name}.fc2"), path=f"{name}.fc2")
    c_sig = None
    if sigmoid:
        y, c_sig = L.sigmoid_forward(y)
    return y, (c_pool, c_fc1, c_relu, c_fc2, c_sig)


def _head_backward(name, cache, dy, grads):
    c_pool, c_fc1, c_relu, c_fc2, c_sig = cache
    if c_sig is not None:
        dy, _ = L.sigmoid_backward(c_sig, dy)
    dh, g = L.conv1x1_backward(c_fc2, dy)
    _accumulate(grads, f"{name}.fc2", g)
    dh, _ = L.relu_backward(c_relu, dh)
    da, g = L.conv1x1_backward(c_fc1, dh)
    _accumulate(grads, f"{name}.fc1", g)
    dfeat, _ = L.avgpool2s2_backward(c_pool, da)
    return dfeat


def _accumulate(grads, prefix, g):
    for k, v in g.items():
        key = f"{prefix}.{k}"
        if key in grads:
            grads[key] = grads[key] + v
        else:
            grads[key] = v


def forward(spec: NetworkSpec, params: dict, images) -> ForwardOutputs:
    dtype = params["enc1.conv1.w"].dtype
    x = as_batch(images, dtype)
    _, H, W, _ = x.shape
    if H % OUTPUT_STRIDE or W % OUTPUT_STRIDE:
        raise ValueError(f"input {H}x{W} is not padded to a multiple of {OUTPUT_STRIDE}")

    enc_caches, pooled = [], []
    h = x
    for b in range(1, N_BLOCKS + 1):
        blk = []
        for k in (1, 2):
            name = f"enc{b}.conv{k}"
            h, c_conv = L.conv3x3_forward(h, _sub(params, name), path=name)
            h, c_relu = L.relu_forward(h)
            blk.append((c_conv, c_relu))
        h, c_pool = L.maxpool2_forward(h, path=f"enc{b}.pool")
        blk.append(c_pool)
        enc_caches.append(blk)
        pooled.append(h)

    feats = [pooled[-1]]
    dec_caches = []
    for i in range(1, spec.stages + 1):
        u, c_up = L.upsample_nearest2_forward(feats[-1])
        cat, c_cat = L.concat_skip_forward(u, pooled[N_BLOCKS - 1 - i], path=f"dec{i}.concat")
        y, c_conv = L.conv3x3_forward(cat, _sub(params, f"dec{i}.conv"), path=f"dec{i}.conv")
        y, c_relu = L.relu_forward(y)
        feats.append(y)
        dec_caches.append((c_up, c_cat, c_conv, c_relu))

    cls, masks, cls_caches, div_caches = [], [None], [], [None]
    for i, f in enumerate(feats):
        y, c = _head_forward(params, "cls", f, sigmoid=False)
        cls.append(y.transpose(0, 3, 1, 2))
        cls_caches.append(c)
        if i > 0:
            wmask, c = _head_forward(params, "div", f, sigmoid=True)
            masks.append(wmask[..., 0])
            div_caches.append(c)

    cache = {"enc": enc_caches, "dec": dec_caches, "cls": cls_caches, "div": div_caches}
    return ForwardOutputs(cls, masks, cache)


def backward(spec: NetworkSpec, params: dict, out: ForwardOutputs, d_cls, d_w) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter.

    ``d_cls[i]`` is dLoss/dCLS_i ([B, K, h, w]) and ``d_w[i]`` is dLoss/dW_i
    ([B, h, w]); either entry may be ``None`` when the loss ignores it.
    """
    cache = out.cache
    grads: dict[str, np.ndarray] = {}
    n_levels = out.levels
    d_feat = [None] * n_levels
    for i in range(n_levels):
        parts = []
        if d_cls[i] is not None:
            dy = np.ascontiguousarray(d_cls[i].transpose(0, 2, 3, 1))
            parts.append(_head_backward("cls", cache["cls"][i], dy, grads))
        if i > 0 and d_w[i] is not None:
            parts.append(_head_backward("div", cache["div"][i], d_w[i][..., None], grads))
        if parts:
            d_feat[i] = sum(parts[1:], parts[0])

    d_pooled = [None] * N_BLOCKS
    for i in range(n_levels - 1, 0, -1):
        if d_feat[i] is None:
            continue
        c_up, c_cat, c_conv, c_relu = cache["dec"][i - 1]
        dy, _ = L.relu_backward(c_relu, d_feat[i])
        dcat, g = L.conv3x3_backward(c_conv, dy)
        _accumulate(grads, f"dec{i}.conv", g)
        (du, dskip), _ = L.concat_skip_backward(c_cat, dcat)
        j = N_BLOCKS - 1 - i
        d_pooled[j] = dskip if d_pooled[j] is None else d_pooled[j] + dskip
        dprev, _ = L.upsample_nearest2_backward(c_up, du)
        d_feat[i - 1] = dprev if d_feat[i - 1] is None else d_feat[i - 1] + dprev

    # F_0 is the last pooled encoder output; decoder skips only reach shallower blocks
    d_pooled[-1] = d_feat[0]

    dh = None
    for b in range(N_BLOCKS, 0, -1):
        extra = d_pooled[b - 1]
        if extra is not None:
            dh = extra if dh is None else dh + extra
        if dh is None:
            continue
        (c1, r1), (c2, r2), c_pool = cache["enc"][b - 1]
        dh, _ = L.maxpool2_backward(c_pool, dh)
        dh, _ = L.relu_backward(r2, dh)
        dh, g = L.conv3x3_backward(c2, dh)
        _accumulate(grads, f"enc{b}.conv2", g)
        dh, _ = L.relu_backward(r1, dh)
        dh, g = L.conv3x3_backward(c1, dh, need_dx=b > 1)
        _accumulate(grads, f"enc{b}.conv1", g)

    for name, p in params.items():
        if name not in grads:
            grads[name] = np.zeros_like(p)
    return grads


def recover_count_arrays(out: ForwardOutputs, partition=None, clip_max: float | None = None) -> list[np.ndarray]:
    """Per-level recovered local counts, each of shape [B, h, w].

    With a partition, the argmax class (lowest index wins ties) maps to its
    interval median.  Without one the outputs are regressed counts, clipped
    to ``[0, clip_max]`` (``clip_max=None`` leaves the top open).
    """
    counts = []
    for logits in out.cls:
        if partition is None:
            v = np.maximum(logits[:, 0].astype(np.float64), 0.0)
            if clip_max is not None:
                v = np.minimum(v, clip_max)
        else:
            v = partition.medians[np.argmax(logits, axis=1)]
        counts.append(v)
    return counts


def predict_counts(out: ForwardOutputs, partition=None, clip_max: float | None = None,
                   image: int = 0) -> list[CountMap]:
    arrays = recover_count_arrays(out, partition, clip_max)
    return [CountMap(a[image], OUTPUT_STRIDE >> i) for i, a in enumerate(arrays)]
