"""Layer primitives with hand-written backward passes.

Activations use a batched channels-last layout ``[B, H, W, C]``.  Every
``*_forward`` returns ``(output, cache)``; the matching ``*_backward`` takes the
cache and the upstream gradient and returns ``(grad_input, grad_params)``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class LayerShapeError(ValueError):
    pass


def _check(cond, path, msg):
    if not cond:
        raise LayerShapeError(f"{path}: {msg}" if path else msg)


def conv3x3_forward(x, params, path=""):
    w, b = params["w"], params["b"]
    _check(x.ndim == 4, path, f"expected [B, H, W, C] input, got shape {x.shape}")
    B, H, W, C = x.shape
    _check(w.shape[:3] == (3, 3, C), path, f"weight {w.shape} does not take {C} input channels")
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3).reshape(B * H * W, 9 * C)
    y = cols @ w.reshape(9 * C, -1) + b
    return y.reshape(B, H, W, -1), (cols, x.shape, w)


def conv3x3_backward(cache, dy, need_dx=True):
    cols, xshape, w = cache
    B, H, W, C = xshape
    dy2 = dy.reshape(B * H * W, -1)
    grads = {"w": (cols.T @ dy2).reshape(w.shape), "b": dy2.sum(axis=0)}
    if not need_dx:
        return None, grads
    dcols = (dy2 @ w.reshape(9 * C, -1).T).reshape(B, H, W, 3, 3, C)
    dxp = np.zeros((B, H + 2, W + 2, C), dtype=dy.dtype)
    for ky in range(3):
        for kx in range(3):
            dxp[:, ky:ky + H, kx:kx + W, :] += dcols[:, :, :, ky, kx, :]
    return dxp[:, 1:-1, 1:-1, :], grads


def conv1x1_forward(x, params, path=""):
    w, b = params["w"], params["b"]
    _check(x.shape[-1] == w.shape[0], path, f"input has {x.shape[-1]} channels, weight expects {w.shape[0]}")
    return x @ w + b, (x, w)


def conv1x1_backward(cache, dy, need_dx=True):
    x, w = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    grads = {"w": x2.T @ dy2, "b": dy2.sum(axis=0)}
    return (dy @ w.T if need_dx else None), grads


def relu_forward(x, params=None, path=""):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask, dy, need_dx=True):
    return dy * mask, {}


def sigmoid_forward(x, params=None, path=""):
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return y, y


def sigmoid_backward(y, dy, need_dx=True):
    return dy * y * (1.0 - y), {}


def _blocks(x):
    B, H, W, C = x.shape
    return x.reshape(B, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, H // 2, W // 2, C, 4)


def _unblocks(xb, shape):
    B, H, W, C = shape
    return xb.reshape(B, H // 2, W // 2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(shape)


def maxpool2_forward(x, params=None, path=""):
    _check(x.shape[1] % 2 == 0 and x.shape[2] % 2 == 0, path, f"maxpool2 needs even spatial dims, got {x.shape}")
    xb = _blocks(x)
    idx = xb.argmax(axis=-1)
    y = np.take_along_axis(xb, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2_backward(cache, dy, need_dx=True):
    idx, shape = cache
    db = np.zeros(idx.shape + (4,), dtype=dy.dtype)
    np.put_along_axis(db, idx[..., None], dy[..., None], axis=-1)
    return _unblocks(db, shape), {}


def avgpool2s2_forward(x, params=None, path=""):
    _check(x.shape[1] % 2 == 0 and x.shape[2] % 2 == 0, path, f"avgpool2s2 needs even spatial dims, got {x.shape}")
    B, H, W, C = x.shape
    return x.reshape(B, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4)), x.shape


def avgpool2s2_backward(shape, dy, need_dx=True):
    return np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2) / 4.0, {}


def upsample_nearest2_forward(x, params=None, path=""):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2), x.shape


def upsample_nearest2_backward(shape, dy, need_dx=True):
    B, H, W, C = shape
    return dy.reshape(B, H, 2, W, 2, C).sum(axis=(2, 4)), {}


def concat_skip_forward(x, skip, path=""):
    _check(x.shape[:3] == skip.shape[:3], path, f"cannot concatenate {x.shape} with skip {skip.shape}")
    return np.concatenate([x, skip], axis=-1), x.shape[-1]


def concat_skip_backward(n_first, dy, need_dx=True):
    """Returns ((grad_x, grad_skip), {})."""
    return (dy[..., :n_first], dy[..., n_first:]), {}


FORWARD = {
    "conv3x3": conv3x3_forward,
    "conv1x1": conv1x1_forward,
    "relu": relu_forward,
    "sigmoid": sigmoid_forward,
    "maxpool2": maxpool2_forward,
    "avgpool2s2": avgpool2s2_forward,
    "upsample_nearest2": upsample_nearest2_forward,
    "concat_skip": concat_skip_forward,
}

BACKWARD = {
    "conv3x3": conv3x3_backward,
    "conv1x1": conv1x1_backward,
    "relu": relu_backward,
    "sigmoid": sigmoid_backward,
    "maxpool2": maxpool2_backward,
    "avgpool2s2": avgpool2s2_backward,
    "upsample_nearest2": upsample_nearest2_backward,
    "concat_skip": concat_skip_backward,
}


def layer_forward(kind, x, params=None, path=""):
    """Dispatch by layer kind. For ``concat_skip`` pass the skip tensor as ``params``."""
    if kind not in FORWARD:
        raise ValueError(f"unknown layer kind {kind!r}")
    return FORWARD[kind](x, params, path=path)


def layer_backward(kind, cache, dy, need_dx=True):
    return BACKWARD[kind](cache, dy, need_dx=need_dx)
