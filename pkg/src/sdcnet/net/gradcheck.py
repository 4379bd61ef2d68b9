"""Central finite-difference checks for the hand-written gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .model import NetworkSpec, backward, forward, recover_count_arrays

EPS = 1e-5


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference, scaled by the largest gradient magnitude of the tensor."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_grad(f, x: np.ndarray, eps: float = EPS, pattern=None, max_shrink: int = 4) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place).

    If ``pattern`` is given, ``f`` returns ``(value, signature)`` where the
    signature fingerprints the piecewise-linear regime (relu masks, pool
    winners).  A step that changes the signature straddles a kink, so that
    entry is retried with a 10x smaller step.
    """
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for j in range(flat.size):
        old = flat[j]
        h = eps
        for attempt in range(max_shrink + 1):
            flat[j] = old + h
            fp = f()
            flat[j] = old - h
            fm = f()
            flat[j] = old
            if pattern is None:
                break
            (fp, sp), (fm, sm) = fp, fm
            if (sp == pattern and sm == pattern) or attempt == max_shrink:
                break
            h /= 10.0
        gflat[j] = (fp - fm) / (2 * h)
    return g


def activation_pattern(out) -> bytes:
    """Fingerprint of every relu mask and max-pool winner in a forward cache."""
    parts = []
    for (c1, r1), (c2, r2), (idx, _) in out.cache["enc"]:
        parts += [np.packbits(r1).tobytes(), np.packbits(r2).tobytes(), idx.astype(np.int8).tobytes()]
    for _, _, _, r in out.cache["dec"]:
        parts.append(np.packbits(r).tobytes())
    for c in out.cache["cls"] + [c for c in out.cache["div"] if c is not None]:
        parts.append(np.packbits(c[2]).tobytes())
    return b"".join(parts)


def check_layer(kind: str, x: np.ndarray, params=None, seed: int = 0, eps: float = EPS) -> dict[str, float]:
    """Compare a layer's backward against finite differences of ``sum(r * y)``."""
    rng = np.random.default_rng(seed)
    y, _ = L.layer_forward(kind, x, params)
    r = rng.standard_normal(y.shape)

    def f():
        return float((L.layer_forward(kind, x, params)[0] * r).sum())

    _, cache = L.layer_forward(kind, x, params)
    dx, grads = L.layer_backward(kind, cache, r)
    errors = {}
    if kind == "concat_skip":
        errors["x"] = rel_error(dx[0], numeric_grad(f, x, eps))
        errors["skip"] = rel_error(dx[1], numeric_grad(f, params, eps))
        return errors
    errors["x"] = rel_error(dx, numeric_grad(f, x, eps))
    for name, g in grads.items():
        errors[name] = rel_error(g, numeric_grad(f, params[name], eps))
    return errors


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tol: float
    count_flips: int = 0
    worst: str | None = field(default=None)

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, e in self.errors.items() if e > self.tol]


def gradcheck(spec: NetworkSpec, params: dict, image, gt_density, partition, variant,
              use_c: bool = True, use_r: bool = True, tol: float = 1e-4, eps: float = EPS) -> GradcheckReport:
    """Finite-difference check of every parameter gradient of the full loss.

    Recovered counts are piecewise constant in the parameters; they are frozen
    at the base point so both sides differentiate the same function.  Any
    argmax change seen during perturbation is counted in ``count_flips``.
    Steps that cross a relu or max-pool kink are shrunk (see ``numeric_grad``).
    """
    from ..train.losses import compute_loss, level_targets, merge_with_grad

    for p in params.values():
        if p.dtype != np.float64:
            raise ValueError("gradcheck runs in 64-bit mode")
    out = forward(spec, params, image)
    clip = variant.clip_max
    part = partition if variant.head == "classify" else None
    frozen = recover_count_arrays(out, part, clip)
    targets = level_targets(gt_density, out.levels)

    def pattern(o):
        # l1 terms have a kink where a residual changes sign
        signs = []
        if variant.head == "regress":
            signs += [np.signbit(c[:, 0] - t) for c, t in zip(o.cls, targets)]
        if variant.uses_merge:
            signs.append(np.signbit(merge_with_grad(frozen, o.w, targets[-1])[2] - targets[-1]))
        return activation_pattern(o) + b"".join(np.packbits(s).tobytes() for s in signs)

    base_pattern = pattern(out)
    _, d_cls, d_w = compute_loss(out, gt_density, partition, variant, use_c, use_r, frozen_counts=frozen)
    grads = backward(spec, params, out, d_cls, d_w)

    flips = 0

    def f():
        nonlocal flips
        o = forward(spec, params, image)
        if variant.head == "classify":
            flips += sum(int(np.any(a != b)) for a, b in zip(recover_count_arrays(o, part, clip), frozen))
        rep, _, _ = compute_loss(o, gt_density, partition, variant, use_c, use_r, frozen_counts=frozen)
        return rep.total, pattern(o)

    errors = {name: rel_error(grads[name], numeric_grad(f, params[name], eps, pattern=base_pattern))
              for name in params}
    worst = max(errors, key=errors.get) if errors else None
    return GradcheckReport(errors, tol, flips, worst)


def gradcheck_state(spec: NetworkSpec, seed: int = 0, weight_std: float = 0.5,
                    bias_std: float = 0.1) -> dict[str, np.ndarray]:
    """Float64 parameters suited to finite differences.

    Zero biases leave exact zeros behind dead relus, which the next layer turns
    into pre-activations sitting exactly on a kink. Random biases avoid that.
    """
    from .model import param_shapes

    rng = np.random.default_rng(seed)
    return {name: rng.standard_normal(shape) * (bias_std if name.endswith(".b") else weight_std)
            for name, shape in param_shapes(spec).items()}
