"""Acceptance criteria as plain functions returning (passed, detail).

Shared by tests/test_acceptance.py and by running that file directly.
"""
from __future__ import annotations

import filecmp
import math
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from sdcnet.config import load_run_config
from sdcnet.dataset import Sample
from sdcnet.density import FixedKernel, PointSet, density_from_points, local_counts, pad_to_stride
from sdcnet.evaluate import evaluate, oracle_predictor
from sdcnet.experiment import run_toy
from sdcnet.grid import CountMap, block_sum
from sdcnet.metrics import EvalRecord, game, mae_rmse
from sdcnet.net.gradcheck import check_layer, gradcheck, gradcheck_state
from sdcnet.net.model import backward, forward
from sdcnet.partition import build_one_linear
from sdcnet.sdc import DivisionMask, avg_redistribute, merge_stage, multi_stage_merge
from sdcnet.train.losses import VARIANTS, ModelVariant, compute_loss
from sdcnet.train.loop import network_for

ROOT = Path(__file__).resolve().parents[1]
TOY_CONFIG = ROOT / "configs" / "toy.json"


def _timed(fn, limit):
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    return ok and dt < limit, f"{detail}; {dt:.2f}s (limit {limit:g}s)"


def merge_algebra():
    def body():
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(200):
            c = CountMap(rng.random((3, 5)) * 20, 64)
            worst = max(worst, abs(avg_redistribute(c).total() - c.total()))
        ok = worst <= 1e-12
        prev, ci = CountMap(rng.random((2, 2)) * 9, 64), CountMap(rng.random((4, 4)) * 9, 32)
        z = merge_stage(prev, ci, DivisionMask(np.zeros((4, 4)), 32))
        o = merge_stage(prev, ci, DivisionMask(np.ones((4, 4)), 32))
        ok &= np.array_equal(z.values, avg_redistribute(prev).values) and np.array_equal(o.values, ci.values)
        c0 = CountMap(rng.random((2, 3)) * 50, 64)
        cs = [CountMap(rng.random((4 << k, 6 << k)), 32 >> k) for k in range(3)]
        ms = [DivisionMask(np.zeros(c.shape), c.cell_px) for c in cs]
        drift = abs(multi_stage_merge(c0, cs, ms).total() - c0.total())
        ok &= drift <= 1e-9
        hand = merge_stage(CountMap(np.array([[8.0]]), 64), CountMap(np.array([[1.0, 2], [3, 10]]), 32),
                           DivisionMask(np.array([[0.0, 0], [0, 1]]), 32)).values
        ok &= np.array_equal(hand, [[2, 2], [2, 10]])
        return bool(ok), f"avg drift {worst:.1e}, 3-stage w=0 drift {drift:.1e}, hand example {hand.tolist()}"
    return _timed(body, 1.0)


def partition_suite():
    def body():
        p = build_one_linear(0.5, 10)
        rng = np.random.default_rng(2)
        c = np.concatenate([rng.uniform(0, 30, 100_000), [0.0, 0.5, 10.0, 10.0 + 1e-12]])
        cls = p.class_of(c)
        bounds = np.concatenate([[0.0], p.boundaries, [np.inf]])
        lo = np.where(cls == 0, 0.0, bounds[np.maximum(cls - 1, 0)])
        hi = np.where(cls == 0, 0.0, bounds[cls])
        total = bool(np.all(np.where(cls == 0, c == 0, (c > lo) & (c <= hi))))
        order = np.argsort(c, kind="stable")
        mono = bool(np.all(np.diff(cls[order]) >= 0))
        rec = p.count_of(cls)
        inside = (c > 0) & (c <= p.c_max)
        width = hi - lo
        bound = bool(np.all(np.abs(rec - c)[inside] <= width[inside] / 2 + 1e-12))
        sat = bool(np.all(rec[c > p.c_max] == p.c_max))
        k = p.num_classes
        ok = total and mono and bound and sat and k == 22
        return ok, f"totality {total}, monotone {mono}, recovery bound {bound}, saturation {sat}, classes {k}"
    return _timed(body, 5.0)


def density_suite():
    def body():
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(20):
            x, y = rng.uniform(0, 200), rng.uniform(0, 150)
            d = density_from_points(PointSet(200, 150, [[x, y]]), FixedKernel(float(rng.uniform(1, 15))))
            worst = max(worst, abs(d.sum() - 1.0))
        dens = density_from_points(PointSet(250, 190, rng.uniform(0, 190, (60, 2))), FixedKernel(8.0))
        padded = pad_to_stride(dens, 64)
        c16, c32, c64 = (local_counts(padded, k).values for k in (16, 32, 64))
        hier = max(np.abs(block_sum(c16, 4) - c64).max(), np.abs(block_sum(c16, 2) - c32).max(),
                   np.abs(block_sum(c32, 2) - c64).max())
        # padding never changes a metric: oracle scores stay exact on unpadded sizes
        pts = PointSet(250, 190, rng.uniform(0, 190, (40, 2)))
        res = evaluate([Sample("p", np.zeros((190, 250)), pts)], oracle_predictor(), game_levels=2)
        pad_ok = all(v == 0 for k, v in res.summary.items() if k != "n_images")
        pad_ok &= math.fsum(padded.ravel()) == math.fsum(dens.ravel())
        ok = worst <= 1e-6 and hier <= 1e-9 and pad_ok
        return ok, f"max kernel mass error {worst:.1e}, hierarchy error {hier:.1e}, padding invariant {pad_ok}"
    return _timed(body, 30.0)


def gradient_check():
    def body():
        rng = np.random.default_rng(4)
        layer_worst = 0.0
        cases = [
            ("conv3x3", rng.standard_normal((1, 5, 5, 2)),
             {"w": rng.standard_normal((3, 3, 2, 3)), "b": rng.standard_normal(3)}),
            ("conv1x1", rng.standard_normal((2, 3, 3, 4)),
             {"w": rng.standard_normal((4, 3)), "b": rng.standard_normal(3)}),
            ("relu", rng.standard_normal((1, 4, 4, 2)) + 0.01, None),
            ("sigmoid", rng.standard_normal((1, 3, 3, 2)), None),
            ("maxpool2", rng.standard_normal((1, 4, 4, 2)), None),
            ("avgpool2s2", rng.standard_normal((1, 4, 4, 2)), None),
            ("upsample_nearest2", rng.standard_normal((1, 2, 2, 2)), None),
            ("concat_skip", rng.standard_normal((1, 2, 2, 2)), rng.standard_normal((1, 2, 2, 3))),
        ]
        for kind, x, params in cases:
            layer_worst = max(layer_worst, max(check_layer(kind, x, params, seed=5).values()))
        part = build_one_linear(0.5, 10)
        net_worst, failures, exact = 0.0, [], True
        img = rng.random((1, 64, 64))
        dens = density_from_points(PointSet(64, 64, rng.uniform(0, 64, (25, 2))), FixedKernel(3.0))
        for name in VARIANTS:
            v = ModelVariant.make(name, 2, c_max=10.0)
            spec = network_for(v, part, widths=(2, 2, 2, 2, 2), head_width=8)
            params = gradcheck_state(spec, seed=6)
            rep = gradcheck(spec, params, img, dens, part, v)
            net_worst = max(net_worst, max(rep.errors.values()))
            failures += [f"{name}:{k}" for k in rep.failures]
            if v.uses_merge:
                out = forward(spec, params, img)
                g = backward(spec, params, out, *compute_loss(out, dens, part, v, use_c=False)[1:])
                exact &= all(not g[k].any() for k in g if k.startswith("cls."))
                g = backward(spec, params, out, *compute_loss(out, dens, part, v, use_r=False)[1:])
                exact &= all(not g[k].any() for k in g if k.startswith("div."))
        ok = layer_worst <= 1e-4 and net_worst <= 1e-4 and not failures and exact
        return ok, (f"worst layer error {layer_worst:.1e}, worst network error {net_worst:.1e} over "
                    f"{len(VARIANTS)} variants, gradient partition exact {exact}"
                    + (f", failing {failures}" if failures else ""))
    return _timed(body, 300.0)


def metric_suite():
    def body():
        rng = np.random.default_rng(7)
        worst, mono, jensen = 0.0, True, True
        for _ in range(100):
            maps = [(rng.random((8, 8)) * 3, rng.random((8, 8)) * 3) for _ in range(4)]
            g0 = np.mean([game(p, g, 0) for p, g in maps])
            recs = [EvalRecord(p.sum(), g.sum()) for p, g in maps]
            mae, rmse = mae_rmse(recs)
            worst = max(worst, abs(g0 - mae))
            jensen &= rmse >= mae
            p, g = maps[0]
            vals = []
            for L in range(4):
                n, s = 2 ** L, 8 // 2 ** L
                brute = sum(abs(p[a * s:(a + 1) * s, b * s:(b + 1) * s].sum() - g[a * s:(a + 1) * s, b * s:(b + 1) * s].sum())
                            for a in range(n) for b in range(n))
                mono &= abs(brute - game(p, g, L)) < 1e-9
                vals.append(brute)
            mono &= all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
        ok = worst <= 1e-9 and mono and jensen
        return ok, f"GAME(0) vs MAE max diff {worst:.1e}, GAME monotone/brute-force {mono}, rmse>=mae {jensen}"
    return _timed(body, 5.0)


def toy_run(out_dir):
    """Runs the closed-to-open pipeline single-threaded; returns (outcome, seconds)."""
    cfg = load_run_config(TOY_CONFIG)
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        outcome = run_toy(cfg, out_dir)
    return outcome, time.perf_counter() - t0


def toy_reproduction(outcome, seconds):
    c = outcome.criteria()
    iters_ok = all(n <= 5000 for n in outcome.iters.values())
    time_ok = seconds <= 3600
    lines = [
        (c["a_saturation"], f"6(a) classification MAE bins 15-20 = {c['cls_mae_15_20']:.3f} vs "
                            f"3 x bins 3-8 = {3 * c['cls_mae_3_8']:.3f}"),
        (c["b_sdc_gain"], f"6(b) S-DCNet(2) MAE bins 15-20 = {c['sdc_mae_15_20']:.3f} vs "
                          f"0.5 x classification = {0.5 * c['cls_mae_15_20']:.3f}"),
        (c["c_closed_set"], f"6(c) worst per-bin MAE over bins 0-8, all methods = {c['worst_mae_0_8']:.3f} "
                            f"(limit 2.0)"),
        (iters_ok and time_ok, f"6 budget: iterations {outcome.iters}, total {seconds / 60:.1f} min (limit 60)"),
    ]
    return lines


def compare_runs(dir_a, dir_b):
    dir_a, dir_b = Path(dir_a), Path(dir_b)
    files = sorted(p.relative_to(dir_a).as_posix() for p in dir_a.rglob("*")
                   if p.is_file() and p.suffix in (".ckpt", ".csv"))
    _, mismatch, errors = filecmp.cmpfiles(dir_a, dir_b, files, shallow=False)
    n_ckpt = sum(f.endswith(".ckpt") for f in files)
    ok = not mismatch and not errors and n_ckpt == 3
    return ok, f"{len(files)} checkpoint/CSV files compared ({n_ckpt} checkpoints), differing: {mismatch + errors}"
