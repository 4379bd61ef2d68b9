import math

import numpy as np
import pytest

from sdcnet.grid import CountMap, ShapeError
from sdcnet.metrics import (EvalRecord, game, mae_rmse, mean_game, per_bin_errors, range_mae, read_bins_csv,
                            read_summary_csv, write_bins_csv, write_summary_csv)


def game_brute(p, g, L):
    n = 2 ** L
    h, w = p.shape
    total = 0.0
    for a in range(n):
        for b in range(n):
            rs = slice(a * h // n, (a + 1) * h // n)
            cs = slice(b * w // n, (b + 1) * w // n)
            total += abs(p[rs, cs].sum() - g[rs, cs].sum())
    return total


def test_mae_rmse_examples():
    assert mae_rmse([EvalRecord(3, 3), EvalRecord(0, 0)]) == (0.0, 0.0)
    assert mae_rmse([EvalRecord(1, 2), EvalRecord(3, 2)]) == (1.0, 1.0)
    with pytest.raises(ValueError):
        mae_rmse([])
    with pytest.raises(ValueError):
        EvalRecord(1, -1)


def test_rmse_at_least_mae(rng):
    for _ in range(100):
        recs = [EvalRecord(float(p), float(g)) for p, g in zip(rng.random(7) * 20, rng.random(7) * 20)]
        mae, rmse = mae_rmse(recs)
        assert rmse >= mae


def test_game_examples(rng):
    p, g = rng.random((4, 4)), rng.random((4, 4))
    assert game(p, g, 0) == pytest.approx(abs(p.sum() - g.sum()), abs=1e-12)
    assert game(p, p, 2) == 0.0
    hand = sum(abs(p[i:i + 2, j:j + 2].sum() - g[i:i + 2, j:j + 2].sum()) for i in (0, 2) for j in (0, 2))
    assert game(p, g, 1) == pytest.approx(hand, abs=1e-12)
    with pytest.raises(ShapeError):
        game(np.zeros((6, 6)), np.zeros((6, 6)), 2)
    with pytest.raises(ShapeError):
        game(np.zeros((4, 4)), np.zeros((4, 8)), 0)


def test_game_monotone_vs_brute_force(rng):
    for _ in range(50):
        h, w = 8 * rng.integers(1, 3), 8 * rng.integers(1, 3)
        p, g = CountMap(rng.random((h, w)) * 3, 16), CountMap(rng.random((h, w)) * 3, 16)
        vals = [game(p, g, L) for L in range(4)]
        for L, v in enumerate(vals):
            assert v == pytest.approx(game_brute(p.values, g.values, L), abs=1e-9)
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_game0_mean_equals_mae(rng):
    pairs = [(rng.random((2, 2)) * 5, rng.random((2, 2)) * 5) for _ in range(30)]
    recs = [EvalRecord(p.sum(), g.sum()) for p, g in pairs]
    assert mean_game(pairs, 0) == pytest.approx(mae_rmse(recs)[0], abs=1e-9)


def _rec(pred, gt):
    return EvalRecord(float(np.sum(pred)), float(np.sum(gt)), CountMap(np.array(pred, float), 64),
                      CountMap(np.array(gt, float), 64))


def test_per_bin_examples():
    rows = per_bin_errors([_rec([[0, 0]], [[0, 0]])], range(0, 3))
    assert rows[0].n == 2 and rows[0].mae == 0 and rows[0].rmae is None
    assert rows[1].n == 0 and rows[1].mae is None
    rows = per_bin_errors([_rec([[12]], [[10]])], range(0, 22))
    assert rows[10].mae == 2 and rows[10].rmae == pytest.approx(0.2)


def test_per_bin_error_sums_partition_total(rng):
    recs = [_rec(rng.random((3, 3)) * 12, rng.integers(0, 12, (3, 3))) for _ in range(10)]
    rows = per_bin_errors(recs, range(0, 13))
    total = sum(np.abs(r.pred_map.values - r.gt_map.values).sum() for r in recs)
    assert sum(r.abs_err_sum for r in rows) == pytest.approx(total, abs=1e-9)
    assert sum(r.n for r in rows) == 90


def test_range_mae():
    rows = per_bin_errors([_rec([[1, 5, 9]], [[0, 4, 8]])], range(0, 10))
    assert range_mae(rows, 0, 8) == pytest.approx(1.0)
    assert math.isnan(range_mae(rows, 15, 20))


def test_csv_roundtrip(tmp_path):
    rows = per_bin_errors([_rec([[12, 0]], [[10, 0]])], range(0, 12))
    write_bins_csv(rows, tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "bin_low,bin_high,n,mae,rmae"
    back = read_bins_csv(tmp_path / "b.csv")
    assert [(r.low, r.n, r.mae, r.rmae) for r in back] == [(r.low, r.n, r.mae, r.rmae) for r in rows]
    write_summary_csv({"mae": 1.5, "rmse": 2.0}, tmp_path / "s.csv")
    assert read_summary_csv(tmp_path / "s.csv") == {"mae": 1.5, "rmse": 2.0}
