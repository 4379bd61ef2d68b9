import numpy as np
import pytest

from sdcnet.dataset import Sample
from sdcnet.density import PointSet
from sdcnet.evaluate import evaluate, game_cell, oracle_predictor, refine_to
from sdcnet.grid import CountMap
from sdcnet.train.loop import Prediction


def sample(name, h, w, pts):
    return Sample(name, np.zeros((h, w)), PointSet(w, h, pts))


def test_oracle_is_exact(rng):
    samples = [sample(f"s{i}", 250, 190, rng.uniform(0, 190, (30, 2)) * [1, 250 / 190]) for i in range(3)]
    res = evaluate(samples, oracle_predictor(), game_levels=3)
    assert res.summary["mae"] == 0 and res.summary["rmse"] == 0
    assert all(res.summary[f"game{L}"] == 0 for L in range(4))


def test_constant_predictor_metrics():
    s = sample("a", 128, 128, [[10, 10], [20, 20], [100, 100]])

    def pred(_):
        div = CountMap(np.full((2, 2), 1.0), 64)
        return Prediction(div, 4.0, [div], [])

    res = evaluate([s], pred, game_levels=1)
    assert res.summary["mae"] == 1.0
    assert res.summary["game1"] == pytest.approx(1 + 1 + 1 + 0)
    assert res.bins[0].n == 2 and res.bins[0].mae == 1.0
    assert res.bins[2].n == 1 and res.bins[2].mae == 1.0


def test_refine_and_game_cell():
    m = refine_to(CountMap(np.array([[8.0]]), 64), 16)
    assert m.cell_px == 16 and m.shape == (4, 4) and m.total() == 8.0
    assert game_cell(256, 256, 16, 3) == 16
    assert game_cell(256, 256, 64, 3) == 32
    assert game_cell(192, 256, 64, 2) == 16


def test_mask_dumps(tmp_path):
    from sdcnet.sdc import DivisionMask

    s = sample("img_0", 128, 128, [[5, 5]])

    def pred(_):
        div = CountMap(np.zeros((8, 8)), 16)
        masks = [DivisionMask(np.full((4, 4), 0.5), 32), DivisionMask(np.zeros((8, 8)), 16)]
        return Prediction(div, 0.0, [div], masks)

    evaluate([s, sample("img_1", 128, 128, [])], pred, mask_dir=tmp_path / "m", mask_figures=1)
    pgms = sorted(p.name for p in (tmp_path / "m").glob("*.pgm"))
    assert pgms == ["img_0_w1.pgm", "img_0_w2.pgm", "img_1_w1.pgm", "img_1_w2.pgm"]
    assert (tmp_path / "m" / "img_0_masks.png").exists()
    assert not (tmp_path / "m" / "img_1_masks.png").exists()
