import filecmp

import numpy as np
import pytest

from sdcnet.density import FixedKernel, density_from_points, local_counts, point_counts
from sdcnet.synth import SynthConfig, SynthError, gen_dataset, gen_image, image_rng, read_pgm, write_pgm


def test_blank_config():
    img, pts = gen_image(SynthConfig(count_range=(0, 0)), image_rng(0, 0))
    assert img.shape == (1, 256, 256)
    assert len(pts) == 0
    assert img.max() < 0.2  # noise only


def test_closed_range_counts_exact():
    cfg = SynthConfig(count_range=(0, 10), seed=3)
    for i in range(20):
        img, pts = gen_image(cfg, image_rng(cfg.seed, i))
        assert 0 <= img.min() and img.max() <= 1
        c = point_counts(pts, 64).values
        assert c.shape == (4, 4)
        assert c.max() <= 10
        # the GT density integrates to the same integers at 64 px
        d = density_from_points(pts, FixedKernel(cfg.density_sigma))
        np.testing.assert_allclose(local_counts(d, 64).values, c, atol=1e-9)


def test_open_range_histogram_is_flat():
    cfg = SynthConfig(count_range=(0, 20), n_images=500, seed=7)
    counts = []
    for i in range(cfg.n_images):
        _, pts = gen_image(cfg, image_rng(cfg.seed, i))
        counts.append(point_counts(pts, 64).values.ravel())
    hist = np.bincount(np.concatenate(counts).astype(int), minlength=21)
    n, p = hist.sum(), 1 / 21
    assert n == 500 * 16 and hist.size == 21
    tol = 3 * np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(hist - n * p) <= tol), hist


def test_fine_cells_receive_fractional_counts():
    cfg = SynthConfig(count_range=(5, 10), seed=1)
    _, pts = gen_image(cfg, image_rng(1, 0))
    lc16 = local_counts(density_from_points(pts, FixedKernel(cfg.density_sigma)), 16).values
    assert np.any(np.abs(lc16 - np.round(lc16)) > 1e-3)


def test_infeasible_placement():
    with pytest.raises(SynthError):
        gen_image(SynthConfig(count_range=(0, 200), cell_radius_px=6), image_rng(0, 0))
    with pytest.raises(SynthError):
        SynthConfig(image_size=250)


def test_pgm_roundtrip(tmp_path, rng):
    img = np.round(rng.random((5, 7)) * 255) / 255
    write_pgm(img, tmp_path / "a.pgm")
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n7 5\n255\n")
    np.testing.assert_allclose(read_pgm(tmp_path / "a.pgm"), img, atol=1e-12)


def test_pgm_reader_comments_and_16bit(tmp_path):
    data = np.array([[0, 65535], [1000, 2]], dtype=">u2")
    (tmp_path / "b.pgm").write_bytes(b"P5\n# made by hand\n2 2\n65535\n" + data.tobytes())
    np.testing.assert_allclose(read_pgm(tmp_path / "b.pgm"), data / 65535)


def test_dataset_deterministic(tmp_path):
    tr = SynthConfig(n_images=3, seed=5)
    te = SynthConfig(n_images=2, count_range=(0, 20), seed=6)
    m = gen_dataset(tr, te, tmp_path / "a")
    gen_dataset(tr, te, tmp_path / "b")
    assert len(m["splits"]["train"]["items"]) == 3 and len(m["splits"]["test"]["items"]) == 2
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    files = ["manifest.json"] + [it["image"] for s in m["splits"].values() for it in s["items"]] + \
        [it["points"] for s in m["splits"].values() for it in s["items"]]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", files, shallow=False)
    assert not mismatch and not errors and len(match) == len(files)
    assert not cmp.left_only and not cmp.right_only
