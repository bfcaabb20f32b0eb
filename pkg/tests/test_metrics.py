import math

import numpy as np
import pytest

from depthsr.baselines import bicubic_sr, box_mean, guided_filter, guided_filter_sr
from depthsr.data import RgbdPair, make_sr_sample, synth_scene
from depthsr.imaging import ColorImage, DepthMap
from depthsr.metrics import PSNR_CAP, EvalReport, EvalRow, EvaluationError, evaluate, psnr, rmse


def test_rmse_hand_value():
    gt = DepthMap(np.zeros((2, 2)))
    pred = np.array([[0.01, 0.02], [0.0, 0.0]])
    # sqrt((1e-4 + 4e-4)/4) * 255 = 255 * sqrt(5)/200
    assert rmse(pred, gt) == pytest.approx(255 * math.sqrt(5) / 200, rel=1e-12)


def test_rmse_respects_valid_mask():
    gt = DepthMap(np.array([[0.5, 0.9]]), np.array([[True, False]]))
    assert rmse(np.array([[0.5, 0.0]]), gt) == 0.0


def test_psnr_values():
    gt = np.zeros((4, 4))
    assert psnr(np.full((4, 4), 0.5), gt) == pytest.approx(20 * math.log10(2), abs=1e-4)
    assert psnr(np.full((4, 4), 0.5), gt) == pytest.approx(6.0206, abs=1e-4)
    assert psnr(gt, gt) == math.inf


def test_report_averages_recompute(tmp_path):
    rows = [EvalRow("a", 4, 1.0, 30.0, 0.1), EvalRow("b", 4, 3.0, 20.0, 0.2),
            EvalRow("c", 2, 5.0, 10.0, 0.3)]
    rep = EvalReport.from_rows(rows, "abc", "bicubic")
    assert rep.averages == {2: (5.0, 10.0), 4: (2.0, 25.0)}
    rep.write_csv(tmp_path / "r.csv")
    back = EvalReport.read_csv(tmp_path / "r.csv")
    assert back.averages == rep.averages
    assert [r.source_id for r in back.per_image] == ["a", "b", "c"]
    assert "bicubic" in rep.summary()


def test_evaluate_bicubic_on_constants_is_exact():
    pair = RgbdPair(ColorImage(np.full((64, 64, 3), 0.3)), DepthMap(np.full((64, 64), 0.6)), "flat")
    rep = evaluate(bicubic_sr, [make_sr_sample(pair, 4)], name="bicubic")
    row = rep.per_image[0]
    assert row.rmse == 0 and row.psnr == PSNR_CAP and row.psnr_infinite


def test_evaluate_wraps_failures():
    s = make_sr_sample(synth_scene(0), 2)

    def broken(sample):
        raise RuntimeError("boom")

    with pytest.raises(EvaluationError, match="synth00000"):
        evaluate(broken, [s])
    with pytest.raises(ValueError):
        evaluate(bicubic_sr, [])


# --- baselines ---------------------------------------------------------------

def box_oracle(img, r):
    h, w = img.shape
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            out[y, x] = img[max(0, y - r):y + r + 1, max(0, x - r):x + r + 1].mean()
    return out


def test_box_mean_matches_loops(rng):
    img = rng.random((9, 13))
    np.testing.assert_allclose(box_mean(img, 2), box_oracle(img, 2), atol=1e-12)


def test_guided_filter_self_guidance_limit(rng):
    img = rng.random((32, 32))
    out = guided_filter(img, img, radius=2, eps=1e-8)
    assert np.abs(out - img).max() < 1e-3


def test_guided_filter_constant_source(rng):
    out = guided_filter(rng.random((24, 24)), np.full((24, 24), 0.4), radius=3, eps=1e-3)
    np.testing.assert_allclose(out, 0.4, atol=1e-12)


def test_guided_filter_large_eps_is_double_box(rng):
    src = rng.random((20, 20))
    out = guided_filter(rng.random((20, 20)), src, radius=2, eps=1e12)
    np.testing.assert_allclose(out, box_mean(box_mean(src, 2), 2), atol=1e-9)


def test_guided_filter_guide_scale_invariance(rng):
    guide, src = rng.random((2, 20, 20))
    a = guided_filter(guide, src, 3, 1e-4)
    b = guided_filter(4.0 * guide, src, 3, 16e-4)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_guided_filter_validation(rng):
    with pytest.raises(ValueError):
        guided_filter(np.zeros((8, 8)), np.zeros((8, 9)))
    with pytest.raises(ValueError):
        guided_filter(np.zeros((8, 8)), np.zeros((8, 8)), radius=0)
    with pytest.raises(ValueError):
        guided_filter(np.zeros((8, 8)), np.zeros((8, 8)), radius=2, eps=0)


def test_baselines_sr_outputs():
    s = make_sr_sample(synth_scene(4), 4)
    for out in (bicubic_sr(s), guided_filter_sr(s, 4, 1e-3)):
        assert out.shape == (64, 64)
        assert out.values.min() >= 0 and out.values.max() <= 1
