import math

import numpy as np
import pytest

from splatedit.metrics import MetricReport, amcr, psnr
from splatedit.ssim import d_ssim, ssim


def test_psnr_identical_is_inf(rng):
    a = rng.uniform(0, 1, (16, 16, 3))
    assert math.isinf(psnr(a, a.copy()))


def test_psnr_uniform_difference():
    a = np.zeros((10, 10, 3))
    b = np.full((10, 10, 3), 0.1)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_masked_hand_case():
    a = np.zeros((10, 10, 3))
    b = np.zeros((10, 10, 3))
    mask = np.zeros((10, 10), bool)
    mask[:5] = True
    b[mask] = 0.1
    assert psnr(a, b, mask) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a, b) == pytest.approx(10 * math.log10(1 / 0.005), abs=1e-6)


def test_psnr_symmetric(rng):
    a = rng.uniform(0, 1, (12, 12))
    b = rng.uniform(0, 1, (12, 12))
    assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)


def test_ssim_self_and_symmetry(rng):
    a = rng.uniform(0, 1, (24, 24, 3))
    b = rng.uniform(0, 1, (24, 24, 3))
    assert ssim(a, a) == 1.0
    assert d_ssim(a, a) == 0.0
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_agrees_with_reference_implementation(rng):
    skimage = pytest.importorskip("skimage.metrics")
    for _ in range(4):
        a = rng.uniform(0, 1, (28, 36, 3))
        b = np.clip(a + rng.normal(scale=0.15, size=a.shape), 0, 1)
        ref = skimage.structural_similarity(
            a, b, channel_axis=2, data_range=1.0, gaussian_weights=True,
            sigma=1.5, use_sample_covariance=False)
        assert ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_masked_metrics_with_full_mask_match_unmasked(rng):
    a = rng.uniform(0, 1, (24, 24, 3))
    b = np.clip(a + rng.normal(scale=0.05, size=a.shape), 0, 1)
    full = np.ones((24, 24), bool)
    assert psnr(a, b, full) == pytest.approx(psnr(a, b), abs=1e-9)
    assert ssim(a, b, full) == pytest.approx(ssim(a, b), abs=1e-9)


def test_amcr_hand_cases():
    zero = np.zeros((10, 10), np.int32)
    assert amcr([zero]) == 0.0
    half = np.zeros((10, 10), np.int32)
    half[:5] = 1
    assert amcr([half]) == pytest.approx(50.0)
    quarter = np.zeros((20, 20), np.int32)
    quarter[:5] = 1
    three_q = np.zeros((20, 20), np.int32)
    three_q[:15] = 1
    assert amcr([quarter, three_q]) == pytest.approx(50.0)


def test_amcr_bounds_and_linearity(rng):
    masks = [rng.uniform(size=(8, 8)) > rng.uniform() for _ in range(5)]
    v = amcr(masks)
    assert 0.0 <= v <= 100.0
    assert v == pytest.approx(np.mean([100.0 * m.mean() for m in masks]))


def test_metric_report_json_csv(rng):
    a = rng.uniform(0, 1, (24, 24, 3))
    b = np.clip(a + 0.02, 0, 1)
    mask = np.zeros((24, 24), bool)
    mask[4:12, 4:12] = True
    rep = MetricReport()
    rep.add_view("v0", a, b, mask)
    rep.add_view("v1", a, a, mask)
    agg = rep.aggregate()
    assert set(agg) >= {"psnr", "ssim", "masked_psnr", "masked_ssim"}
    js = rep.to_json()
    assert '"inf"' in js  # identical pair serializes the sentinel
    csv_text = rep.to_csv()
    assert csv_text.splitlines()[0].startswith("view,psnr")
    assert "aggregate" in csv_text
