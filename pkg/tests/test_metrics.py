import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nestsr.metrics import (
    LF_BASELINE,
    EvalReport,
    MetricConfig,
    evaluate,
    gaussian_window,
    psnr,
    ssim,
)
from nestsr.tensor import DimensionError

from .oracles import psnr_ref, ssim_ref

UNIT = MetricConfig(psnr_peak=1.0)


def test_psnr_identical_is_inf(rng):
    x = rng.normal(size=(8, 8))
    assert psnr(x, x) == math.inf


def test_psnr_twenty_db():
    gt = np.zeros((10, 10))
    pred = gt + 0.1
    assert psnr(pred, gt, UNIT) == pytest.approx(20.0, abs=1e-9)


def test_psnr_halved_error_adds_6db(rng):
    gt = rng.uniform(size=(16, 16))
    err = rng.normal(scale=0.05, size=(16, 16))
    gain = psnr(gt + err / 2, gt) - psnr(gt + err, gt)
    assert abs(gain - 10 * math.log10(4)) <= 1e-6
    assert abs(gain - 6.0206) <= 1e-4


def test_psnr_default_peak_is_gt_range(rng):
    gt = rng.uniform(2, 5, size=(12, 12))
    pred = gt + rng.normal(scale=0.1, size=gt.shape)
    assert psnr(pred, gt) == pytest.approx(psnr_ref(pred, gt), abs=1e-9)


def test_psnr_shape_mismatch():
    with pytest.raises(DimensionError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_identical_is_one(rng):
    x = rng.uniform(size=(20, 24))
    assert abs(ssim(x, x) - 1.0) <= 1e-9


def test_ssim_constant_pair_matches_reference():
    gt, pred = np.zeros((16, 16)), np.full((16, 16), 0.1)
    v = ssim(pred, gt)
    assert v == pytest.approx(ssim_ref(pred, gt), abs=1e-12)
    c1 = 0.01**2
    assert v == pytest.approx(c1 / (0.01 + c1), rel=1e-12)


def test_metrics_match_scalar_references_on_random_pairs(rng):
    for _ in range(10):
        gt = rng.uniform(-0.5, 0.5, size=(16, 18))
        pred = np.clip(gt + rng.normal(scale=0.1, size=gt.shape), -0.5, 0.5)
        assert abs(ssim(pred, gt) - ssim_ref(pred, gt)) <= 1e-6
        assert abs(psnr(pred, gt) - psnr_ref(pred, gt)) <= 1e-6


def test_ssim_other_constants_match_reference(rng):
    cfg = MetricConfig(ssim_window=7, ssim_sigma=1.0, ssim_dynamic_range=2.0)
    a, b = rng.normal(size=(12, 12)), rng.normal(size=(12, 12))
    assert ssim(a, b, cfg) == pytest.approx(ssim_ref(a, b, 7, 1.0, L=2.0), abs=1e-9)


def test_ssim_too_small():
    with pytest.raises(DimensionError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))


def test_gaussian_window_normalized_and_symmetric():
    g = gaussian_window(11, 1.5)
    assert g.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(g, g[::-1])
    assert g.argmax() == 5


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), noise=st.floats(0.0, 2.0))
def test_ssim_symmetric_and_bounded(seed, noise):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(14, 14))
    b = a + rng.normal(scale=noise, size=a.shape)
    s = ssim(a, b)
    assert abs(s - ssim(b, a)) <= 1e-12
    assert -1.0 <= s <= 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(-100, 100))
def test_psnr_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(size=(8, 8))
    pred = gt + rng.normal(scale=0.1, size=gt.shape)
    assert psnr(pred + c, gt + c, UNIT) == pytest.approx(psnr(pred, gt, UNIT), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), shrink=st.floats(0.0, 1.0))
def test_psnr_monotone_in_error(seed, shrink):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(size=(8, 8))
    err = rng.normal(scale=0.1, size=gt.shape)
    small = err * rng.uniform(0, shrink, size=gt.shape)
    if not small.any():
        return
    assert psnr(gt + small, gt, UNIT) >= psnr(gt + err, gt, UNIT)


def test_evaluate_identity_method(rng):
    gts = [rng.uniform(size=(16, 16)) for _ in range(3)]
    report = evaluate({"identity": gts}, gts)
    row = report.row("identity")
    assert row.n == 3 and row.n_inf == 3 and row.psnr_mean == math.inf
    assert row.ssim_mean == pytest.approx(1.0, abs=1e-9)
    csv = report.to_csv()
    assert "identity,3,inf,0.000000,1.000000,0.000000" in csv
    assert "# identity: 3 of 3 images had infinite PSNR" in csv


def test_evaluate_rows_sorted_with_baseline(rng):
    gts = [rng.uniform(size=(16, 16)) for _ in range(4)]
    noisy = [g + rng.normal(scale=0.05, size=g.shape) for g in gts]
    better = [g + rng.normal(scale=0.01, size=g.shape) for g in gts]
    report = evaluate({"SR U-Net++": better, "SR U-Net": noisy}, gts, baseline=noisy)
    assert [r.method for r in report.rows] == sorted(["SR U-Net++", "SR U-Net", LF_BASELINE])
    lines = report.to_csv().splitlines()
    assert lines[0] == EvalReport.HEADER
    assert len(lines) == 4
    assert report.row("SR U-Net++").psnr_mean > report.row(LF_BASELINE).psnr_mean
    for line in lines[1:]:
        for field in line.split(",")[2:]:
            assert len(field.split(".")[1]) == 6
    assert len(report.per_image_csv().splitlines()) == 1 + 3 * 4


def test_report_is_byte_deterministic(rng):
    gts = [rng.uniform(size=(16, 16)) for _ in range(3)]
    preds = [g + 0.01 for g in gts]
    a = evaluate({"m": preds}, gts, baseline=preds)
    b = evaluate({"m": [p.copy() for p in preds]}, [g.copy() for g in gts], baseline=preds)
    assert a.to_csv() == b.to_csv()
    assert a.per_image_csv() == b.per_image_csv()


def test_evaluate_empty_set():
    with pytest.raises(ValueError):
        evaluate({"m": []}, [])


def test_evaluate_count_mismatch(rng):
    with pytest.raises(ValueError):
        evaluate({"m": [np.zeros((16, 16))]}, [np.zeros((16, 16))] * 2)


def test_metric_config_invariants():
    with pytest.raises(ValueError):
        MetricConfig(ssim_window=10)
    with pytest.raises(ValueError):
        MetricConfig(ssim_k1=0)
    assert MetricConfig.for_range(-0.5, 0.5).ssim_dynamic_range == 1.0
