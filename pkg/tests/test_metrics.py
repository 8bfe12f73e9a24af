import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egospeed.core import DisparityMap, FlowField, ScalarField
from egospeed.errors import ExtentMismatch, NoValidPixels
from egospeed.metrics import (
    DepthMetrics,
    FlowMetrics,
    aggregate,
    depth_metrics,
    disp_to_depth,
    flow_metrics,
    pooled_depth_metrics,
    pooled_flow_metrics,
)
from oracles import depth_metrics_ref, flow_metrics_ref, rel_close


def px(u, v=0.0):
    return FlowField(np.array([[u]]), np.array([[v]]))


def test_small_flow_three_pixel_error_is_outlier():
    m = flow_metrics(px(13.0), px(10.0))
    assert m.aepe == pytest.approx(3.0)
    assert m.fl_all == 1.0


def test_large_flow_three_pixel_error_is_within_five_percent():
    assert flow_metrics(px(103.0), px(100.0)).fl_all == 0.0


def test_just_below_three_pixels_is_inlier():
    assert flow_metrics(px(12.99), px(10.0)).fl_all == 0.0


def test_perfect_flow():
    f = FlowField(np.ones((3, 3)), -np.ones((3, 3)))
    assert flow_metrics(f, f) == FlowMetrics(0.0, 0.0, 9)


def test_invalid_gt_pixels_are_excluded_and_invalid_preds_count_as_zero():
    gvalid = np.array([[True, False]])
    gt = FlowField(np.array([[4.0, 50.0]]), np.zeros((1, 2)), gvalid)
    pred = FlowField(np.array([[9.0, 0.0]]), np.zeros((1, 2)), np.array([[False, True]]))
    m = flow_metrics(pred, gt)
    assert m.n_pixels == 1
    assert m.aepe == pytest.approx(4.0)


def test_flow_metric_errors():
    with pytest.raises(ExtentMismatch):
        flow_metrics(px(1.0), FlowField(np.zeros((1, 2)), np.zeros((1, 2))))
    with pytest.raises(NoValidPixels):
        flow_metrics(px(1.0), FlowField(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1), bool)))


def test_flow_metrics_match_naive_loop(rng):
    for _ in range(50):
        h, w = rng.integers(1, 17, size=2)
        gu, gv = rng.normal(0, 20, (h, w)), rng.normal(0, 20, (h, w))
        pu, pv = gu + rng.normal(0, 3, (h, w)), gv + rng.normal(0, 3, (h, w))
        gvalid = rng.random((h, w)) > 0.2
        gvalid[0, 0] = True
        m = flow_metrics(FlowField(pu, pv), FlowField(gu, gv, gvalid))
        aepe, fl = flow_metrics_ref(pu.tolist(), pv.tolist(), gu.tolist(), gv.tolist(), gvalid.tolist())
        assert rel_close(m.aepe, aepe) and rel_close(m.fl_all, fl)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2 * math.pi), st.integers(0, 10_000))
def test_flow_metrics_rotation_invariant(theta, seed):
    rng = np.random.default_rng(seed)
    gu, gv = rng.normal(0, 10, (4, 5)), rng.normal(0, 10, (4, 5))
    pu, pv = gu + rng.normal(0, 4, (4, 5)), gv + rng.normal(0, 4, (4, 5))
    c, s = math.cos(theta), math.sin(theta)

    def rot(u, v):
        return FlowField(c * u - s * v, s * u + c * v)

    a = flow_metrics(FlowField(pu, pv), FlowField(gu, gv))
    b = flow_metrics(rot(pu, pv), rot(gu, gv))
    assert b.aepe == pytest.approx(a.aepe, rel=1e-9)
    # compare epe with thresholds away from ties
    assert abs(b.fl_all - a.fl_all) <= 1 / 20 + 1e-12


def test_depth_doubled_prediction():
    gt = np.linspace(1, 80, 30).reshape(5, 6)
    m = depth_metrics(2 * gt, gt)
    assert m.abs_rel == pytest.approx(1.0, abs=1e-12)
    assert m.rmse_log == pytest.approx(math.log(2), abs=1e-12)
    assert m.scale_inv <= 1e-10
    assert m.log10 == pytest.approx(math.log10(2))


def test_depth_perfect_prediction():
    gt = np.full((2, 2), 7.0)
    m = depth_metrics(gt, gt)
    assert (m.rmse, m.rmse_log, m.abs_rel, m.sq_rel, m.log10, m.scale_inv) == (0, 0, 0, 0, 0, 0)


def test_depth_ignores_nonpositive():
    pred = np.array([[1.0, 0.0, 2.0]])
    gt = np.array([[1.0, 5.0, -1.0]])
    assert depth_metrics(pred, gt).n_pixels == 1
    with pytest.raises(NoValidPixels):
        depth_metrics(np.zeros((1, 1)), np.ones((1, 1)))


def test_depth_metrics_match_naive_loop(rng):
    for _ in range(50):
        h, w = rng.integers(1, 17, size=2)
        gt = rng.uniform(1, 80, (h, w))
        pred = gt * rng.uniform(0.5, 1.5, (h, w))
        pred[rng.random((h, w)) < 0.1] = 0.0
        pred[0, 0] = 3.0
        m = depth_metrics(pred, gt)
        ref = depth_metrics_ref(pred.tolist(), gt.tolist())
        for name in ("rmse", "rmse_log", "abs_rel", "sq_rel", "log10"):
            assert rel_close(getattr(m, name), ref[name]), name
        assert m.scale_inv == pytest.approx(max(ref["scale_inv"], 0.0), rel=1e-9, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100), st.integers(0, 10_000))
def test_scale_invariant_error_ignores_global_scale(c, seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(1, 50, (3, 4))
    pred = gt * rng.uniform(0.7, 1.3, (3, 4))
    a = depth_metrics(pred, gt).scale_inv
    b = depth_metrics(c * pred, gt).scale_inv
    assert b == pytest.approx(a, rel=1e-6, abs=1e-12)


def test_disp_to_depth_roundtrip():
    depth = np.array([[5.0, 10.0], [20.0, 40.0]])
    d = DisparityMap(721.5 * 0.54 / depth)
    back = disp_to_depth(d, 721.5, 0.54)
    assert np.allclose(back.values, depth, rtol=1e-12)
    zero = disp_to_depth(DisparityMap(np.array([[0.0, 0.005]])), 721.5, 0.54)
    assert not zero.valid.any()


def test_depth_accepts_disparity_and_scalar_fields():
    gt = ScalarField(np.full((2, 2), 4.0))
    assert depth_metrics(DisparityMap(np.full((2, 2), 4.0)), gt).rmse == 0.0


def test_aggregate_and_pooled():
    rows = [FlowMetrics(1.0, 0.0, 1), FlowMetrics(3.0, 1.0, 3)]
    assert aggregate(rows) == FlowMetrics(2.0, 0.5, 4)
    a = (px(13.0), px(10.0))
    b = (FlowField(np.zeros((1, 3)), np.zeros((1, 3))), FlowField(np.ones((1, 3)), np.zeros((1, 3))))
    pooled = pooled_flow_metrics([a, b])
    assert pooled.aepe == pytest.approx(6 / 4) and pooled.fl_all == pytest.approx(0.25)
    gt = np.full((1, 2), 2.0)
    dm = pooled_depth_metrics([(gt, gt), (2 * gt, gt)])
    assert isinstance(dm, DepthMetrics) and dm.abs_rel == pytest.approx(0.5)
    with pytest.raises(NoValidPixels):
        aggregate([])
