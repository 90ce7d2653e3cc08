import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from latemvs.cost_volume import DepthHypotheses, PairwiseCostVolume
from latemvs.metrics import (
    MetricsReport,
    clean_suite,
    cloud_metrics,
    compare_strategies,
    depth_accuracy,
    preservation_ratio,
)
from latemvs.pipeline import CascadeConfig, DepthEstimate

D = 4


def row_hyps(W, lo=10.0):
    return DepthHypotheses(np.broadcast_to(lo + np.arange(D, dtype=float), (1, W, D)).copy(), 1.0)


def peaked(bins):
    """1×W pairwise volume with its depth argmax at ``bins[x]``."""
    v = np.zeros((1, len(bins), D), np.float32)
    v[0, np.arange(len(bins)), bins] = 1.0
    return PairwiseCostVolume(v, np.ones(v.shape, bool))


def ratio_oracle(argmax_bins, final, gt, lo=10.0):
    informative = preserved = 0
    for x in range(len(gt)):
        b = int(np.argmin([abs(lo + j - gt[x]) for j in range(D)]))
        if abs(lo + b - gt[x]) > 0.5 or not any(a[x] == b for a in argmax_bins):
            continue
        informative += 1
        preserved += abs(final[x] - (lo + b)) <= 0.5
    return (preserved / informative if informative else None), informative


class TestPreservationRatio:
    def test_all_preserved(self):
        gt = np.array([[10.0, 11, 12, 13]])
        r = preservation_ratio([peaked([0, 1, 2, 3])], gt, gt, row_hyps(4))
        assert r.ratio == 1.0 and r.informative == 4

    def test_four_pixel_case(self):
        gt = np.array([[11.0, 12, 10, 13]])
        final = np.array([[11.2, 13.0, 10.0, 13.0]])
        vols = [peaked([1, 2, 3, 0])]  # pixels 0 and 1 informative
        r = preservation_ratio(vols, final, gt, row_hyps(4))
        assert (r.ratio, r.informative, r.preserved) == (0.5, 2, 1)

    def test_exhaustive_four_pixels(self):
        # every argmax assignment × in/out-of-bin final depth, against the loop oracle
        gt = np.array([11.0, 12, 10, 13])
        hyps = row_hyps(4)
        for bins in itertools.product(range(D), repeat=4):
            for hit in itertools.product((0.0, 0.7), repeat=4):
                final = gt + np.array(hit)
                r = preservation_ratio([peaked(list(bins))], final[None], gt[None], hyps)
                ratio, n = ratio_oracle([bins], final, gt)
                assert r.informative == n and r.ratio == ratio

    def test_undefined(self):
        gt = np.array([[11.0, 12]])
        r = preservation_ratio([peaked([0, 0])], gt, gt, row_hyps(2))
        assert r.ratio is None and not r.defined

    def test_any_view_counts(self):
        gt = np.array([[11.0]])
        r = preservation_ratio([peaked([3]), peaked([1])], gt, gt, row_hyps(1))
        assert r.informative == 1

    def test_gt_outside_bins_ignored(self):
        gt = np.array([[30.0]])
        assert preservation_ratio([peaked([3])], gt, gt, row_hyps(1)).informative == 0

    def test_estimate_input(self):
        gt = np.array([[11.0, 12]])
        est = DepthEstimate(gt.copy(), np.ones_like(gt), np.ones(gt.shape, bool))
        assert preservation_ratio([peaked([1, 2])], est, gt, row_hyps(2)).ratio == 1.0

    @given(st.lists(st.tuples(st.integers(0, D - 1), st.booleans()), min_size=1, max_size=12), st.data())
    def test_in_unit_interval_and_monotone(self, cells, data):
        W = len(cells)
        gt = 10.0 + np.arange(W) % D
        bins = [b for b, _ in cells]
        final = gt + np.array([0.0 if ok else 0.9 for _, ok in cells])
        hyps = row_hyps(W)
        r = preservation_ratio([peaked(bins)], final[None], gt[None], hyps)
        if not r.defined:
            return
        assert 0.0 <= r.ratio <= 1.0
        # correcting the prediction at an informative pixel never lowers the ratio
        idx = data.draw(st.integers(0, W - 1))
        fixed = final.copy()
        fixed[idx] = gt[idx]
        assert preservation_ratio([peaked(bins)], fixed[None], gt[None], hyps).ratio >= r.ratio


class TestDepthAccuracy:
    def test_exact(self):
        gt = np.full((4, 4), 5.0)
        assert depth_accuracy(gt, gt, 0.1).fraction == 1.0

    def test_half_offset(self):
        gt = np.full((4, 4), 5.0)
        pred = gt.copy()
        pred[:2] += 2 * 0.25
        assert depth_accuracy(pred, gt, 0.25).fraction == 0.5

    def test_threshold_inclusive(self):
        assert depth_accuracy(np.array([1.5]), np.array([1.0]), 0.5).fraction == 1.0

    def test_undefined(self):
        r = depth_accuracy(np.ones((2, 2)), np.zeros((2, 2)), 1.0)
        assert r.fraction is None and not r.defined

    def test_invalid_prediction_is_a_miss(self):
        gt = np.full((1, 2), 5.0)
        est = DepthEstimate(gt.copy(), np.ones_like(gt), np.array([[True, False]]))
        assert depth_accuracy(est, gt, 0.1).fraction == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            depth_accuracy(np.ones((2, 2)), np.ones((2, 3)), 1.0)


class TestCloudMetrics:
    def test_identical(self):
        x = np.random.default_rng(0).normal(size=(50, 3))
        m = cloud_metrics(x, x, 1.0)
        assert (m.accuracy, m.completeness, m.overall) == (0.0, 0.0, 0.0)

    def test_outlier_closed_form(self):
        g = np.random.default_rng(1).uniform(0, 1, (40, 3))
        cap = 2.0
        p = np.vstack([g, [[100.0, 0, 0]]])
        m = cloud_metrics(p, g, cap)
        assert m.accuracy == pytest.approx(cap / (len(g) + 1), abs=1e-12)
        assert m.completeness == 0.0

    def test_swap(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(30, 3)), rng.normal(size=(45, 3)) + 0.3
        m, s = cloud_metrics(a, b, 5.0), cloud_metrics(b, a, 5.0)
        assert (m.accuracy, m.completeness) == (s.completeness, s.accuracy)
        assert m.overall == pytest.approx(0.5 * (m.accuracy + m.completeness))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(60, 3)), rng.normal(size=(70, 3))
        d = np.linalg.norm(a[:, None] - b[None], axis=-1)
        m = cloud_metrics(a, b, 0.8)
        assert m.accuracy == pytest.approx(np.minimum(d.min(1), 0.8).mean())
        assert m.completeness == pytest.approx(np.minimum(d.min(0), 0.8).mean())

    def test_errors(self):
        with pytest.raises(ValueError):
            cloud_metrics(np.zeros((0, 3)), np.zeros((3, 3)), 1.0)
        with pytest.raises(ValueError):
            cloud_metrics(np.zeros((2, 3)), np.zeros((3, 3)), 0.0)


def test_report_round_trip(tmp_path):
    rep = MetricsReport("s", "early_weighted", CascadeConfig().to_dict(), 0.5, 10, 0.25, 0.9, 1.0, 0.3, 0.4, 0.35)
    rep.write(tmp_path / "r.json")
    assert MetricsReport.read(tmp_path / "r.json") == MetricsReport.from_dict(rep.to_dict())
    back = MetricsReport.read(tmp_path / "r.json")
    assert back.to_dict() == rep.to_dict()


def test_report_version_checked():
    d = MetricsReport("s", "x", {}, None, 0, None, None, 1.0).to_dict()
    d["version"] = 99
    with pytest.raises(ValueError):
        MetricsReport.from_dict(d)


# measured once on the clean suite with the default cascade; see the decisions log
CLEAN_RATIOS = {
    "early_variance": 0.31987,
    "early_weighted": 0.83585,
    "late_preserved/mean": 0.79548,
    "late_preserved/best_peak": 0.69774,
    "late_preserved/entropy_weighted": 0.80210,
}


@pytest.fixture(scope="module")
def clean_table():
    return compare_strategies(clean_suite(), list(CLEAN_RATIOS))


class TestCompare:
    def test_report_echoes_config(self, clean_table):
        for r in clean_table.reports:
            cfg = CascadeConfig.from_dict(r.config)
            assert cfg.aggregation.label == r.strategy
            assert set(r.config) == set(CascadeConfig().to_dict())
            assert r.measured_stage

    def test_clean_suite_frozen(self, clean_table):
        s = clean_table.summary()
        for name, ratio in CLEAN_RATIOS.items():
            assert s[name]["preservation_ratio"] == pytest.approx(ratio, abs=1e-4)
            assert s[name]["scenes"] == 3

    @pytest.mark.xfail(strict=True, reason="clean-suite ratios spread by more than 0.05; see decisions log")
    def test_clean_suite_ratios_close(self, clean_table):
        vals = [v["preservation_ratio"] for v in clean_table.summary().values()]
        assert max(vals) - min(vals) <= 0.05

    def test_fractions_in_range(self, clean_table):
        for r in clean_table.reports:
            for v in (r.preservation_ratio, r.preservation_ratio_aggregated, r.depth_accuracy):
                assert v is None or 0.0 <= v <= 1.0 and not math.isnan(v)

    def test_rows_and_files(self, clean_table, tmp_path):
        from latemvs import io

        clean_table.write(tmp_path / "r.json", tmp_path / "t.csv")
        rows = io.read_csv(tmp_path / "t.csv")
        assert len(rows) == 15 and rows[0]["scene"] == "fronto_60"
        assert io.load_json(tmp_path / "r.json")["summary"].keys() == set(CLEAN_RATIOS)
