import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from latemvs.cost_volume import PairwiseCostVolume
from latemvs.flex_views import (
    baseline_gaussian,
    fuse_by_confidence,
    pad_fewer_views,
    plan_iterations,
    run_flexible,
    usefulness_scores,
)
from latemvs.geometry import Camera, look_at
from latemvs.pipeline import CascadeConfig, DepthEstimate, run_cascade
from latemvs.scene import CameraRig, SceneDefinition, fronto_plane, render_rig, sample_gt_cloud

REF = Camera(CameraRig().intrinsics, look_at((0, 0, 0), (0, 0, 60)), 160, 128)


def cam_at_angle(deg):
    # on a circle around the target so the angle at the target is exactly ``deg``
    a = np.radians(deg)
    c = np.array([60 * np.sin(a), 0.0, 60 - 60 * np.cos(a)])
    return Camera(REF.intrinsics, look_at(c, (0, 0, 60)), 160, 128)


class TestScores:
    def test_gaussian_shape(self):
        assert baseline_gaussian(5.0) == 1.0
        assert baseline_gaussian(4.0) == pytest.approx(np.exp(-0.5))
        assert baseline_gaussian(15.0) == pytest.approx(np.exp(-0.5))

    def test_coincident_source_scores_low(self):
        pts = np.array([[0.0, 0.0, 60.0], [1.0, 2.0, 61.0]])
        s = usefulness_scores(REF, [REF, cam_at_angle(5.0)], pts)
        assert s[0] < s[1]

    def test_5_vs_40_degrees(self):
        pts = np.array([[0.0, 0.0, 60.0]])
        s = usefulness_scores(REF, [cam_at_angle(5.0), cam_at_angle(40.0)], pts)
        assert s[0] == pytest.approx(1.0) and s[1] == pytest.approx(np.exp(-(35.0**2) / 200.0))

    def test_order_independent(self):
        pts = sample_gt_cloud(SceneDefinition((fronto_plane(60.0, half_size=10),)), 0.5)
        srcs = [cam_at_angle(a) for a in (3, 8, 20)]
        a = usefulness_scores(REF, srcs, pts)
        b = usefulness_scores(REF, srcs, pts[np.random.default_rng(0).permutation(len(pts))])
        assert np.array_equal(a, b)

    def test_empty_anchor_set(self):
        with pytest.raises(ValueError):
            usefulness_scores(REF, [REF], np.zeros((0, 3)))


class TestPlan:
    def test_examples(self):
        assert len(plan_iterations(np.arange(6.0), 5, 7)) == 3
        assert len(plan_iterations(np.arange(8.0), 5, 9)) == 5

    def test_contract(self):
        scores = [0.3, 0.9, 0.1, 0.9, 0.5, 0.2]
        plan = plan_iterations(scores, 5, 7)
        assert plan.fixed_set == (1, 3, 4)  # tie 0.9/0.9 -> lower id first
        assert [it[-1] for it in plan.iterations] == [0, 5, 2]  # descending score
        assert all(len(it) == 4 and it[:3] == plan.fixed_set for it in plan.iterations)

    def test_exhaustive_size_law(self):
        rng = np.random.default_rng(0)
        for n in range(3, 12):
            for n2 in range(n + 1, 13):
                scores = rng.random(n2 - 1)
                plan = plan_iterations(scores, n, n2)
                assert len(plan) == n2 - n + 1
                rotating = [it[-1] for it in plan.iterations]
                assert sorted(rotating + list(plan.fixed_set)) == list(range(n2 - 1))
                assert all(len(it) == n - 1 for it in plan.iterations)

    @pytest.mark.parametrize("n,n2", [(5, 5), (5, 4), (2, 4)])
    def test_errors(self, n, n2):
        with pytest.raises(ValueError):
            plan_iterations(np.ones(max(n2 - 1, 1)), n, n2)

    @given(st.lists(st.floats(0, 10), min_size=4, max_size=11), st.integers(3, 5))
    def test_fixed_are_top(self, scores, n):
        n2 = len(scores) + 1
        if n2 <= n:
            return
        plan = plan_iterations(scores, n, n2)
        worst_fixed = min(scores[i] for i in plan.fixed_set)
        assert all(scores[it[-1]] <= worst_fixed for it in plan.iterations)


def _vols(n, rng):
    return [PairwiseCostVolume(rng.standard_normal((2, 3, 4)).astype(np.float32), rng.random((2, 3, 4)) > 0.1, i) for i in range(n)]


class TestPad:
    @pytest.mark.parametrize("n2,dups", [(3, 2), (4, 1)])
    def test_duplicates(self, n2, dups):
        rng = np.random.default_rng(n2)
        vols = _vols(n2 - 1, rng)
        scores = rng.random(n2 - 1)
        out = pad_fewer_views(vols, scores, 5)
        assert len(out) == 4 and out[: n2 - 1] == vols
        top = vols[int(np.argmax(scores))]
        for v in out[n2 - 1 :]:
            assert np.array_equal(v.values, top.values) and np.array_equal(v.validity, top.validity)

    def test_error(self):
        with pytest.raises(ValueError):
            pad_fewer_views(_vols(4, np.random.default_rng(0)), np.ones(4), 5)


def est(depth, conf):
    depth = np.asarray(depth, float)
    return DepthEstimate(depth, np.asarray(conf, float), depth > 0)


class TestFuse:
    def test_identity(self):
        e = est([[1.0, 2.0]], [[0.3, 0.7]])
        f = fuse_by_confidence([e])
        assert np.array_equal(f.depth, e.depth) and np.array_equal(f.confidence, e.confidence)

    def test_per_pixel_argmax(self):
        f = fuse_by_confidence([est([[1.0, 1.0]], [[0.9, 0.2]]), est([[2.0, 2.0]], [[0.1, 0.8]])])
        assert f.depth.tolist() == [[1.0, 2.0]] and f.confidence.tolist() == [[0.9, 0.8]]

    def test_ties_first(self):
        f = fuse_by_confidence([est([[1.0]], [[0.5]]), est([[2.0]], [[0.5]])])
        assert f.depth[0, 0] == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            fuse_by_confidence([])

    def test_confidence_is_max(self):
        rng = np.random.default_rng(1)
        ests = [est(rng.random((4, 5)) + 1, rng.random((4, 5))) for _ in range(3)]
        f = fuse_by_confidence(ests)
        assert np.array_equal(f.confidence, np.max([e.confidence for e in ests], axis=0))


@pytest.fixture(scope="module")
def seven_views():
    scene = SceneDefinition((fronto_plane(60.0),), seed=0)
    rig = CameraRig(count=7)
    return scene, rig, render_rig(scene, rig)


class TestRunFlexible:
    def test_same_count_is_plain_run(self, fronto):
        v = fronto.views
        imgs, cams = [x.image for x in v], [x.camera for x in v]
        plain = run_cascade(imgs, cams, CascadeConfig(), fronto.rig.depth_min)
        flex = run_flexible(imgs, cams, CascadeConfig(), fronto.rig.depth_min, scores=np.ones(4))
        assert flex.mode == "direct"
        assert flex.estimate.depth.tobytes() == plain.final.depth.tobytes()
        assert flex.estimate.confidence.tobytes() == plain.final.confidence.tobytes()

    def test_more_views_iterates(self, seven_views):
        scene, rig, views = seven_views
        anchors = sample_gt_cloud(scene, 0.05)
        res = run_flexible([v.image for v in views], [v.camera for v in views], CascadeConfig(), rig.depth_min, anchor_points=anchors)
        assert res.mode == "iterated" and len(res.runs) == 3 and len(res.plan) == 3
        assert np.array_equal(res.estimate.confidence, np.max([r.final.confidence for r in res.runs], axis=0))
        assert res.manifest["flex"]["plan"]["fixed"] == list(res.plan.fixed_set)
        for r in res.runs:
            assert r.manifest["shapes"]["view_preserved"][-1][-1] == 4

    def test_fewer_views_pads(self, fronto):
        v = fronto.views[:3]
        res = run_flexible([x.image for x in v], [x.camera for x in v], CascadeConfig(), fronto.rig.depth_min, scores=[2.0, 1.0])
        assert res.mode == "padded"
        assert res.runs[0].manifest["shapes"]["view_preserved"][0][-1] == 4
