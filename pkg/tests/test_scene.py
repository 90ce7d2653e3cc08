import numpy as np
import pytest

from latemvs.geometry import project_points
from latemvs.scene import (
    Box,
    CameraRig,
    Rect,
    SceneDefinition,
    SceneError,
    Texture,
    fronto_plane,
    make_occlusion_case,
    read_scene_file,
    render_view,
    sample_gt_cloud,
    slanted_plane,
    write_scene_file,
)

RIG = CameraRig()


def test_fronto_plane_constant_depth():
    cam = RIG.cameras()[0]  # on the optical axis of the plane
    v = render_view(SceneDefinition((fronto_plane(60.0),)), cam, supersample=1)
    assert np.all(v.gt_depth == pytest.approx(60.0, abs=1e-9))


def test_slanted_plane_closed_form():
    a, b = 60.0, 0.5
    cam = RIG.cameras()[0]
    v = render_view(SceneDefinition((slanted_plane(a, b),)), cam, supersample=1)
    # camera at (0,0,0) looking down +z: ray (x', y', 1)·t hits z = a + b·x at t = a / (1 − b·x')
    K = cam.intrinsics
    vv, uu = np.mgrid[0 : cam.height, 0 : cam.width].astype(float)
    xr = (uu - K.cx) / K.fx
    expected = a / (1.0 - b * xr)
    hit = v.gt_depth > 0
    assert hit.mean() > 0.99
    assert np.max(np.abs(v.gt_depth[hit] - expected[hit])) < 1e-9


def test_empty_frustum_region():
    cam = RIG.cameras()[0]
    scene = SceneDefinition((fronto_plane(60.0, half_size=5.0),), background=0.25)
    v = render_view(scene, cam, supersample=1)
    assert v.gt_depth[0, 0] == 0.0 and v.image[0, 0] == 0.25
    assert v.gt_depth.min() >= 0 and np.all((v.gt_depth > 0) == (v.primitive_index >= 0))


def test_render_deterministic():
    scene = SceneDefinition((fronto_plane(60.0),), seed=4)
    a = render_view(scene, RIG.cameras()[1])
    b = render_view(scene, RIG.cameras()[1])
    assert a.image.tobytes() == b.image.tobytes() and a.gt_depth.tobytes() == b.gt_depth.tobytes()


def test_texture_seed_changes_image():
    cam = RIG.cameras()[0]
    a = render_view(SceneDefinition((fronto_plane(60.0),), seed=1), cam, supersample=1)
    b = render_view(SceneDefinition((fronto_plane(60.0),), seed=2), cam, supersample=1)
    assert not np.array_equal(a.image, b.image)
    assert 0.0 <= a.image.min() and a.image.max() <= 1.0


def test_cross_view_consistency(fronto):
    """A reference pixel pushed through its GT depth lands on the same surface point in the source."""
    ref, src = fronto.views[0], fronto.views[2]
    H, W = ref.gt_depth.shape
    rng = np.random.default_rng(0)
    ys, xs = rng.integers(0, H, 300), rng.integers(0, W, 300)
    us, vs, zs = project_points(xs.astype(float), ys.astype(float), ref.gt_depth[ys, xs], ref.camera, src.camera)
    inside = src.camera.in_bounds(us, vs)
    assert inside.sum() > 200
    # cast the source ray through the exact sub-pixel location; its hit depth must equal z
    K = src.camera.intrinsics
    d_cam = np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy, np.ones_like(us)], -1)[inside]
    dirs = d_cam @ src.camera.pose.R
    t, _ = fronto.scene.cast(np.broadcast_to(src.camera.center, dirs.shape).copy(), dirs)
    assert np.max(np.abs(t - zs[inside])) < 1e-6
    # and the nearest source pixel is within half a pixel
    assert np.all(np.abs(us[inside] - np.rint(us[inside])) <= 0.5)


class TestOcclusionCase:
    @pytest.mark.parametrize("count", [0, 1, 2, 3])
    def test_exact_occluded_count(self, count):
        scene, rig = make_occlusion_case(5, occluder_count=count)
        views = [render_view(scene, c, supersample=1) for c in rig.cameras()]
        c = np.array(scene.meta["region_center"])
        h = scene.meta["region_half"]
        g = np.linspace(-h, h, 7)
        pts = np.array([[c[0] + x, c[1] + y, c[2]] for x in g for y in g])
        occluded = 0
        for v in views[1:]:
            u, vv, z = v.camera.project_world(pts)
            qx, qy = np.rint(u).astype(int), np.rint(vv).astype(int)
            assert v.camera.in_bounds(qx, qy).all()
            # background depth along those rays vs rendered depth
            hidden = v.gt_depth[qy, qx] < z - 1.0
            assert hidden.all() or not hidden.any()
            occluded += int(hidden.all())
        assert occluded == count
        assert np.all(views[0].primitive_index == 0)

    def test_deterministic(self):
        a = make_occlusion_case(3, occluder_count=2)
        b = make_occlusion_case(3, occluder_count=2)
        assert a[0] == b[0] and a[1] == b[1]

    def test_infeasible(self):
        with pytest.raises(SceneError):
            make_occlusion_case(0, occluder_count=4, n_sources=4)


class TestGtCloud:
    def test_unit_plane(self):
        r = Rect((0, 0, 5), (1, 0, 0), (0, 1, 0), 0.5, 0.5)
        pts = sample_gt_cloud(SceneDefinition((r,)), 100)
        assert len(pts) == 100 and np.all(np.abs(pts[:, 2] - 5) < 1e-9)

    def test_box_area_proportional(self):
        box = Box((0, 0, 0), (1, 2, 4))
        pts = sample_gt_cloud(SceneDefinition((box,)), 400)
        faces = box.faces()
        counts = np.array([f.contains(pts).sum() for f in faces])
        areas = np.array([f.area for f in faces])
        # edge points belong to two faces; compare shares loosely
        assert np.allclose(counts / counts.sum(), areas / areas.sum(), atol=0.02)

    def test_density_doubling(self):
        scene = SceneDefinition((fronto_plane(60.0, half_size=10.0),))
        n1, n2 = len(sample_gt_cloud(scene, 1.0)), len(sample_gt_cloud(scene, 2.0))
        assert abs(n2 / n1 - 2.0) < 0.05

    def test_points_on_slanted_plane(self):
        pts = sample_gt_cloud(SceneDefinition((slanted_plane(60.0, 0.5),)), 1.0)
        assert np.max(np.abs(pts[:, 2] - (60.0 + 0.5 * pts[:, 0]))) < 1e-9

    def test_bad_density(self):
        with pytest.raises(ValueError):
            sample_gt_cloud(SceneDefinition((fronto_plane(1.0),)), 0)


def test_scene_file_round_trip(tmp_path):
    scene, rig = make_occlusion_case(1, occluder_count=1)
    write_scene_file(tmp_path / "s.json", scene, rig)
    s2, r2 = read_scene_file(tmp_path / "s.json")
    assert s2 == scene and r2 == rig


def test_scene_file_version(tmp_path):
    (tmp_path / "s.json").write_text('{"version": 9, "primitives": []}')
    with pytest.raises(SceneError):
        read_scene_file(tmp_path / "s.json")


def test_texture_validation():
    with pytest.raises(SceneError):
        Texture(kind="marble")
    with pytest.raises(SceneError):
        SceneDefinition(())
