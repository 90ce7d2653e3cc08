import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from latemvs.geometry import Camera, CameraIntrinsics, CameraPose, look_at
from latemvs.metrics import clean_suite, occlusion_suite

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def simple_camera(center=(0.0, 0.0, 0.0), target=(0.0, 0.0, 10.0), f=100.0, w=100, h=100) -> Camera:
    return Camera(CameraIntrinsics(f, f, (w - 1) / 2.0, (h - 1) / 2.0), look_at(center, target), w, h)


def translated_camera(t, f=100.0, c=50.0, w=101, h=101) -> Camera:
    """Camera with identity rotation whose world->camera translation is ``t``."""
    return Camera(CameraIntrinsics(f, f, c, c), CameraPose(np.eye(3), np.asarray(t, float)), w, h)


def random_rotation(rng) -> np.ndarray:
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@pytest.fixture(scope="session")
def clean_scenes():
    suite = clean_suite()
    for s in suite:
        s.views  # render once per session
    return suite


@pytest.fixture(scope="session")
def occlusion_scenes():
    suite = occlusion_suite(5)
    for s in suite:
        s.views
    return suite


@pytest.fixture(scope="session")
def fronto(clean_scenes):
    return clean_scenes[0]


_EST_CACHE: dict = {}


def view_estimates(item):
    """Cascade estimate for every view of a suite scene, each view taking a turn as reference."""
    if item.name not in _EST_CACHE:
        from latemvs.pipeline import CascadeConfig, run_cascade

        views = item.views
        out = []
        for r in range(len(views)):
            order = [r] + [i for i in range(len(views)) if i != r]
            res = run_cascade([views[i].image for i in order], [views[i].camera for i in order], CascadeConfig(), item.rig.depth_min)
            out.append(res.final)
        _EST_CACHE[item.name] = out
    return _EST_CACHE[item.name]


def gt_estimates(views, conf=1.0):
    from latemvs.pipeline import DepthEstimate

    return [DepthEstimate(v.gt_depth.copy(), np.full(v.gt_depth.shape, conf), v.gt_depth > 0) for v in views]


def far_plane_consistency_case(depth=300.0, seed=0, corrupt=0.3):
    """GT depth maps of a distant plane with a share of pixels pushed 1–2.5 units off the surface.

    Returns ``(estimates, cameras, corrupted_masks)``.
    """
    from latemvs.scene import CameraRig, SceneDefinition, fronto_plane, render_rig

    rig = CameraRig(target=(0.0, 0.0, depth), radius=depth, depth_min=depth / 2)
    views = render_rig(SceneDefinition((fronto_plane(depth, half_size=depth),), seed=seed), rig)
    ests = gt_estimates(views)
    rng = np.random.default_rng(seed)
    bad = []
    for e in ests:
        m = (rng.random(e.depth.shape) < corrupt) & e.valid
        e.depth[m] += rng.choice([-1.0, 1.0], m.sum()) * rng.uniform(1.0, 2.5, m.sum())
        bad.append(m)
    return ests, [v.camera for v in views], bad


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
