"""Running a network trained for N views on N′ ≠ N views.

More views: keep the N−2 most useful sources fixed and rotate the rest
through the last slot, one cascade run per rotation, then fuse per pixel by
confidence. Fewer views: pad the pre-regularized pairwise volumes with copies
of the most useful one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Camera
from .pipeline import CascadeConfig, CascadeResult, ConfigError, DepthEstimate, run_cascade

THETA0_DEG = 5.0
SIGMA_BELOW_DEG = 1.0
SIGMA_ABOVE_DEG = 10.0


def baseline_gaussian(theta_deg, theta0=THETA0_DEG, sigma_below=SIGMA_BELOW_DEG, sigma_above=SIGMA_ABOVE_DEG):
    """Piecewise Gaussian in the triangulation angle, peaked at ``theta0``."""
    theta = np.asarray(theta_deg, dtype=np.float64)
    sigma = np.where(theta <= theta0, sigma_below, sigma_above)
    return np.exp(-((theta - theta0) ** 2) / (2.0 * sigma**2))


def usefulness_scores(ref_cam: Camera, src_cams: list[Camera], anchor_points) -> np.ndarray:
    """Score each source by summing the baseline Gaussian over anchor points.

    The angle is measured at each point between the rays to the reference
    and source camera centers.
    """
    pts = np.asarray(anchor_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("usefulness scores need at least one anchor point")
    to_ref = ref_cam.center - pts
    to_ref /= np.linalg.norm(to_ref, axis=1, keepdims=True)
    scores = np.zeros(len(src_cams))
    for i, cam in enumerate(src_cams):
        to_src = cam.center - pts
        to_src /= np.linalg.norm(to_src, axis=1, keepdims=True)
        cos = np.clip((to_ref * to_src).sum(axis=1), -1.0, 1.0)
        # sorted sum so the score does not depend on anchor order
        scores[i] = np.sort(baseline_gaussian(np.degrees(np.arccos(cos)))).sum()
    return scores


def _rank(scores) -> list[int]:
    scores = np.asarray(scores, dtype=np.float64)
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


@dataclass(frozen=True)
class IterationPlan:
    iterations: tuple  # tuple of tuples of source ids, each of length N−1
    fixed_set: tuple

    def __len__(self) -> int:
        return len(self.iterations)

    def to_dict(self) -> dict:
        return {"fixed": list(self.fixed_set), "iterations": [list(it) for it in self.iterations]}


def plan_iterations(scores, n_train: int, n_test: int) -> IterationPlan:
    """Split ``n_test − 1`` sources into ``n_train − 2`` fixed ones and a rotating slot."""
    if n_train < 3:
        raise ValueError(f"planning needs N >= 3, got {n_train}")
    if n_test <= n_train:
        raise ValueError(f"planning needs N' > N (got N'={n_test}, N={n_train}); pad or run directly")
    if len(scores) != n_test - 1:
        raise ValueError(f"expected {n_test - 1} source scores, got {len(scores)}")
    order = _rank(scores)
    fixed = tuple(order[: n_train - 2])
    rotating = order[n_train - 2 :]
    return IterationPlan(tuple(fixed + (r,) for r in rotating), fixed)


def pad_fewer_views(volumes: list, scores, n_train: int) -> list:
    """Append ``N − N′`` copies of the best-scoring volume so there are N−1 channels."""
    n_test = len(volumes) + 1
    if n_test >= n_train:
        raise ValueError(f"padding needs N' < N (got N'={n_test}, N={n_train})")
    if n_test < 2:
        raise ValueError("padding needs at least one source volume")
    if len(scores) != len(volumes):
        raise ValueError(f"{len(volumes)} volumes but {len(scores)} scores")
    top = volumes[_rank(scores)[0]]
    copies = [type(top)(top.values.copy(), top.validity.copy(), top.source_id) for _ in range(n_train - n_test)]
    return list(volumes) + copies


def fuse_by_confidence(estimates: list[DepthEstimate]) -> DepthEstimate:
    """Per pixel, take depth and confidence from the most confident estimate (ties → first)."""
    if not estimates:
        raise ValueError("nothing to fuse")
    shape = estimates[0].depth.shape
    for e in estimates:
        if e.depth.shape != shape or e.confidence is None:
            raise ValueError("estimates must share a shape and carry confidence maps")
    conf = np.stack([e.confidence for e in estimates])
    k = np.argmax(conf, axis=0)[None]
    depth = np.take_along_axis(np.stack([e.depth for e in estimates]), k, 0)[0]
    valid = np.stack([e.valid for e in estimates]).any(axis=0)
    return DepthEstimate(depth, np.take_along_axis(conf, k, 0)[0], valid)


@dataclass
class FlexResult:
    estimate: DepthEstimate
    mode: str  # "direct" | "padded" | "iterated"
    scores: np.ndarray | None = None
    plan: IterationPlan | None = None
    runs: list = field(default_factory=list)  # CascadeResult per iteration

    @property
    def manifest(self) -> dict:
        m = dict(self.runs[0].manifest) if self.runs else {}
        m["flex"] = {
            "mode": self.mode,
            "scores": None if self.scores is None else [float(s) for s in self.scores],
            "plan": None if self.plan is None else self.plan.to_dict(),
        }
        return m


def run_flexible(
    images: list,
    cameras: list[Camera],
    config: CascadeConfig,
    depth_min: float,
    anchor_points=None,
    scores=None,
) -> FlexResult:
    """Run the cascade on any number of views.

    Early strategies accept any view count and run directly. For late
    aggregation the source count is matched to ``config.num_views − 1``.
    """
    n_test = len(images)
    n_train = config.num_views
    if n_test < 2:
        raise ConfigError("need a reference and at least one source view")
    if n_test == n_train or not config.aggregation.is_late:
        res = run_cascade(images, cameras, config, depth_min)
        return FlexResult(res.final, "direct", runs=[res])

    if scores is None:
        if anchor_points is None:
            raise ConfigError("flexible views need usefulness scores or anchor points")
        scores = usefulness_scores(cameras[0], cameras[1:], anchor_points)
    scores = np.asarray(scores, dtype=np.float64)

    if n_test < n_train:
        res = run_cascade(images, cameras, config, depth_min, volume_hook=lambda vols: pad_fewer_views(vols, scores, n_train))
        return FlexResult(res.final, "padded", scores, runs=[res])

    plan = plan_iterations(scores, n_train, n_test)
    runs: list[CascadeResult] = []
    for ids in plan.iterations:
        sel = [0] + [i + 1 for i in ids]
        runs.append(run_cascade([images[i] for i in sel], [cameras[i] for i in sel], config, depth_min))
    fused = fuse_by_confidence([r.final for r in runs])
    return FlexResult(fused, "iterated", scores, plan, runs)
