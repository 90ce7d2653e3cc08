"""Preservation ratio, depth and point-cloud accuracy, and strategy comparison."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import io
from .aggregation import AggregationStrategy
from .cost_volume import DepthHypotheses, gt_hypothesis_bin
from .pipeline import CascadeConfig, CascadeResult, DepthEstimate, run_cascade
from .scene import CameraRig, SceneDefinition, fronto_plane, make_occlusion_case, render_rig, slanted_plane

MEASURED_STAGE_NOTE = "ground-truth bins and pairwise argmaxes are taken at the finest cascade stage"


@dataclass(frozen=True)
class RatioResult:
    ratio: float | None  # None when undefined
    informative: int
    preserved: int

    @property
    def defined(self) -> bool:
        return self.informative > 0


def _depth_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "depth", x), dtype=np.float64)


def preservation_ratio(pairwise_costs, final_depth, gt_depth, hyps: DepthHypotheses) -> RatioResult:
    """Share of informative pixels whose final depth stays in the ground-truth bin.

    A pixel is informative when at least one pairwise volume has its depth
    argmax (over valid cells) at the ground-truth bin. Only pixels whose
    ground truth actually falls inside a bin (within half an interval of its
    center) are considered. A pixel is preserved when its final depth is
    within half an interval of that bin's center.
    """
    gt = np.asarray(gt_depth, dtype=np.float64)
    depth = _depth_array(final_depth)
    if gt.shape != hyps.shape or depth.shape != hyps.shape:
        raise ValueError(f"shapes differ: gt {gt.shape}, depth {depth.shape}, hypotheses {hyps.shape}")
    half = 0.5 * hyps.interval
    b = gt_hypothesis_bin(hyps, gt)
    center = np.take_along_axis(hyps.values, b[..., None], -1)[..., 0]
    in_bin = (gt > 0) & (np.abs(center - gt) <= half)
    informative = np.zeros(gt.shape, dtype=bool)
    for v in pairwise_costs:
        if v.values.shape != hyps.values.shape:
            raise ValueError("pairwise volume does not match the hypotheses")
        a = np.argmax(np.where(v.validity, v.values, -np.inf), axis=-1)
        informative |= (a == b) & v.validity.any(axis=-1)
    informative &= in_bin
    n = int(informative.sum())
    if n == 0:
        return RatioResult(None, 0, 0)
    kept = int((informative & (np.abs(depth - center) <= half)).sum())
    return RatioResult(kept / n, n, kept)


@dataclass(frozen=True)
class AccuracyResult:
    fraction: float | None
    count: int  # valid ground-truth pixels

    @property
    def defined(self) -> bool:
        return self.count > 0


def depth_accuracy(pred, gt, threshold: float) -> AccuracyResult:
    """Fraction of pixels with ground truth whose prediction is within ``threshold``.

    Pixels the estimate marks invalid count as misses.
    """
    gt = np.asarray(gt, dtype=np.float64)
    depth = _depth_array(pred)
    if depth.shape != gt.shape:
        raise ValueError(f"prediction {depth.shape} and ground truth {gt.shape} differ")
    valid_gt = gt > 0
    n = int(valid_gt.sum())
    if n == 0:
        return AccuracyResult(None, 0)
    ok = np.abs(depth - gt) <= threshold
    pv = getattr(pred, "valid", None)
    if pv is not None:
        ok &= pv
    return AccuracyResult(float((ok & valid_gt).sum() / n), n)


@dataclass(frozen=True)
class CloudMetrics:
    accuracy: float
    completeness: float

    @property
    def overall(self) -> float:
        return 0.5 * (self.accuracy + self.completeness)


def cloud_metrics(pred, gt_points, dist_cap: float) -> CloudMetrics:
    """Capped mean nearest-neighbor distances, prediction→GT and GT→prediction."""
    p = np.asarray(getattr(pred, "xyz", pred), dtype=np.float64).reshape(-1, 3)
    g = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0 or len(g) == 0:
        raise ValueError("cloud metrics need two non-empty clouds")
    if not dist_cap > 0:
        raise ValueError("dist_cap must be positive")
    d_acc, _ = cKDTree(g).query(p, k=1)
    d_com, _ = cKDTree(p).query(g, k=1)
    return CloudMetrics(float(np.minimum(d_acc, dist_cap).mean()), float(np.minimum(d_com, dist_cap).mean()))


# ---------------------------------------------------------------------------
# suites


@dataclass
class SuiteScene:
    name: str
    scene: SceneDefinition
    rig: CameraRig
    _views: list | None = field(default=None, repr=False)

    @property
    def views(self) -> list:
        if self._views is None:
            self._views = render_rig(self.scene, self.rig)
        return self._views


def clean_suite() -> list[SuiteScene]:
    """Unoccluded plane scenes seen by the default five-camera ring."""
    rig = CameraRig()
    return [
        SuiteScene("fronto_60", SceneDefinition((fronto_plane(60.0),), seed=0), rig),
        SuiteScene("fronto_61.3", SceneDefinition((fronto_plane(61.3),), seed=1), rig),
        SuiteScene("slanted_60_0.5", SceneDefinition((slanted_plane(60.0, 0.5),), seed=2), rig),
    ]


OCCLUSION_SUITE = dict(occluder_count=3, region_half=17.0)


def occlusion_suite(n: int = 5) -> list[SuiteScene]:
    """Seeds ``0..n-1``: a background square hidden in three of four source views."""
    out = []
    for seed in range(n):
        scene, rig = make_occlusion_case(seed, **OCCLUSION_SUITE)
        out.append(SuiteScene(f"occlusion_{seed}", scene, rig))
    return out


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    scene: str
    strategy: str
    config: dict
    preservation_ratio: float | None
    informative_pixels: int
    preservation_ratio_aggregated: float | None
    depth_accuracy: float | None
    depth_threshold: float
    cloud_accuracy: float | None = None
    cloud_completeness: float | None = None
    cloud_overall: float | None = None
    measured_stage: str = MEASURED_STAGE_NOTE
    timings: dict | None = None  # left out of files unless asked for
    version: int = io.REPORT_VERSION

    def to_dict(self, include_timings: bool = False) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "timings"}
        if include_timings and self.timings is not None:
            d["timings"] = self.timings
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        if d.get("version") != io.REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')!r}")
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def write(self, path, include_timings: bool = False) -> None:
        io.dump_json(path, self.to_dict(include_timings))

    @classmethod
    def read(cls, path) -> "MetricsReport":
        return cls.from_dict(io.load_json(path))


def _wta(volume, hyps: DepthHypotheses) -> np.ndarray:
    j = np.argmax(np.where(volume.validity, volume.values, -np.inf), axis=-1)
    return np.take_along_axis(hyps.values, j[..., None], -1)[..., 0]


def _opt(x: float | None) -> float | None:
    return None if x is None else float(x)


def evaluate_cascade(
    result: CascadeResult, gt_depth, name: str, config: CascadeConfig, depth_threshold: float | None = None
) -> MetricsReport:
    """Metrics of one cascade run against the reference ground truth."""
    last = result.stages[-1]
    if depth_threshold is None:
        depth_threshold = 2.0 * config.stages[-1].interval
    final = preservation_ratio(last.pairwise, last.estimate, gt_depth, last.hypotheses)
    agg = preservation_ratio(last.pairwise, _wta(last.aggregated, last.hypotheses), gt_depth, last.hypotheses)
    acc = depth_accuracy(last.estimate, gt_depth, depth_threshold)
    return MetricsReport(
        scene=name,
        strategy=config.aggregation.label,
        config=config.to_dict(),
        preservation_ratio=_opt(final.ratio),
        informative_pixels=final.informative,
        preservation_ratio_aggregated=_opt(agg.ratio),
        depth_accuracy=_opt(acc.fraction),
        depth_threshold=float(depth_threshold),
        timings={"stages_s": list(result.manifest.get("timings_s", []))},
    )


@dataclass
class ComparisonTable:
    reports: list  # MetricsReport per (scene, strategy), scene-major

    def strategies(self) -> list[str]:
        seen = []
        for r in self.reports:
            if r.strategy not in seen:
                seen.append(r.strategy)
        return seen

    def summary(self) -> dict:
        """Per strategy: informative-pixel-weighted ratios and mean depth accuracy."""
        out = {}
        for s in self.strategies():
            rs = [r for r in self.reports if r.strategy == s]
            n = sum(r.informative_pixels for r in rs)
            kept = sum(r.preservation_ratio * r.informative_pixels for r in rs if r.preservation_ratio is not None)
            kept_agg = sum(
                r.preservation_ratio_aggregated * r.informative_pixels
                for r in rs
                if r.preservation_ratio_aggregated is not None
            )
            accs = [r.depth_accuracy for r in rs if r.depth_accuracy is not None]
            out[s] = {
                "preservation_ratio": kept / n if n else None,
                "preservation_ratio_aggregated": kept_agg / n if n else None,
                "informative_pixels": n,
                "depth_accuracy": float(np.mean(accs)) if accs else None,
                "scenes": len(rs),
            }
        return out

    def rows(self) -> list[dict]:
        cols = ("scene", "strategy", "preservation_ratio", "preservation_ratio_aggregated", "informative_pixels", "depth_accuracy")
        return [{c: getattr(r, c) for c in cols} for r in self.reports]

    def to_dict(self) -> dict:
        return {
            "version": io.REPORT_VERSION,
            "measured_stage": MEASURED_STAGE_NOTE,
            "summary": self.summary(),
            "runs": [r.to_dict() for r in self.reports],
        }

    def write(self, json_path, csv_path=None) -> None:
        io.dump_json(json_path, self.to_dict())
        if csv_path is not None:
            io.write_csv(csv_path, self.rows())


def compare_strategies(suite: list[SuiteScene], strategies, config: CascadeConfig | None = None) -> ComparisonTable:
    """Run every strategy on every scene (reference view 0) and collect reports."""
    config = config or CascadeConfig()
    strategies = [s if isinstance(s, AggregationStrategy) else AggregationStrategy.parse(s) for s in strategies]
    reports = []
    for item in suite:
        views = item.views
        images = [v.image for v in views]
        cams = [v.camera for v in views]
        for strat in strategies:
            cfg = CascadeConfig(**{**_fields(config), "aggregation": strat})
            t0 = time.perf_counter()
            res = run_cascade(images, cams, cfg, depth_min=item.rig.depth_min)
            rep = evaluate_cascade(res, views[0].gt_depth, item.name, cfg)
            rep.timings["total_s"] = time.perf_counter() - t0
            reports.append(rep)
    return ComparisonTable(reports)


def _fields(config: CascadeConfig) -> dict:
    return {k: getattr(config, k) for k in config.__dataclass_fields__}


def ratio_gap(table: ComparisonTable, better: str, worse: str) -> float:
    s = table.summary()
    return s[better]["preservation_ratio"] - s[worse]["preservation_ratio"]

