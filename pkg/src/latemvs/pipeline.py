"""Three-stage cascade: costs, aggregation, regularization, regression, confidence."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import _accel, kernels
from .aggregation import (
    AggregationStrategy,
    compute_view_weights,
    early_variance,
    early_weighted,
    reduce_views,
)
from .cost_volume import (
    CostVolume,
    DepthHypotheses,
    PairwiseCostVolume,
    ViewPreservedCost,
    assemble_view_preserved,
    extract_features,
    pairwise_cost,
    pre_regularize,
    sample_hypotheses,
    shuffle_views,
    upsample_bilinear,
)
from .geometry import Camera

CONFIDENCE_WINDOW = 4
CONFIDENCE_NOTE = "sum of probabilities over bins argmax-1..argmax+2, window clamped to the volume"


class ConfigError(ValueError):
    """Invalid cascade configuration."""


@dataclass(frozen=True)
class StageConfig:
    scale: float
    num_hypotheses: int
    interval: float


DEFAULT_STAGES = (
    StageConfig(0.25, 48, 4.0),
    StageConfig(0.5, 32, 1.0),
    StageConfig(1.0, 8, 0.5),
)


@dataclass(frozen=True)
class CascadeConfig:
    stages: tuple = DEFAULT_STAGES
    aggregation: AggregationStrategy = field(default_factory=AggregationStrategy)
    shuffle_seed: int | None = None
    num_views: int = 5
    # logit scale of the surrogate depth network, one value or one per stage;
    # dot-product costs sit in ~[-1, 1]
    logit_gain: float | tuple = 50.0
    final_mode: str = "wta"

    def __post_init__(self):
        if len(self.stages) == 0:
            raise ConfigError("need at least one stage")
        stages = tuple(s if isinstance(s, StageConfig) else StageConfig(*s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        for s in stages:
            if not s.interval > 0:
                raise ConfigError(f"stage interval must be positive, got {s.interval}")
            if s.num_hypotheses < 2:
                raise ConfigError(f"need at least 2 hypotheses per stage, got {s.num_hypotheses}")
            k = round(1.0 / s.scale)
            if k < 1 or abs(k * s.scale - 1.0) > 1e-9:
                raise ConfigError(f"stage scale must be 1/k, got {s.scale}")
        if self.num_views < 2:
            raise ConfigError("num_views must be at least 2")
        gains = self.logit_gain
        if isinstance(gains, (list, tuple)):
            gains = tuple(float(g) for g in gains)
            if len(gains) != len(stages):
                raise ConfigError(f"logit_gain needs one value per stage ({len(stages)}), got {len(gains)}")
            object.__setattr__(self, "logit_gain", gains)
        else:
            gains = (float(gains),)
        if not all(g > 0 for g in gains):
            raise ConfigError("logit_gain must be positive")
        if self.final_mode not in ("wta", "soft_argmax"):
            raise ConfigError(f"unknown final_mode {self.final_mode!r}")

    def gain(self, stage: int) -> float:
        g = self.logit_gain
        return float(g[stage]) if isinstance(g, tuple) else float(g)

    def to_dict(self) -> dict:
        return {
            "stages": [asdict(s) for s in self.stages],
            "aggregation": {"kind": self.aggregation.kind, "reducer": self.aggregation.reducer},
            "shuffle_seed": self.shuffle_seed,
            "num_views": self.num_views,
            "logit_gain": list(self.logit_gain) if isinstance(self.logit_gain, tuple) else self.logit_gain,
            "final_mode": self.final_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeConfig":
        kw = dict(d)
        if "stages" in kw:
            kw["stages"] = tuple(StageConfig(**s) if isinstance(s, dict) else StageConfig(*s) for s in kw["stages"])
        if isinstance(kw.get("logit_gain"), list):
            kw["logit_gain"] = tuple(kw["logit_gain"])
        if "aggregation" in kw and isinstance(kw["aggregation"], dict):
            kw["aggregation"] = AggregationStrategy(**kw["aggregation"])
        unknown = set(kw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class ProbabilityVolume:
    probs: np.ndarray  # H x W x D


@dataclass
class DepthEstimate:
    depth: np.ndarray
    confidence: np.ndarray | None
    valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass
class StageResult:
    stage: int
    estimate: DepthEstimate
    hypotheses: DepthHypotheses
    pairwise: list  # raw PairwiseCostVolume per source
    aggregated: CostVolume  # before the regularization passes, sign-corrected
    probability: ProbabilityVolume
    preserved_shape: tuple | None = None
    channel_order: tuple | None = None
    seconds: float = 0.0


@dataclass
class CascadeResult:
    stages: list
    manifest: dict

    @property
    def final(self) -> DepthEstimate:
        return self.stages[-1].estimate


def regularize_cost(volume: CostVolume) -> CostVolume:
    """Two passes of the masked 3×3×3 box filter."""
    v = kernels.masked_box3(volume.values, volume.validity)
    v = kernels.masked_box3(v, volume.validity)
    if isinstance(volume, PairwiseCostVolume):
        return PairwiseCostVolume(v, volume.validity.copy(), volume.source_id)
    return CostVolume(v, volume.validity.copy())


def softmax_depth(volume: CostVolume, hyps: DepthHypotheses, mode: str = "soft_argmax"):
    """Softmax over the valid depth cells, then soft-argmax or winner-takes-all.

    Pixels without a valid cell get a uniform distribution and are marked invalid.
    Returns ``(DepthEstimate, ProbabilityVolume)``; the estimate's confidence is unset.
    """
    if volume.values.shape != hyps.values.shape:
        raise ValueError(f"volume {volume.values.shape} and hypotheses {hyps.values.shape} disagree")
    if mode not in ("soft_argmax", "wta"):
        raise ValueError(f"unknown regression mode {mode!r}")
    M = volume.validity
    x = np.where(M, volume.values.astype(np.float64), -np.inf)
    valid = M.any(axis=-1)
    x = np.where(valid[..., None], x, 0.0)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=-1, keepdims=True)
    if mode == "soft_argmax":
        depth = (probs * hyps.values).sum(axis=-1)
    else:
        j = np.argmax(probs, axis=-1)
        depth = np.take_along_axis(hyps.values, j[..., None], axis=-1)[..., 0]
    return DepthEstimate(depth, None, valid), ProbabilityVolume(probs)


def confidence_map(prob: ProbabilityVolume | np.ndarray) -> np.ndarray:
    """Probability mass in the four bins around the most likely one."""
    p = np.asarray(getattr(prob, "probs", prob), dtype=np.float64)
    D = p.shape[-1]
    if D <= CONFIDENCE_WINDOW:
        return np.clip(p.sum(axis=-1), 0.0, 1.0)
    j = np.argmax(p, axis=-1)
    start = np.clip(j - 1, 0, D - CONFIDENCE_WINDOW)
    c = np.cumsum(np.concatenate([np.zeros(p.shape[:-1] + (1,)), p], axis=-1), axis=-1)
    total = np.take_along_axis(c, (start + CONFIDENCE_WINDOW)[..., None], -1) - np.take_along_axis(
        c, start[..., None], -1
    )
    return np.clip(total[..., 0], 0.0, 1.0)


def _aggregate_early(strategy: AggregationStrategy, raw: list) -> CostVolume:
    if strategy.kind == "early_variance":
        agg = early_variance(raw)
        # variance is a dissimilarity; flip so larger means better match
        return CostVolume(np.where(agg.validity, -agg.values, 0.0).astype(np.float32), agg.validity)
    if len(raw) == 1:
        return CostVolume(raw[0].values.copy(), raw[0].validity.copy())
    return early_weighted(raw, compute_view_weights(raw))


def _gain(volume: CostVolume, gain: float) -> CostVolume:
    return CostVolume((volume.values * np.float32(gain)).astype(np.float32), volume.validity)


def run_cascade(
    images: list,
    cameras: list[Camera],
    config: CascadeConfig | None = None,
    depth_min: float | None = None,
    volume_hook: Callable[[list], list] | None = None,
) -> CascadeResult:
    """Estimate the depth of ``images[0]`` from the remaining views.

    ``volume_hook`` lets test-time view handling rewrite the list of
    pre-regularized pairwise volumes before they are assembled (late path only).
    """
    config = config or CascadeConfig()
    if len(images) < 2 or len(images) != len(cameras):
        raise ValueError("need a reference and at least one source image, one camera each")
    if depth_min is None:
        raise ConfigError("depth_min is required for the stage-0 sweep")
    if not depth_min > 0:
        raise ConfigError(f"depth_min must be positive, got {depth_min}")
    strategy = config.aggregation
    n_src = len(images) - 1
    slots = config.num_views - 1
    if strategy.is_late and volume_hook is None and n_src != slots:
        raise ConfigError(f"late aggregation expects {slots} source views, got {n_src}; use flex_views")

    ref_cam = cameras[0]
    results = []
    prev_depth = None
    timings = []
    for s, stage in enumerate(config.stages):
        t0 = time.perf_counter()
        feats = [extract_features(img, s, stage.scale) for img in images]
        shape = feats[0].shape
        if s == 0:
            hyps = sample_hypotheses(0, stage.num_hypotheses, stage.interval, depth_min=depth_min, shape=shape)
        else:
            hyps = sample_hypotheses(s, stage.num_hypotheses, stage.interval, shape=shape, prev_depth=prev_depth)
        raw = [pairwise_cost(feats[0], feats[i], ref_cam, cameras[i], hyps, source_id=i - 1) for i in range(1, len(images))]

        preserved_shape = None
        order = None
        if strategy.is_late:
            pre = [pre_regularize(v) for v in raw]
            if volume_hook is not None:
                pre = volume_hook(pre)
            if len(pre) != slots:
                raise ConfigError(f"view-preserved volume needs {slots} channels, got {len(pre)}")
            cvp = assemble_view_preserved(pre)
            if config.shuffle_seed is not None:
                cvp = shuffle_views(cvp, config.shuffle_seed + s)
            preserved_shape = cvp.shape
            order = cvp.channel_order
            aggregated = reduce_views(cvp, strategy.reducer)
            regs = [regularize_cost(cvp.channel(k)) for k in range(cvp.num_channels)]
            reg_cvp = assemble_view_preserved(regs)
            reg_cvp = ViewPreservedCost(
                reg_cvp.values * np.float32(config.gain(s)), reg_cvp.validity, cvp.channel_order
            )
            logits = reduce_views(reg_cvp, strategy.reducer)
        else:
            aggregated = _aggregate_early(strategy, raw)
            logits = _gain(regularize_cost(aggregated), config.gain(s))

        last = s == len(config.stages) - 1
        mode = config.final_mode if last else "soft_argmax"
        est, prob = softmax_depth(logits, hyps, mode)
        est.confidence = confidence_map(prob)
        prev_depth = est.depth
        dt = time.perf_counter() - t0
        timings.append(dt)
        results.append(StageResult(s, est, hyps, raw, aggregated, prob, preserved_shape, order, dt))

    manifest = {
        "config": config.to_dict(),
        "depth_min": depth_min,
        "num_images": len(images),
        "shapes": {
            "stage_resolutions": [list(r.estimate.shape) for r in results],
            "view_preserved": [list(r.preserved_shape) if r.preserved_shape else None for r in results],
        },
        "channel_order": [list(r.channel_order) if r.channel_order else None for r in results],
        "confidence_definition": CONFIDENCE_NOTE,
        "backend": _accel.backend(),
        "timings_s": timings,
    }
    return CascadeResult(results, manifest)


def stage_cameras(cameras: list[Camera], scale: float) -> list[Camera]:
    return [c.scaled(scale) for c in cameras]


def upsample_estimate(est: DepthEstimate, shape) -> np.ndarray:
    return upsample_bilinear(est.depth, shape)
