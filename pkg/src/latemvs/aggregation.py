"""Early (variance, weighted sum) and late (view-preserved reduction) aggregation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost_volume import CostVolume, ViewPreservedCost

KINDS = ("early_variance", "early_weighted", "late_preserved")
REDUCERS = ("mean", "best_peak", "entropy_weighted")
PERMUTATION_INVARIANT_REDUCERS = ("mean", "entropy_weighted", "best_peak")


@dataclass(frozen=True)
class AggregationStrategy:
    kind: str = "late_preserved"
    reducer: str | None = "best_peak"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown aggregation kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "late_preserved":
            if self.reducer not in REDUCERS:
                raise ValueError(f"late aggregation needs a reducer from {REDUCERS}, got {self.reducer!r}")
        elif self.reducer is not None:
            raise ValueError(f"{self.kind} takes no reducer")

    @property
    def is_late(self) -> bool:
        return self.kind == "late_preserved"

    @property
    def label(self) -> str:
        return f"{self.kind}/{self.reducer}" if self.reducer else self.kind

    @classmethod
    def parse(cls, text: str) -> "AggregationStrategy":
        """Accepts ``early_weighted`` or ``late_preserved/best_peak`` (``:`` also works)."""
        kind, _, reducer = text.replace(":", "/").partition("/")
        if kind == "late_preserved":
            return cls(kind, reducer or "best_peak")
        return cls(kind, reducer or None)


@dataclass
class ViewWeights:
    weights: np.ndarray  # H x W x V
    flagged: np.ndarray  # H x W, True where every view was invalid


def _stack(volumes) -> tuple[np.ndarray, np.ndarray]:
    if len(volumes) == 0:
        raise ValueError("need at least one cost volume")
    shape = volumes[0].values.shape
    for v in volumes:
        if v.values.shape != shape:
            raise ValueError(f"cost volume shapes differ: {v.values.shape} vs {shape}")
    V = np.stack([v.values.astype(np.float64) for v in volumes], axis=-1)
    M = np.stack([v.validity for v in volumes], axis=-1)
    return np.where(M, V, 0.0), M


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_entropy(x: np.ndarray, axis: int) -> np.ndarray:
    """Entropy (nats) of ``softmax(x)`` along ``axis``, with 0·log 0 = 0."""
    z = x - x.max(axis=axis, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(logp)
    with np.errstate(invalid="ignore"):
        return -np.where(p > 0, p * logp, 0.0).sum(axis=axis)


def early_variance(volumes) -> CostVolume:
    """Per-cell population variance across the valid views."""
    V, M = _stack(volumes)
    n = M.sum(axis=-1)
    safe = np.maximum(n, 1)
    mean = V.sum(axis=-1) / safe
    var = np.where(M, (V - mean[..., None]) ** 2, 0.0).sum(axis=-1) / safe
    valid = n > 0
    return CostVolume(np.where(valid, var, 0.0).astype(np.float32), valid)


def compute_view_weights(volumes) -> ViewWeights:
    """Surrogate visibility weights: each view's peak depth-softmax probability, normalized."""
    if len(volumes) < 2:
        raise ValueError("view weights need at least two volumes")
    V, M = _stack(volumes)
    conf = _softmax(V, axis=2).max(axis=2)  # H x W x V
    any_valid = M.any(axis=2)
    conf = np.where(any_valid, conf, 0.0)
    total = conf.sum(axis=-1, keepdims=True)
    flagged = total[..., 0] <= 0
    n = V.shape[-1]
    weights = np.where(flagged[..., None], 1.0 / n, conf / np.where(total > 0, total, 1.0))
    return ViewWeights(weights, flagged)


def early_weighted(volumes, weights: ViewWeights | np.ndarray) -> CostVolume:
    """Per-cell weighted sum ``Σ_i w_i(p) V_i(p, j)``."""
    V, M = _stack(volumes)
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    if w.shape != (V.shape[0], V.shape[1], V.shape[3]):
        raise ValueError(f"weights of shape {w.shape} do not match volumes {V.shape[:2]} x {V.shape[3]} views")
    out = (V * w[:, :, None, :]).sum(axis=-1)
    return CostVolume(out.astype(np.float32), M.any(axis=-1))


def reduce_views(cvp: ViewPreservedCost, reducer: str = "best_peak") -> CostVolume:
    """Collapse the view axis of a (regularized) view-preserved volume.

    ``mean`` averages over the channels that see the pixel. ``best_peak`` keeps, per pixel,
    the whole profile of the channel whose depth softmax has the lowest entropy
    (ties to the lowest channel). ``entropy_weighted`` blends channels with
    weights proportional to ``exp(-entropy)``. Channels with no valid cell at a
    pixel do not take part.
    """
    if reducer not in REDUCERS:
        raise ValueError(f"unknown reducer {reducer!r}")
    M = cvp.validity
    V = np.where(M, cvp.values.astype(np.float64), 0.0)
    H, W, D, C = V.shape
    present = M.any(axis=2)  # H x W x C
    if reducer == "mean":
        # a channel that sees the pixel at all takes part in every cell; its
        # out-of-view cells count as uninformative zeros
        n = present.sum(axis=-1)[:, :, None]
        out = V.sum(axis=-1) / np.maximum(n, 1)
        valid = M.any(axis=-1)
        return CostVolume(np.where(valid, out, 0.0).astype(np.float32), valid)

    ent = softmax_entropy(V, axis=2)
    pixel_valid = present.any(axis=-1)
    if reducer == "best_peak":
        ent = np.where(present, ent, np.inf)
        k = np.argmin(ent, axis=-1)  # first minimum -> lowest index
        out = np.take_along_axis(V, k[:, :, None, None], axis=3)[..., 0]
        valid = np.take_along_axis(M, k[:, :, None, None], axis=3)[..., 0] & pixel_valid[..., None]
        return CostVolume(np.where(valid, out, 0.0).astype(np.float32), valid)

    # entropy_weighted; subtract the per-pixel minimum entropy before exponentiating
    ent_min = np.where(present, ent, np.inf).min(axis=-1, keepdims=True)
    w = np.where(present, np.exp(-(ent - np.where(np.isfinite(ent_min), ent_min, 0.0))), 0.0)
    w = w / np.where(w.sum(axis=-1, keepdims=True) > 0, w.sum(axis=-1, keepdims=True), 1.0)
    out = (V * w[:, :, None, :]).sum(axis=-1)
    valid = M.any(axis=-1)
    return CostVolume(np.where(valid, out, 0.0).astype(np.float32), valid)
