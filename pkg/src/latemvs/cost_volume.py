"""Features, depth hypotheses, pairwise plane-sweep costs and the view-preserved volume."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from . import kernels
from .geometry import Camera

DEFAULT_STAGE_SCALES = (0.25, 0.5, 1.0)
FEATURE_WINDOW = 5
FEATURE_EPS = 1e-4


@dataclass
class FeatureMap:
    values: np.ndarray  # H x W x C, float32
    stage: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass
class DepthHypotheses:
    values: np.ndarray  # H x W x M, strictly increasing along the last axis
    interval: float
    stage: int = 0

    @property
    def count(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]


@dataclass
class CostVolume:
    values: np.ndarray  # H x W x D, float32
    validity: np.ndarray  # H x W x D, bool

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


@dataclass
class PairwiseCostVolume(CostVolume):
    """One reference/source matching volume with a single cost channel."""

    source_id: int = -1


@dataclass
class ViewPreservedCost:
    values: np.ndarray  # H x W x D x V
    validity: np.ndarray  # H x W x D x V
    channel_order: tuple  # channel -> source id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def num_channels(self) -> int:
        return self.values.shape[3]

    def channel(self, k: int) -> PairwiseCostVolume:
        return PairwiseCostVolume(self.values[..., k], self.validity[..., k], self.channel_order[k])


# ---------------------------------------------------------------------------
# features


def area_downsample(image: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return np.asarray(image, dtype=np.float64)
    H, W = image.shape[:2]
    if H % factor or W % factor:
        raise ValueError(f"image size {W}x{H} is not divisible by {factor}")
    img = np.asarray(image, dtype=np.float64)
    return img.reshape(H // factor, factor, W // factor, factor, *img.shape[2:]).mean(axis=(1, 3))


def _scale_factor(scale: float) -> int:
    k = int(round(1.0 / scale))
    if k < 1 or abs(k * scale - 1.0) > 1e-9:
        raise ValueError(f"stage scale must be 1/k for integer k, got {scale}")
    return k


def _zscore(channel: np.ndarray) -> np.ndarray:
    mean = uniform_filter(channel, FEATURE_WINDOW, mode="nearest")
    sq = uniform_filter(channel * channel, FEATURE_WINDOW, mode="nearest")
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    return (channel - mean) / (std + FEATURE_EPS)


def _central_diff(img: np.ndarray, axis: int) -> np.ndarray:
    p = np.pad(img, [(1, 1) if a == axis else (0, 0) for a in range(img.ndim)], mode="edge")
    hi = [slice(None)] * img.ndim
    lo = [slice(None)] * img.ndim
    hi[axis] = slice(2, None)
    lo[axis] = slice(None, -2)
    return 0.5 * (p[tuple(hi)] - p[tuple(lo)])


def extract_features(image: np.ndarray, stage: int = 0, scale: float | None = None) -> FeatureMap:
    """Three handcrafted channels at the stage resolution.

    The image is area-downsampled to the stage scale; intensity, horizontal and
    vertical central differences are each z-scored over a 5×5 window.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=2)
    if scale is None:
        scale = DEFAULT_STAGE_SCALES[stage]
    img = area_downsample(img, _scale_factor(scale))
    chans = [_zscore(img), _zscore(_central_diff(img, 1)), _zscore(_central_diff(img, 0))]
    return FeatureMap(np.stack(chans, axis=-1).astype(np.float32), stage)


# ---------------------------------------------------------------------------
# hypotheses


def upsample_bilinear(depth: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Resample a map to ``shape`` with pixel-center aligned bilinear interpolation."""
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    h, w = shape
    if (h, w) == (H, W):
        return depth.copy()
    ys = np.clip((np.arange(h) + 0.5) * (H / h) - 0.5, 0, H - 1)
    xs = np.clip((np.arange(w) + 0.5) * (W / w) - 0.5, 0, W - 1)
    y0 = np.minimum(np.floor(ys).astype(int), max(H - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(int), max(W - 2, 0))
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    b = (ys - y0)[:, None]
    a = (xs - x0)[None, :]
    top = (1 - a) * depth[y0][:, x0] + a * depth[y0][:, x1]
    bot = (1 - a) * depth[y1][:, x0] + a * depth[y1][:, x1]
    return (1 - b) * top + b * bot


def sample_hypotheses(
    stage: int,
    num: int,
    interval: float,
    *,
    depth_min: float | None = None,
    shape: tuple[int, int] | None = None,
    prev_depth: np.ndarray | None = None,
) -> DepthHypotheses:
    """Stage 0: a global sweep from ``depth_min``. Later stages: per-pixel sweeps
    centered on the (upsampled) previous depth, shifted up so the nearest plane
    is at least ``interval / 2``."""
    if num < 2:
        raise ValueError(f"need at least 2 hypotheses, got {num}")
    if not interval > 0:
        raise ValueError(f"interval must be positive, got {interval}")
    offsets = np.arange(num, dtype=np.float64) * interval
    if stage == 0:
        if depth_min is None or shape is None:
            raise ValueError("stage 0 needs depth_min and shape")
        if not depth_min > 0:
            raise ValueError(f"depth_min must be positive, got {depth_min}")
        values = np.broadcast_to(depth_min + offsets, (*shape, num)).copy()
    else:
        if prev_depth is None:
            raise ValueError(f"stage {stage} needs the previous depth map")
        prev = np.asarray(prev_depth, dtype=np.float64)
        if shape is not None and tuple(shape) != prev.shape:
            prev = upsample_bilinear(prev, shape)
        start = np.maximum(prev - 0.5 * (num - 1) * interval, 0.5 * interval)
        values = start[..., None] + offsets
    return DepthHypotheses(values, float(interval), stage)


def gt_hypothesis_bin(hyps: DepthHypotheses, gt_depth: np.ndarray) -> np.ndarray:
    """Index of the hypothesis nearest to the ground truth; ties go to the lower index."""
    return np.argmin(np.abs(hyps.values - np.asarray(gt_depth)[..., None]), axis=-1)


# ---------------------------------------------------------------------------
# pairwise volumes


def _at_resolution(cam: Camera, shape: tuple[int, int]) -> Camera:
    h, w = shape
    if (cam.height, cam.width) == (h, w):
        return cam
    s = w / cam.width
    if abs(h / cam.height - s) > 1e-12:
        raise ValueError(f"camera {cam.width}x{cam.height} cannot be scaled to {w}x{h}")
    return cam.scaled(s)


def pairwise_cost(
    ref_features: FeatureMap,
    src_features: FeatureMap,
    ref_cam: Camera,
    src_cam: Camera,
    hyps: DepthHypotheses,
    source_id: int = 0,
) -> PairwiseCostVolume:
    """Channel-mean Hadamard product of reference and warped source features per plane."""
    if ref_features.channels != src_features.channels:
        raise ValueError("feature maps must share the channel count")
    if ref_features.shape != hyps.shape:
        raise ValueError(f"hypotheses {hyps.shape} do not match features {ref_features.shape}")
    ref_cam = _at_resolution(ref_cam, ref_features.shape)
    src_cam = _at_resolution(src_cam, src_features.shape)
    rel = src_cam.relative_to(ref_cam)
    cost, valid = kernels.pairwise_cost_volume(
        ref_features.values, src_features.values, ref_cam.intrinsics.K_inv, rel.R, rel.t, src_cam.K, hyps.values
    )
    return PairwiseCostVolume(cost, valid, source_id)


def pre_regularize(volume: PairwiseCostVolume) -> PairwiseCostVolume:
    """Light per-view smoothing: one masked, renormalized 3×3×3 box filter pass."""
    return PairwiseCostVolume(
        kernels.masked_box3(volume.values, volume.validity), volume.validity.copy(), volume.source_id
    )


def assemble_view_preserved(volumes: list[PairwiseCostVolume]) -> ViewPreservedCost:
    if not volumes:
        raise ValueError("need at least one pairwise volume")
    shape = volumes[0].values.shape
    for v in volumes:
        if v.values.shape != shape:
            raise ValueError(f"pairwise volume shapes differ: {v.values.shape} vs {shape}")
    return ViewPreservedCost(
        np.stack([v.values for v in volumes], axis=-1),
        np.stack([v.validity for v in volumes], axis=-1),
        tuple(v.source_id for v in volumes),
    )


def shuffle_views(cvp: ViewPreservedCost, seed: int | None, permutation=None) -> ViewPreservedCost:
    """Permute the view axis uniformly at random (or by an explicit ``permutation``)."""
    if permutation is None:
        permutation = np.random.default_rng(seed).permutation(cvp.num_channels)
    perm = np.asarray(permutation, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(cvp.num_channels)):
        raise ValueError(f"not a permutation of {cvp.num_channels} channels: {perm.tolist()}")
    return ViewPreservedCost(
        cvp.values[..., perm], cvp.validity[..., perm], tuple(cvp.channel_order[k] for k in perm)
    )


# ---------------------------------------------------------------------------
# raw debug dumps

_MAGIC = b"LMVSVOL1"


def write_volume_raw(path, values: np.ndarray, channel_order=()) -> None:
    """Header (magic, ndim, dims, channel order) followed by little-endian float32 data."""
    values = np.ascontiguousarray(values, dtype="<f4")
    order = list(channel_order)
    header = _MAGIC + struct.pack("<I", values.ndim) + struct.pack(f"<{values.ndim}I", *values.shape)
    header += struct.pack("<I", len(order)) + struct.pack(f"<{len(order)}i", *order)
    Path(path).write_bytes(header + values.tobytes())


def read_volume_raw(path) -> tuple[np.ndarray, tuple]:
    buf = Path(path).read_bytes()
    if buf[:8] != _MAGIC:
        raise ValueError(f"{path} is not a volume dump")
    off = 8
    (ndim,) = struct.unpack_from("<I", buf, off)
    off += 4
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    order = struct.unpack_from(f"<{n}i", buf, off)
    off += 4 * n
    data = np.frombuffer(buf, dtype="<f4", offset=off).reshape(dims)
    return data.astype(np.float32), tuple(order)
