"""Depth-map filtering and multi-view point-cloud fusion.

A reference pixel survives when it is confident in its own view and in at
least one source view it reprojects into (photometric check), and when the
source depth maps agree with it well enough to accumulate a dynamic
consistency score (geometric check). Depth agreement is measured in absolute
scene units by default; the relative variant is kept for comparison.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ._accel import backend, njit
from .geometry import Camera
from .pipeline import ConfigError, DepthEstimate

TIERS = (1, 2, 3, 4)


@dataclass(frozen=True)
class FilterConfig:
    conf_threshold: float = 0.3
    reproj_px_threshold: float = 1.0
    abs_depth_threshold: float = 0.5  # finest cascade interval
    dyn_view_weights: tuple = (1.0, 0.5, 0.25, 0.125)  # tiers 1..4
    dyn_score_threshold: float = 1.5
    depth_mode: str = "absolute"  # or "relative"
    rel_depth_threshold: float = 0.01

    def __post_init__(self):
        w = tuple(float(x) for x in self.dyn_view_weights)
        object.__setattr__(self, "dyn_view_weights", w)
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ConfigError(f"conf_threshold must lie in [0, 1], got {self.conf_threshold}")
        for name in ("reproj_px_threshold", "abs_depth_threshold", "rel_depth_threshold", "dyn_score_threshold"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if len(w) != len(TIERS) or any(x < 0 for x in w):
            raise ConfigError(f"dyn_view_weights needs {len(TIERS)} nonnegative values")
        if self.depth_mode not in ("absolute", "relative"):
            raise ConfigError(f"unknown depth_mode {self.depth_mode!r}")

    @property
    def depth_threshold(self) -> float:
        return self.abs_depth_threshold if self.depth_mode == "absolute" else self.rel_depth_threshold

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dyn_view_weights"] = list(self.dyn_view_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FilterConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown filter fields: {sorted(unknown)}")
        kw = dict(d)
        if "dyn_view_weights" in kw:
            w = kw["dyn_view_weights"]
            if isinstance(w, dict):  # {"tier1": 1.0, ...}
                w = [w[f"tier{k}"] for k in TIERS]
            kw["dyn_view_weights"] = tuple(w)
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# per-pixel reprojection


@dataclass
class Reprojection:
    """Reference pixels pushed into one source view and looked up there."""

    inside: np.ndarray  # projection lands on a source pixel with a valid depth
    qx: np.ndarray
    qy: np.ndarray
    z_src: np.ndarray  # reference point's depth in the source frame
    d_src: np.ndarray  # source depth map at the nearest pixel
    reproj_err: np.ndarray  # px, reference grid


def reproject(ref_est: DepthEstimate, src_est: DepthEstimate, ref_cam: Camera, src_cam: Camera) -> Reprojection:
    H, W = ref_est.depth.shape
    vv, uu = np.mgrid[0:H, 0:W].astype(np.float64)
    d = np.where(ref_est.valid, ref_est.depth, 1.0)
    rel = src_cam.relative_to(ref_cam)
    Xs = rel.apply(ref_cam.backproject(uu, vv, d))
    us, vs, zs = src_cam.project(Xs)
    Hs, Ws = src_est.depth.shape
    with np.errstate(invalid="ignore"):
        qx = np.rint(np.nan_to_num(us, nan=-1.0)).astype(np.int64)
        qy = np.rint(np.nan_to_num(vs, nan=-1.0)).astype(np.int64)
    inside = ref_est.valid & (zs > 0) & (qx >= 0) & (qx < Ws) & (qy >= 0) & (qy < Hs)
    qxc = np.clip(qx, 0, Ws - 1)
    qyc = np.clip(qy, 0, Hs - 1)
    d_src = src_est.depth[qyc, qxc]
    inside &= src_est.valid[qyc, qxc] & (d_src > 0)
    Y = src_cam.backproject(qxc.astype(np.float64), qyc.astype(np.float64), np.where(inside, d_src, 1.0))
    ub, vb, _ = ref_cam.project(rel.inverse().apply(Y))
    err = np.where(inside, np.hypot(ub - uu, vb - vv), np.inf)
    return Reprojection(inside, qxc, qyc, zs, d_src, err)


def consistency_tier(rp: Reprojection, cfg: FilterConfig) -> np.ndarray:
    """Smallest tier k with both errors within k × threshold; 0 where no tier holds."""
    diff = np.abs(rp.z_src - rp.d_src)
    if cfg.depth_mode == "relative":
        diff = diff / np.where(rp.d_src > 0, rp.d_src, 1.0)
    tier = np.zeros(rp.inside.shape, dtype=np.int64)
    for k in reversed(TIERS):
        ok = rp.inside & (rp.reproj_err <= k * cfg.reproj_px_threshold) & (diff <= k * cfg.depth_threshold)
        tier = np.where(ok, k, tier)
    return tier


# ---------------------------------------------------------------------------
# filters


@dataclass
class PhotometricResult:
    mask: np.ndarray
    reference_only: bool  # no source estimates were given


def photometric_filter(ref_est: DepthEstimate, src_ests: list, cams: list[Camera], cfg: FilterConfig) -> PhotometricResult:
    """Confident in the reference and in at least one source view it lands in.

    ``cams[0]`` is the reference camera, ``cams[1:]`` pair with ``src_ests``.
    """
    _check_aligned(ref_est, src_ests, cams)
    ok_ref = ref_est.valid & (ref_est.confidence >= cfg.conf_threshold)
    if not src_ests:
        return PhotometricResult(ok_ref, True)
    any_src = np.zeros_like(ok_ref)
    for est, cam in zip(src_ests, cams[1:]):
        rp = reproject(ref_est, est, cams[0], cam)
        any_src |= rp.inside & (est.confidence[rp.qy, rp.qx] >= cfg.conf_threshold)
    return PhotometricResult(ok_ref & any_src, False)


@dataclass
class GeometricResult:
    tiers: np.ndarray  # V x H x W, 0 = inconsistent
    count: np.ndarray  # views consistent at any tier
    score: np.ndarray
    mask: np.ndarray


def geometric_consistency(ref_est: DepthEstimate, src_ests: list, cams: list[Camera], cfg: FilterConfig) -> GeometricResult:
    """Tiered multi-view agreement accumulated into a dynamic score."""
    _check_aligned(ref_est, src_ests, cams)
    H, W = ref_est.depth.shape
    tiers = np.zeros((len(src_ests), H, W), dtype=np.int64)
    for i, (est, cam) in enumerate(zip(src_ests, cams[1:])):
        tiers[i] = consistency_tier(reproject(ref_est, est, cams[0], cam), cfg)
    w = np.concatenate([[0.0], cfg.dyn_view_weights])
    score = w[tiers].sum(axis=0) if len(src_ests) else np.zeros((H, W))
    mask = ref_est.valid & (score >= cfg.dyn_score_threshold)
    return GeometricResult(tiers, (tiers > 0).sum(axis=0), score, mask)


def filter_view(ref_est, src_ests, cams, cfg: FilterConfig) -> np.ndarray:
    """Both checks combined."""
    return photometric_filter(ref_est, src_ests, cams, cfg).mask & geometric_consistency(ref_est, src_ests, cams, cfg).mask


def filter_all(ests: list[DepthEstimate], cams: list[Camera], cfg: FilterConfig) -> list[np.ndarray]:
    """Filter every view against all the others (in index order)."""
    masks = []
    for r in range(len(ests)):
        others = [i for i in range(len(ests)) if i != r]
        masks.append(filter_view(ests[r], [ests[i] for i in others], [cams[r]] + [cams[i] for i in others], cfg))
    return masks


def _check_aligned(ref_est, src_ests, cams):
    if len(cams) != len(src_ests) + 1:
        raise ValueError(f"need {len(src_ests) + 1} cameras (reference first), got {len(cams)}")
    if ref_est.confidence is None or any(e.confidence is None for e in src_ests):
        raise ValueError("filtering needs confidence maps")


# ---------------------------------------------------------------------------
# fusion


@dataclass
class FusedCloud:
    xyz: np.ndarray  # N x 3, scene units
    rgb: np.ndarray  # N x 3, uint8
    support: np.ndarray  # N, observations averaged into each point
    source: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))  # (view, row, col)

    def __len__(self) -> int:
        return len(self.xyz)

    @classmethod
    def empty(cls) -> "FusedCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.uint8), np.zeros(0, np.int64), np.zeros((0, 3), np.int64))


@njit(cache=True)
def _fuse_nb(depths, masks, fx, fy, cx, cy, R, t, px_thr, d_thr, relative):
    V, H, W = depths.shape
    consumed = np.zeros((V, H, W), dtype=np.bool_)
    n_max = 0
    for r in range(V):
        for y in range(H):
            for x in range(W):
                if masks[r, y, x]:
                    n_max += 1
    xyz = np.zeros((n_max, 3))
    support = np.zeros(n_max, dtype=np.int64)
    src = np.zeros((n_max, 3), dtype=np.int64)
    n = 0
    for r in range(V):
        for y in range(H):
            for x in range(W):
                if not masks[r, y, x] or consumed[r, y, x]:
                    continue
                consumed[r, y, x] = True
                d = depths[r, y, x]
                c0 = (x - cx[r]) / fx[r] * d - t[r, 0]
                c1 = (y - cy[r]) / fy[r] * d - t[r, 1]
                c2 = d - t[r, 2]
                w0 = R[r, 0, 0] * c0 + R[r, 1, 0] * c1 + R[r, 2, 0] * c2
                w1 = R[r, 0, 1] * c0 + R[r, 1, 1] * c1 + R[r, 2, 1] * c2
                w2 = R[r, 0, 2] * c0 + R[r, 1, 2] * c1 + R[r, 2, 2] * c2
                s0 = w0
                s1 = w1
                s2 = w2
                cnt = 1
                for s in range(V):
                    if s == r:
                        continue
                    X0 = R[s, 0, 0] * w0 + R[s, 0, 1] * w1 + R[s, 0, 2] * w2 + t[s, 0]
                    X1 = R[s, 1, 0] * w0 + R[s, 1, 1] * w1 + R[s, 1, 2] * w2 + t[s, 1]
                    X2 = R[s, 2, 0] * w0 + R[s, 2, 1] * w1 + R[s, 2, 2] * w2 + t[s, 2]
                    if not X2 > 0.0:
                        continue
                    qx = int(np.rint(fx[s] * X0 / X2 + cx[s]))
                    qy = int(np.rint(fy[s] * X1 / X2 + cy[s]))
                    if qx < 0 or qx >= W or qy < 0 or qy >= H:
                        continue
                    if not masks[s, qy, qx] or consumed[s, qy, qx]:
                        continue
                    ds = depths[s, qy, qx]
                    b0 = (qx - cx[s]) / fx[s] * ds - t[s, 0]
                    b1 = (qy - cy[s]) / fy[s] * ds - t[s, 1]
                    b2 = ds - t[s, 2]
                    y0 = R[s, 0, 0] * b0 + R[s, 1, 0] * b1 + R[s, 2, 0] * b2
                    y1 = R[s, 0, 1] * b0 + R[s, 1, 1] * b1 + R[s, 2, 1] * b2
                    y2 = R[s, 0, 2] * b0 + R[s, 1, 2] * b1 + R[s, 2, 2] * b2
                    e0 = R[r, 0, 0] * y0 + R[r, 0, 1] * y1 + R[r, 0, 2] * y2 + t[r, 0]
                    e1 = R[r, 1, 0] * y0 + R[r, 1, 1] * y1 + R[r, 1, 2] * y2 + t[r, 1]
                    e2 = R[r, 2, 0] * y0 + R[r, 2, 1] * y1 + R[r, 2, 2] * y2 + t[r, 2]
                    if not e2 > 0.0:
                        continue
                    du = fx[r] * e0 / e2 + cx[r] - x
                    dv = fy[r] * e1 / e2 + cy[r] - y
                    diff = abs(X2 - ds)
                    if relative:
                        diff = diff / ds
                    if np.sqrt(du * du + dv * dv) <= px_thr and diff <= d_thr:
                        consumed[s, qy, qx] = True
                        s0 += y0
                        s1 += y1
                        s2 += y2
                        cnt += 1
                xyz[n, 0] = s0 / cnt
                xyz[n, 1] = s1 / cnt
                xyz[n, 2] = s2 / cnt
                support[n] = cnt
                src[n, 0] = r
                src[n, 1] = y
                src[n, 2] = x
                n += 1
    return xyz[:n], support[:n], src[:n]


def _to_world(c0, c1, c2, R, t):
    c0, c1, c2 = c0 - t[0], c1 - t[1], c2 - t[2]
    return (
        R[0, 0] * c0 + R[1, 0] * c1 + R[2, 0] * c2,
        R[0, 1] * c0 + R[1, 1] * c1 + R[2, 1] * c2,
        R[0, 2] * c0 + R[1, 2] * c1 + R[2, 2] * c2,
    )


def _to_cam(w0, w1, w2, R, t):
    return (
        R[0, 0] * w0 + R[0, 1] * w1 + R[0, 2] * w2 + t[0],
        R[1, 0] * w0 + R[1, 1] * w1 + R[1, 2] * w2 + t[1],
        R[2, 0] * w0 + R[2, 1] * w1 + R[2, 2] * w2 + t[2],
    )


def _fuse_np(depths, masks, fx, fy, cx, cy, R, t, px_thr, d_thr, relative):
    # Vectorized per reference view. Within one view, two pixels can only
    # interact by claiming the same source pixel; the first in raster order
    # wins, exactly as in the sequential loop.
    V, H, W = depths.shape
    consumed = np.zeros((V, H, W), dtype=bool)
    out_xyz, out_sup, out_src = [], [], []
    for r in range(V):
        alive = masks[r] & ~consumed[r]
        ys, xs = np.nonzero(alive)  # raster order
        consumed[r, ys, xs] = True
        d = depths[r, ys, xs]
        w0, w1, w2 = _to_world((xs - cx[r]) / fx[r] * d, (ys - cy[r]) / fy[r] * d, d, R[r], t[r])
        s0, s1, s2 = w0.copy(), w1.copy(), w2.copy()
        cnt = np.ones(len(ys), dtype=np.int64)
        for s in range(V):
            if s == r:
                continue
            X0, X1, X2 = _to_cam(w0, w1, w2, R[s], t[s])
            with np.errstate(divide="ignore", invalid="ignore"):
                pos = X2 > 0
                qx = np.rint(np.where(pos, fx[s] * X0 / X2 + cx[s], -1.0)).astype(np.int64)
                qy = np.rint(np.where(pos, fy[s] * X1 / X2 + cy[s], -1.0)).astype(np.int64)
            ok = pos & (qx >= 0) & (qx < W) & (qy >= 0) & (qy < H)
            qxc, qyc = np.clip(qx, 0, W - 1), np.clip(qy, 0, H - 1)
            ok &= masks[s, qyc, qxc] & ~consumed[s, qyc, qxc]
            ds = np.where(ok, depths[s, qyc, qxc], 1.0)
            y0, y1, y2 = _to_world((qxc - cx[s]) / fx[s] * ds, (qyc - cy[s]) / fy[s] * ds, ds, R[s], t[s])
            e0, e1, e2 = _to_cam(y0, y1, y2, R[r], t[r])
            with np.errstate(divide="ignore", invalid="ignore"):
                du = fx[r] * e0 / e2 + cx[r] - xs
                dv = fy[r] * e1 / e2 + cy[r] - ys
                diff = np.abs(X2 - ds)
                if relative:
                    diff = diff / ds
                ok &= (e2 > 0) & (np.sqrt(du * du + dv * dv) <= px_thr) & (diff <= d_thr)
            idx = np.nonzero(ok)[0]
            flat = qyc[idx] * W + qxc[idx]
            _, first = np.unique(flat, return_index=True)
            win = np.zeros(len(ys), dtype=bool)
            win[idx[first]] = True
            consumed[s, qyc[win], qxc[win]] = True
            s0 = np.where(win, s0 + y0, s0)
            s1 = np.where(win, s1 + y1, s1)
            s2 = np.where(win, s2 + y2, s2)
            cnt += win
        out_xyz.append(np.stack([s0 / cnt, s1 / cnt, s2 / cnt], axis=-1))
        out_sup.append(cnt)
        out_src.append(np.stack([np.full(len(ys), r), ys, xs], axis=-1))
    return (
        np.concatenate(out_xyz) if out_xyz else np.zeros((0, 3)),
        np.concatenate(out_sup) if out_sup else np.zeros(0, np.int64),
        np.concatenate(out_src).astype(np.int64) if out_src else np.zeros((0, 3), np.int64),
    )


def _colors(images, src) -> np.ndarray:
    out = np.zeros((len(src), 3), dtype=np.uint8)
    for r in np.unique(src[:, 0]) if len(src) else []:
        sel = src[:, 0] == r
        img = np.asarray(images[r], dtype=np.float64)
        px = img[src[sel, 1], src[sel, 2]]
        if px.ndim == 1:
            px = np.repeat(px[:, None], 3, axis=1)
        out[sel] = np.rint(np.clip(px, 0.0, 1.0) * 255.0).astype(np.uint8)
    return out


def fuse_point_cloud(
    ests: list[DepthEstimate],
    masks: list[np.ndarray],
    cams: list[Camera],
    images: list,
    cfg: FilterConfig | None = None,
) -> FusedCloud:
    """Merge surviving pixels of all views into one colored cloud.

    Views are visited in index order, pixels in raster order. Each surviving,
    unconsumed pixel becomes a point averaged with every tier-1 consistent,
    unconsumed observation in the other views; those observations are then
    consumed. Colors come from the pixel's own view.
    """
    cfg = cfg or FilterConfig()
    if not (len(ests) == len(masks) == len(cams) == len(images)) or not ests:
        raise ValueError("need one estimate, mask, camera and image per view")
    shape = ests[0].depth.shape
    if any(e.depth.shape != shape or m.shape != shape for e, m in zip(ests, masks)):
        raise ValueError("all depth maps and masks must share one shape")
    depths = np.ascontiguousarray(np.stack([e.depth for e in ests]), dtype=np.float64)
    keep = np.ascontiguousarray(np.stack([m & e.valid & (e.depth > 0) for e, m in zip(ests, masks)]))
    k = [c.intrinsics for c in cams]
    args = (
        depths,
        keep,
        np.array([i.fx for i in k], dtype=np.float64),
        np.array([i.fy for i in k], dtype=np.float64),
        np.array([i.cx for i in k], dtype=np.float64),
        np.array([i.cy for i in k], dtype=np.float64),
        np.ascontiguousarray(np.stack([c.pose.R for c in cams]), dtype=np.float64),
        np.ascontiguousarray(np.stack([c.pose.t for c in cams]), dtype=np.float64),
        float(cfg.reproj_px_threshold),
        float(cfg.depth_threshold),
        cfg.depth_mode == "relative",
    )
    xyz, support, src = (_fuse_nb if backend() == "numba" else _fuse_np)(*args)
    if len(xyz) == 0:
        return FusedCloud.empty()
    return FusedCloud(xyz, _colors(images, src), support, src)
