"""Procedural synthetic scenes with analytic ground truth.

Scenes are built from textured rectangles and axis-aligned boxes. Rendering
casts one ray per pixel center and records the nearest hit; shading is the
albedo of a solid (world-space) texture, so the same surface point has the
same intensity in every view.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Camera, CameraIntrinsics, look_at

SCENE_FILE_VERSION = 1
_HIT_EPS = 1e-9


class SceneError(ValueError):
    """Raised for infeasible or malformed scene constructions."""


# ---------------------------------------------------------------------------
# textures


@dataclass(frozen=True)
class Texture:
    kind: str = "noise"  # "noise" | "checker" | "constant"
    scale: float = 0.9  # finest lattice spacing / checker size, scene units
    octaves: int = 4
    contrast: float = 1.0
    offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("noise", "checker", "constant"):
            raise SceneError(f"unknown texture kind {self.kind!r}")
        if not self.scale > 0:
            raise SceneError("texture scale must be positive")

    def evaluate(self, points: np.ndarray, scene_seed: int) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if self.kind == "constant":
            base = np.full(points.shape[:-1], 0.5)
        elif self.kind == "checker":
            k = np.floor(points / self.scale).astype(np.int64).sum(axis=-1)
            base = np.where(k % 2 == 0, 0.8, 0.2)
        else:
            base = fractal_noise(points, self.scale, self.octaves, scene_seed * 1000003 + self.seed)
        return np.clip(0.5 + self.contrast * (base - 0.5) + self.offset, 0.0, 1.0)


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _hash3(ix, iy, iz, seed: int) -> np.ndarray:
    """splitmix64 over a lattice coordinate; returns uniforms in [0, 1)."""
    with np.errstate(over="ignore"):
        h = (
            ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
            ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
            ^ iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
            ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        )
        h = (h ^ (h >> np.uint64(30))) * _M1
        h = (h ^ (h >> np.uint64(27))) * _M2
        h = h ^ (h >> np.uint64(31))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def value_noise(points: np.ndarray, spacing: float, seed: int) -> np.ndarray:
    """Quintic-interpolated lattice value noise in [0, 1]."""
    p = np.asarray(points, dtype=np.float64) / spacing
    i0 = np.floor(p)
    f = p - i0
    w = f * f * f * (f * (f * 6.0 - 15.0) + 10.0)
    i0 = i0.astype(np.int64)
    out = np.zeros(p.shape[:-1])
    for dx in (0, 1):
        wx = w[..., 0] if dx else 1.0 - w[..., 0]
        for dy in (0, 1):
            wy = w[..., 1] if dy else 1.0 - w[..., 1]
            for dz in (0, 1):
                wz = w[..., 2] if dz else 1.0 - w[..., 2]
                h = _hash3(i0[..., 0] + dx, i0[..., 1] + dy, i0[..., 2] + dz, seed)
                out += wx * wy * wz * h
    return out


def fractal_noise(points, finest: float, octaves: int, seed: int) -> np.ndarray:
    total = np.zeros(np.asarray(points).shape[:-1])
    norm = 0.0
    for k in range(octaves):
        amp = 1.0 / (1.0 + 0.25 * k)
        total += amp * value_noise(points, finest * 2.0**k, seed + 7919 * k)
        norm += amp
    return total / norm


# ---------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Rect:
    """Planar rectangle ``center + a*axis_u + b*axis_v``, ``|a|<=half_u``, ``|b|<=half_v``."""

    center: tuple
    axis_u: tuple
    axis_v: tuple
    half_u: float
    half_v: float
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        if not (self.half_u > 0 and self.half_v > 0):
            raise SceneError("rectangle extents must be positive")
        u = np.asarray(self.axis_u, float)
        v = np.asarray(self.axis_v, float)
        if abs(np.linalg.norm(u) - 1) > 1e-9 or abs(np.linalg.norm(v) - 1) > 1e-9 or abs(u @ v) > 1e-9:
            raise SceneError("rectangle axes must be orthonormal")

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.axis_u, self.axis_v)

    @property
    def area(self) -> float:
        return 4.0 * self.half_u * self.half_v

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        n = self.normal
        c = np.asarray(self.center, float)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((c - origins) @ n) / denom
        hit = np.abs(denom) > 1e-15
        p = origins + np.where(hit, t, 0.0)[:, None] * dirs - c
        hit &= np.abs(p @ np.asarray(self.axis_u)) <= self.half_u
        hit &= np.abs(p @ np.asarray(self.axis_v)) <= self.half_v
        hit &= t > _HIT_EPS
        return np.where(hit, t, np.inf)

    def faces(self) -> list["Rect"]:
        return [self]

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        p = np.asarray(points) - np.asarray(self.center)
        return (
            (np.abs(p @ self.normal) <= tol)
            & (np.abs(p @ np.asarray(self.axis_u)) <= self.half_u + tol)
            & (np.abs(p @ np.asarray(self.axis_v)) <= self.half_v + tol)
        )

    def to_dict(self) -> dict:
        return {
            "type": "rect",
            "center": list(map(float, self.center)),
            "axis_u": list(map(float, self.axis_u)),
            "axis_v": list(map(float, self.axis_v)),
            "half_u": float(self.half_u),
            "half_v": float(self.half_v),
            "texture": _texture_dict(self.texture),
        }


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        if not np.all(np.asarray(self.hi, float) > np.asarray(self.lo, float)):
            raise SceneError("box extents must be positive")

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo, float)
        hi = np.asarray(self.hi, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo - origins) * inv
            t2 = (hi - origins) * inv
        # 0 * inf on rays parallel to a slab
        t1 = np.where(np.isnan(t1), -np.inf, t1)
        t2 = np.where(np.isnan(t2), np.inf, t2)
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        t = np.where(tmin > _HIT_EPS, tmin, tmax)
        hit = (tmax >= tmin) & (t > _HIT_EPS)
        return np.where(hit, t, np.inf)

    def faces(self) -> list[Rect]:
        lo = np.asarray(self.lo, float)
        hi = np.asarray(self.hi, float)
        c = 0.5 * (lo + hi)
        h = 0.5 * (hi - lo)
        e = np.eye(3)
        out = []
        for ax in range(3):
            a, b = [k for k in range(3) if k != ax]
            for sgn in (-1.0, 1.0):
                fc = c.copy()
                fc[ax] += sgn * h[ax]
                out.append(Rect(tuple(fc), tuple(e[a]), tuple(e[b]), h[a], h[b], self.texture))
        return out

    @property
    def area(self) -> float:
        return sum(f.area for f in self.faces())

    def to_dict(self) -> dict:
        return {
            "type": "box",
            "lo": list(map(float, self.lo)),
            "hi": list(map(float, self.hi)),
            "texture": _texture_dict(self.texture),
        }


def fronto_plane(depth: float, half_size: float = 40.0, center_xy=(0.0, 0.0), texture: Texture | None = None) -> Rect:
    """Plane ``z = depth`` facing a camera at the origin looking down +z."""
    return Rect(
        (center_xy[0], center_xy[1], depth), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), half_size, half_size, texture or Texture()
    )


def slanted_plane(a: float, b: float, half_size: float = 40.0, texture: Texture | None = None) -> Rect:
    """Plane ``z = a + b*x``."""
    n = math.sqrt(1.0 + b * b)
    return Rect((0.0, 0.0, a), (1.0 / n, 0.0, b / n), (0.0, 1.0, 0.0), half_size * n, half_size, texture or Texture())


def _texture_dict(t: Texture) -> dict:
    return {
        "kind": t.kind,
        "scale": t.scale,
        "octaves": t.octaves,
        "contrast": t.contrast,
        "offset": t.offset,
        "seed": t.seed,
    }


def _primitive_from_dict(d: dict):
    tex = Texture(**d.get("texture", {}))
    kind = d.get("type")
    if kind == "rect":
        return Rect(tuple(d["center"]), tuple(d["axis_u"]), tuple(d["axis_v"]), d["half_u"], d["half_v"], tex)
    if kind == "box":
        return Box(tuple(d["lo"]), tuple(d["hi"]), tex)
    raise SceneError(f"unknown primitive type {kind!r}")


# ---------------------------------------------------------------------------
# scene, rig, rendering


@dataclass(frozen=True)
class SceneDefinition:
    primitives: tuple
    seed: int = 0
    background: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.primitives) == 0:
            raise SceneError("a scene needs at least one primitive")
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def cast(self, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest hit parameter and primitive index (-1 for misses) per ray."""
        best = np.full(len(origins), np.inf)
        index = np.full(len(origins), -1, dtype=np.int64)
        for k, prim in enumerate(self.primitives):
            t = prim.intersect(origins, dirs)
            closer = t < best
            best = np.where(closer, t, best)
            index = np.where(closer, k, index)
        return best, index

    def shade(self, points: np.ndarray, index: np.ndarray) -> np.ndarray:
        out = np.full(len(points), float(self.background))
        for k, prim in enumerate(self.primitives):
            sel = index == k
            if sel.any():
                out[sel] = prim.texture.evaluate(points[sel], self.seed)
        return out


@dataclass(frozen=True)
class CameraRig:
    """Reference camera looking down +z at ``target`` plus sources placed around it.

    ``ring`` spreads the sources evenly in azimuth at ``span_deg`` off the
    reference axis; ``arc`` places them on a horizontal arc within
    ``±span_deg``.
    """

    layout: str = "ring"
    target: tuple = (0.0, 0.0, 60.0)
    radius: float = 60.0
    span_deg: float = 15.0
    count: int = 5
    width: int = 160
    height: int = 128
    focal: float = 200.0
    phase_deg: float = 0.0
    depth_min: float = 24.0
    depth_interval: float = 4.0

    def __post_init__(self):
        if self.count < 2:
            raise SceneError("a rig needs at least two cameras")
        if self.layout not in ("ring", "arc"):
            raise SceneError(f"unknown rig layout {self.layout!r}")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.focal, self.focal, (self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def centers(self) -> np.ndarray:
        T = np.asarray(self.target, float)
        out = [T - np.array([0.0, 0.0, self.radius])]
        n = self.count - 1
        s = math.radians(self.span_deg)
        if self.layout == "ring":
            for k in range(n):
                phi = math.radians(self.phase_deg) + 2.0 * math.pi * k / n
                d = np.array([math.sin(s) * math.cos(phi), math.sin(s) * math.sin(phi), -math.cos(s)])
                out.append(T + self.radius * d)
        else:
            angles = np.linspace(-s, s, n) if n > 1 else np.array([s])
            if n > 1 and n % 2 == 1:
                angles = np.linspace(-s, s, n + 1)
                angles = angles[np.abs(angles) > 1e-12]
            for a in angles:
                out.append(T + self.radius * np.array([math.sin(a), 0.0, -math.cos(a)]))
        return np.stack(out)

    def cameras(self) -> list[Camera]:
        T = np.asarray(self.target, float)
        return [Camera(self.intrinsics, look_at(c, T), self.width, self.height) for c in self.centers()]

    def to_dict(self) -> dict:
        return {
            "layout": self.layout,
            "target": list(map(float, self.target)),
            "radius": self.radius,
            "span_deg": self.span_deg,
            "count": self.count,
            "width": self.width,
            "height": self.height,
            "focal": self.focal,
            "phase_deg": self.phase_deg,
            "depth_min": self.depth_min,
            "depth_interval": self.depth_interval,
        }


@dataclass
class RenderedView:
    image: np.ndarray  # H x W in [0, 1]
    gt_depth: np.ndarray  # H x W, 0 where no surface is hit
    camera: Camera
    primitive_index: np.ndarray | None = None


def camera_rays(cam: Camera, offset=(0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-space origins and directions, scaled so the hit parameter is camera depth."""
    vv, uu = np.mgrid[0 : cam.height, 0 : cam.width].astype(np.float64)
    pix = np.stack([uu.ravel() + offset[0], vv.ravel() + offset[1], np.ones(uu.size)], axis=-1)
    d_cam = pix @ cam.intrinsics.K_inv.T
    dirs = d_cam @ cam.pose.R  # R^T applied to each row
    origins = np.broadcast_to(cam.center, dirs.shape)
    return np.ascontiguousarray(origins), dirs


def _shade_rays(scene: SceneDefinition, origins, dirs):
    t, index = scene.cast(origins, dirs)
    hit = np.isfinite(t)
    depth = np.where(hit, t, 0.0)
    points = origins + depth[:, None] * dirs
    return scene.shade(points, np.where(hit, index, -1)), depth, np.where(hit, index, -1)


def render_view(scene: SceneDefinition, cam: Camera, supersample: int = 3) -> RenderedView:
    """Ray-cast one view.

    Depth and primitive ids come from the ray through each pixel center; the
    intensity is the mean over a ``supersample × supersample`` grid of rays
    inside the pixel footprint (box-filtered, so images are band-limited).
    """
    origins, dirs = camera_rays(cam)
    image, depth, index = _shade_rays(scene, origins, dirs)
    if supersample > 1:
        offs = (np.arange(supersample) + 0.5) / supersample - 0.5
        acc = np.zeros_like(image)
        for dv in offs:
            for du in offs:
                o, d = camera_rays(cam, (du, dv))
                acc += _shade_rays(scene, o, d)[0]
        image = acc / supersample**2
    shape = (cam.height, cam.width)
    return RenderedView(image.reshape(shape), depth.reshape(shape), cam, index.reshape(shape))


def render_rig(scene: SceneDefinition, rig: CameraRig) -> list[RenderedView]:
    return [render_view(scene, cam) for cam in rig.cameras()]


# ---------------------------------------------------------------------------
# occlusion scenarios


def _blocked(scene: SceneDefinition, center: np.ndarray, points: np.ndarray, target_index: int) -> np.ndarray:
    dirs = points - center
    t, index = scene.cast(np.broadcast_to(center, dirs.shape).copy(), dirs)
    return (index != target_index) & (t < 1.0 - 1e-9)


def occluded_views(scene: SceneDefinition, rig: CameraRig, points: np.ndarray, target_index: int = 0) -> np.ndarray:
    """Per source view, the fraction of ``points`` hidden behind another primitive."""
    centers = rig.centers()[1:]
    return np.array([_blocked(scene, c, points, target_index).mean() for c in centers])


def make_occlusion_case(
    seed: int,
    base_depth: float = 60.0,
    occluder_count: int = 2,
    n_sources: int = 4,
    region_half: float = 8.0,
    fraction: float = 0.15,
    span_deg: float = 15.0,
    width: int = 160,
    height: int = 128,
    focal: float = 200.0,
    texture_scale: float = 0.9,
) -> tuple[SceneDefinition, CameraRig]:
    """Background plane whose target square is hidden in exactly ``occluder_count`` source views.

    Each occluder is a thin box on the segment from its source camera to the
    region center, ``fraction`` of the way from the camera, sized to cover the
    region. The construction is verified by ray casting: designated views see
    none of the region, the others see all of it, and the reference view sees
    no occluder at all.
    """
    if not 0 <= occluder_count < n_sources:
        raise SceneError(f"occluder_count must be in [0, {n_sources}), got {occluder_count}")
    rng = np.random.default_rng(seed)
    rig = CameraRig(
        "ring",
        (0.0, 0.0, base_depth),
        base_depth,
        span_deg,
        n_sources + 1,
        width,
        height,
        focal,
        phase_deg=float(rng.uniform(0.0, 360.0)),
        depth_min=max(base_depth - 36.0, 4.0),
    )
    half_view = 0.5 * min(width, height) / focal * base_depth
    lim = max(half_view - region_half - 1.0, 0.0)
    region_center = np.array([rng.uniform(-lim, lim) * 0.5, rng.uniform(-lim, lim) * 0.5, base_depth])
    bg = fronto_plane(base_depth, half_size=3.0 * base_depth, texture=Texture(scale=texture_scale, seed=1))
    chosen = sorted(rng.choice(n_sources, size=occluder_count, replace=False).tolist()) if occluder_count else []
    centers = rig.centers()
    prims = [bg]
    for k in chosen:
        c = centers[k + 1]
        mid = c + fraction * (region_center - c)
        h = region_half * fraction * 1.6
        lo = mid - np.array([h, h, 0.05 * h])
        hi = mid + np.array([h, h, 0.05 * h])
        prims.append(Box(tuple(lo), tuple(hi), Texture(scale=texture_scale, seed=100 + k, offset=0.05)))
    scene = SceneDefinition(
        tuple(prims),
        seed=seed,
        meta={
            "kind": "occlusion",
            "region_center": region_center.tolist(),
            "region_half": region_half,
            "occluded_sources": chosen,
        },
    )
    # verification by ray casting
    g = np.linspace(-region_half, region_half, 11)
    gx, gy = np.meshgrid(g, g)
    pts = np.stack([gx.ravel() + region_center[0], gy.ravel() + region_center[1], np.full(gx.size, base_depth)], -1)
    frac = occluded_views(scene, rig, pts)
    for k in range(n_sources):
        want = 1.0 if k in chosen else 0.0
        if frac[k] != want:
            raise SceneError(f"occluder placement infeasible: source {k} occluded fraction {frac[k]:.2f}")
    ref = render_view(scene, rig.cameras()[0])
    if np.any(ref.primitive_index > 0):
        raise SceneError("occluder placement infeasible: an occluder is visible in the reference view")
    return scene, rig


# ---------------------------------------------------------------------------
# ground-truth clouds


def _sample_rect(rect: Rect, density: float) -> np.ndarray:
    n = rect.area * density
    ratio = rect.half_u / rect.half_v
    nu = max(1, int(round(math.sqrt(n * ratio))))
    nv = max(1, int(round(n / nu)))
    a = -rect.half_u + (np.arange(nu) + 0.5) * (2 * rect.half_u / nu)
    b = -rect.half_v + (np.arange(nv) + 0.5) * (2 * rect.half_v / nv)
    A, B = np.meshgrid(a, b, indexing="ij")
    return (
        np.asarray(rect.center, float)
        + A.ravel()[:, None] * np.asarray(rect.axis_u, float)
        + B.ravel()[:, None] * np.asarray(rect.axis_v, float)
    )


def sample_gt_cloud(scene: SceneDefinition, density: float) -> np.ndarray:
    """Stratified surface samples (cell centers) at ``density`` points per unit area."""
    if not density > 0:
        raise ValueError("density must be positive")
    parts = [_sample_rect(face, density) for prim in scene.primitives for face in prim.faces()]
    return np.concatenate(parts, axis=0)


def visible_points(scene: SceneDefinition, cameras: list[Camera], points: np.ndarray) -> np.ndarray:
    """Mask of points seen unoccluded and in-frame by at least one camera."""
    seen = np.zeros(len(points), dtype=bool)
    for cam in cameras:
        u, v, z = cam.project_world(points)
        inside = cam.in_bounds(u, v) & (z > 0)
        if not inside.any():
            continue
        c = cam.center
        dirs = points[inside] - c
        t, _ = scene.cast(np.broadcast_to(c, dirs.shape).copy(), dirs)
        seen[np.flatnonzero(inside)[t >= 1.0 - 1e-7]] = True
    return seen


# ---------------------------------------------------------------------------
# scene files


def scene_to_dict(scene: SceneDefinition, rig: CameraRig | None = None) -> dict:
    d = {
        "version": SCENE_FILE_VERSION,
        "seed": scene.seed,
        "background": scene.background,
        "primitives": [p.to_dict() for p in scene.primitives],
        "meta": scene.meta,
    }
    if rig is not None:
        d["rig"] = rig.to_dict()
    return d


def scene_from_dict(d: dict) -> tuple[SceneDefinition, CameraRig | None]:
    version = d.get("version")
    if version != SCENE_FILE_VERSION:
        raise SceneError(f"unsupported scene file version {version!r}")
    scene = SceneDefinition(
        tuple(_primitive_from_dict(p) for p in d["primitives"]),
        seed=int(d.get("seed", 0)),
        background=float(d.get("background", 0.0)),
        meta=d.get("meta", {}),
    )
    rig = CameraRig(**{**d["rig"], "target": tuple(d["rig"]["target"])}) if "rig" in d else None
    return scene, rig


def write_scene_file(path, scene: SceneDefinition, rig: CameraRig | None = None) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene, rig), indent=2, sort_keys=True) + "\n")


def read_scene_file(path) -> tuple[SceneDefinition, CameraRig | None]:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene file {path} is not valid JSON: {exc}") from exc
    return scene_from_dict(d)
