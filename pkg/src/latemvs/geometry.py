"""Pinhole cameras, cross-view projection and bilinear feature warping.

Conventions: pixel centers sit at integer coordinates, ``u`` is the column
and ``v`` the row. Depth is the camera-frame ``z`` of a point. Poses map
world points into the camera frame, ``X_cam = R @ X_world + t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import kernels

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]], dtype=np.float64
        )

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ],
            dtype=np.float64,
        )

    @classmethod
    def from_matrix(cls, K) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=np.float64)
        if K.shape != (3, 3):
            raise ValueError(f"intrinsic matrix must be 3x3, got {K.shape}")
        if abs(K[1, 0]) > 1e-12 or abs(K[2, 0]) > 1e-12 or abs(K[2, 1]) > 1e-12:
            raise ValueError("intrinsic matrix must be upper-triangular")
        if abs(K[2, 2] - 1.0) > 1e-12:
            raise ValueError("intrinsic matrix bottom row must be (0, 0, 1)")
        if abs(K[0, 1]) > 1e-12:
            raise ValueError("skewed intrinsics are not supported")
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]))

    def scaled(self, scale: float) -> "CameraIntrinsics":
        """Intrinsics for an image resampled by ``scale`` (area-aligned pixel grids)."""
        return CameraIntrinsics(
            self.fx * scale,
            self.fy * scale,
            (self.cx + 0.5) * scale - 0.5,
            (self.cy + 0.5) * scale - 0.5,
        )


@dataclass(frozen=True)
class CameraPose:
    """Rigid transform ``X' = R @ X + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R.T @ R, np.eye(3), atol=_ORTHO_TOL, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant must be +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "CameraPose":
        T = np.asarray(T, dtype=np.float64)
        if T.shape != (4, 4):
            raise ValueError(f"extrinsic matrix must be 4x4, got {T.shape}")
        return cls(T[:3, :3], T[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> "CameraPose":
        return CameraPose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "CameraPose") -> "CameraPose":
        """``self ∘ other``: apply ``other`` first."""
        return CameraPose(self.R @ other.R, self.R @ other.t + self.t)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.R.T + self.t


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    pose: CameraPose  # world -> camera
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"resolution must be positive, got {self.width}x{self.height}")

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def K(self) -> np.ndarray:
        return self.intrinsics.K

    @property
    def center(self) -> np.ndarray:
        return -self.pose.R.T @ self.pose.t

    def relative_to(self, ref: "Camera") -> CameraPose:
        """Pose taking ``ref``-frame points into this camera's frame."""
        return self.pose.compose(ref.pose.inverse())

    def scaled(self, scale: float) -> "Camera":
        w = int(round(self.width * scale))
        h = int(round(self.height * scale))
        return Camera(self.intrinsics.scaled(scale), self.pose, w, h)

    def backproject(self, u, v, depth) -> np.ndarray:
        """Camera-frame points for pixels at the given depths, shape ``(..., 3)``."""
        k = self.intrinsics
        u, v, depth = np.broadcast_arrays(
            np.asarray(u, np.float64), np.asarray(v, np.float64), np.asarray(depth, np.float64)
        )
        return np.stack([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth], axis=-1)

    def backproject_world(self, u, v, depth) -> np.ndarray:
        return self.pose.inverse().apply(self.backproject(u, v, depth))

    def project(self, X_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Project camera-frame points; returns ``(u, v, z)`` with NaN pixels for z <= 0."""
        X_cam = np.asarray(X_cam, dtype=np.float64)
        k = self.intrinsics
        z = X_cam[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(z > 0, k.fx * X_cam[..., 0] / z + k.cx, np.nan)
            v = np.where(z > 0, k.fy * X_cam[..., 1] / z + k.cy, np.nan)
        return u, v, z

    def project_world(self, X_world: np.ndarray):
        return self.project(self.pose.apply(X_world))

    def in_bounds(self, u, v) -> np.ndarray:
        u = np.asarray(u)
        v = np.asarray(v)
        return (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)


class PixelCoord(NamedTuple):
    u: float
    v: float

    @property
    def valid(self) -> bool:
        return math.isfinite(self.u) and math.isfinite(self.v)


INVALID_PIXEL = PixelCoord(math.nan, math.nan)


def project_to_source(p, d: float, ref_cam: Camera, src_cam: Camera) -> PixelCoord:
    """Map reference pixel ``p`` at depth ``d`` to its continuous source-view coordinate.

    Points landing behind the source camera return :data:`INVALID_PIXEL`.
    """
    if not d > 0:
        raise ValueError(f"depth must be positive, got {d}")
    u, v, _ = project_points(p[0], p[1], d, ref_cam, src_cam)
    if not np.isfinite(u):
        return INVALID_PIXEL
    return PixelCoord(float(u), float(v))


def project_points(u, v, depth, ref_cam: Camera, src_cam: Camera):
    """Vectorized reference-to-source reprojection.

    Returns ``(u_src, v_src, z_src)``; pixels behind the source camera are NaN.
    """
    rel = src_cam.relative_to(ref_cam)
    X = ref_cam.backproject(u, v, depth)
    return src_cam.project(rel.apply(X))


def bilinear_sample(grid, p) -> tuple[np.ndarray | float, bool]:
    """Sample ``grid`` (``H×W`` or ``H×W×C``) at continuous pixel ``p = (u, v)``.

    Coordinates outside ``[0, W-1] × [0, H-1]`` give zero and ``valid=False``.
    """
    grid = np.asarray(grid)
    if grid.size == 0:
        raise ValueError("cannot sample an empty grid")
    squeeze = grid.ndim == 2
    g = grid[..., None] if squeeze else grid
    H, W = g.shape[:2]
    u, v = float(p[0]), float(p[1])
    if not (np.isfinite(u) and np.isfinite(v)) or u < 0 or v < 0 or u > W - 1 or v > H - 1:
        zero = np.zeros(g.shape[2], dtype=np.float64)
        return (0.0 if squeeze else zero), False
    x0 = min(int(math.floor(u)), max(W - 2, 0))
    y0 = min(int(math.floor(v)), max(H - 2, 0))
    x1 = min(x0 + 1, W - 1)
    y1 = min(y0 + 1, H - 1)
    a = u - x0
    b = v - y0
    top = (1 - a) * g[y0, x0].astype(np.float64) + a * g[y0, x1].astype(np.float64)
    bot = (1 - a) * g[y1, x0].astype(np.float64) + a * g[y1, x1].astype(np.float64)
    out = (1 - b) * top + b * bot
    return (float(out[0]) if squeeze else out), True


def homography_warp(src_features, ref_cam: Camera, src_cam: Camera, d: float):
    """Warp source features onto the reference grid through the plane at depth ``d``.

    Returns ``(warped, mask)``; ``warped`` has the reference grid shape with the
    source channel count, and invalid samples are zero with ``mask`` false.
    """
    if not d > 0:
        raise ValueError(f"depth must be positive, got {d}")
    values = getattr(src_features, "values", src_features)
    values = np.asarray(values)
    squeeze = values.ndim == 2
    if squeeze:
        values = values[..., None]
    vv, uu = np.mgrid[0 : ref_cam.height, 0 : ref_cam.width].astype(np.float64)
    us, vs, _ = project_points(uu, vv, d, ref_cam, src_cam)
    warped, mask = kernels.gather_bilinear(values.astype(np.float32), us, vs)
    return (warped[..., 0] if squeeze else warped), mask


def look_at(center, target, up=(0.0, 1.0, 0.0)) -> CameraPose:
    """World-to-camera pose for a camera at ``center`` looking at ``target``.

    ``up`` is the world direction that should point down the image rows.
    """
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=np.float64), z)
    n = np.linalg.norm(x)
    if n < 1e-12:
        raise ValueError("up vector is parallel to the viewing direction")
    x /= n
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return CameraPose(R, -R @ center)


# -- MVSNet-style cam.txt ---------------------------------------------------


@dataclass(frozen=True)
class CamRecord:
    extrinsic: np.ndarray
    intrinsic: np.ndarray
    depth_min: float | None = None
    depth_interval: float | None = None
    extra: tuple = field(default_factory=tuple)

    def camera(self, width: int, height: int) -> Camera:
        return Camera(
            CameraIntrinsics.from_matrix(self.intrinsic),
            CameraPose.from_matrix(self.extrinsic),
            width,
            height,
        )


def write_cam_file(path, cam: Camera, depth_min: float | None = None, depth_interval: float | None = None):
    lines = ["extrinsic"]
    for row in cam.pose.matrix:
        lines.append(" ".join(repr(float(x)) for x in row))
    lines += ["", "intrinsic"]
    for row in cam.K:
        lines.append(" ".join(repr(float(x)) for x in row))
    if depth_min is not None:
        lines += ["", f"{float(depth_min)!r} {float(depth_interval)!r}"]
    Path(path).write_text("\n".join(lines) + "\n")


def read_cam_file(path) -> CamRecord:
    words = Path(path).read_text().split()
    try:
        i = words.index("extrinsic")
        extrinsic = np.array([float(w) for w in words[i + 1 : i + 17]]).reshape(4, 4)
        j = words.index("intrinsic")
        intrinsic = np.array([float(w) for w in words[j + 1 : j + 10]]).reshape(3, 3)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed camera file {path}: {exc}") from exc
    tail = [float(w) for w in words[j + 10 :]]
    dmin = tail[0] if len(tail) >= 1 else None
    dint = tail[1] if len(tail) >= 2 else None
    return CamRecord(extrinsic, intrinsic, dmin, dint, tuple(tail[2:]))
