"""Hot inner loops, each with a numba kernel and a vectorized numpy twin.

The public functions dispatch on :func:`latemvs._accel.backend`. Every
per-cell reduction runs in a fixed order, so the numba results do not depend
on the worker count.
"""
from __future__ import annotations

import numpy as np

from ._accel import backend, njit, prange

# ---------------------------------------------------------------------------
# bilinear gather


@njit(cache=True, parallel=True)
def _gather_bilinear_nb(values, us, vs):
    H, W = us.shape
    Hs, Ws, C = values.shape
    out = np.zeros((H, W, C), dtype=np.float32)
    valid = np.zeros((H, W), dtype=np.bool_)
    for y in prange(H):
        for x in range(W):
            u = us[y, x]
            v = vs[y, x]
            if not (u >= 0.0 and v >= 0.0 and u <= Ws - 1 and v <= Hs - 1):
                continue
            x0 = min(int(np.floor(u)), max(Ws - 2, 0))
            y0 = min(int(np.floor(v)), max(Hs - 2, 0))
            x1 = min(x0 + 1, Ws - 1)
            y1 = min(y0 + 1, Hs - 1)
            a = u - x0
            b = v - y0
            for c in range(C):
                top = (1.0 - a) * values[y0, x0, c] + a * values[y0, x1, c]
                bot = (1.0 - a) * values[y1, x0, c] + a * values[y1, x1, c]
                out[y, x, c] = (1.0 - b) * top + b * bot
            valid[y, x] = True
    return out, valid


def _gather_bilinear_np(values, us, vs):
    Hs, Ws, C = values.shape
    with np.errstate(invalid="ignore"):
        valid = (us >= 0) & (vs >= 0) & (us <= Ws - 1) & (vs <= Hs - 1)
    u = np.where(valid, us, 0.0)
    v = np.where(valid, vs, 0.0)
    x0 = np.minimum(np.floor(u).astype(np.int64), max(Ws - 2, 0))
    y0 = np.minimum(np.floor(v).astype(np.int64), max(Hs - 2, 0))
    x1 = np.minimum(x0 + 1, Ws - 1)
    y1 = np.minimum(y0 + 1, Hs - 1)
    a = (u - x0)[..., None]
    b = (v - y0)[..., None]
    vals = values.astype(np.float64)
    top = (1.0 - a) * vals[y0, x0] + a * vals[y0, x1]
    bot = (1.0 - a) * vals[y1, x0] + a * vals[y1, x1]
    out = ((1.0 - b) * top + b * bot).astype(np.float32)
    out[~valid] = 0.0
    return out, valid


def gather_bilinear(values: np.ndarray, us: np.ndarray, vs: np.ndarray):
    """Bilinearly sample ``values`` (``Hs×Ws×C``) at per-pixel coordinates.

    NaN or out-of-range coordinates yield zeros and ``valid=False``.
    """
    values = np.ascontiguousarray(values, dtype=np.float32)
    us = np.ascontiguousarray(us, dtype=np.float64)
    vs = np.ascontiguousarray(vs, dtype=np.float64)
    if backend() == "numba":
        return _gather_bilinear_nb(values, us, vs)
    return _gather_bilinear_np(values, us, vs)


# ---------------------------------------------------------------------------
# plane-sweep dot-product cost


@njit(cache=True, parallel=True)
def _pairwise_cost_nb(ref, src, K_ref_inv, R, t, K_src, depths):
    H, W, D = depths.shape
    Hs, Ws, C = src.shape
    cost = np.zeros((H, W, D), dtype=np.float32)
    valid = np.zeros((H, W, D), dtype=np.bool_)
    for y in prange(H):
        for x in range(W):
            rx = K_ref_inv[0, 0] * x + K_ref_inv[0, 1] * y + K_ref_inv[0, 2]
            ry = K_ref_inv[1, 0] * x + K_ref_inv[1, 1] * y + K_ref_inv[1, 2]
            rz = K_ref_inv[2, 0] * x + K_ref_inv[2, 1] * y + K_ref_inv[2, 2]
            for j in range(D):
                d = depths[y, x, j]
                X0 = rx * d
                X1 = ry * d
                X2 = rz * d
                s0 = R[0, 0] * X0 + R[0, 1] * X1 + R[0, 2] * X2 + t[0]
                s1 = R[1, 0] * X0 + R[1, 1] * X1 + R[1, 2] * X2 + t[1]
                s2 = R[2, 0] * X0 + R[2, 1] * X1 + R[2, 2] * X2 + t[2]
                if not s2 > 0.0:
                    continue
                u = (K_src[0, 0] * s0 + K_src[0, 1] * s1 + K_src[0, 2] * s2) / s2
                v = (K_src[1, 0] * s0 + K_src[1, 1] * s1 + K_src[1, 2] * s2) / s2
                if not (u >= 0.0 and v >= 0.0 and u <= Ws - 1 and v <= Hs - 1):
                    continue
                x0 = min(int(np.floor(u)), max(Ws - 2, 0))
                y0 = min(int(np.floor(v)), max(Hs - 2, 0))
                x1 = min(x0 + 1, Ws - 1)
                y1 = min(y0 + 1, Hs - 1)
                a = u - x0
                b = v - y0
                acc = 0.0
                for c in range(C):
                    top = (1.0 - a) * src[y0, x0, c] + a * src[y0, x1, c]
                    bot = (1.0 - a) * src[y1, x0, c] + a * src[y1, x1, c]
                    acc += ref[y, x, c] * ((1.0 - b) * top + b * bot)
                cost[y, x, j] = acc / C
                valid[y, x, j] = True
    return cost, valid


def _pairwise_cost_np(ref, src, K_ref_inv, R, t, K_src, depths):
    H, W, D = depths.shape
    C = src.shape[2]
    vv, uu = np.mgrid[0:H, 0:W].astype(np.float64)
    pix = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    rays = pix @ K_ref_inv.T
    P = K_src @ R
    ray_src = rays @ P.T
    t_src = K_src @ t
    ref64 = ref.astype(np.float64)
    cost = np.zeros((H, W, D), dtype=np.float32)
    valid = np.zeros((H, W, D), dtype=bool)
    for j in range(D):
        h = ray_src * depths[:, :, j, None] + t_src
        z = h[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            us = np.where(z > 0, h[..., 0] / z, np.nan)
            vs = np.where(z > 0, h[..., 1] / z, np.nan)
        warped, ok = _gather_bilinear_np(src, us, vs)
        cost[:, :, j] = (ref64 * warped.astype(np.float64)).sum(axis=-1) / C
        valid[:, :, j] = ok
    cost[~valid] = 0.0
    return cost, valid


def pairwise_cost_volume(ref, src, K_ref_inv, R, t, K_src, depths):
    """Channel-mean dot product between reference features and warped source features.

    ``depths`` holds per-pixel hypotheses on the reference grid (``H×W×D``).
    Returns ``(cost, valid)`` with cost exactly zero wherever the warp is invalid.
    """
    args = (
        np.ascontiguousarray(ref, dtype=np.float32),
        np.ascontiguousarray(src, dtype=np.float32),
        np.ascontiguousarray(K_ref_inv, dtype=np.float64),
        np.ascontiguousarray(R, dtype=np.float64),
        np.ascontiguousarray(t, dtype=np.float64),
        np.ascontiguousarray(K_src, dtype=np.float64),
        np.ascontiguousarray(depths, dtype=np.float64),
    )
    if backend() == "numba":
        return _pairwise_cost_nb(*args)
    return _pairwise_cost_np(*args)


# ---------------------------------------------------------------------------
# masked 3x3x3 box filter, edge replication


@njit(cache=True, parallel=True)
def _masked_box3_nb(values, valid):
    H, W, D = values.shape
    out = np.zeros((H, W, D), dtype=np.float32)
    for y in prange(H):
        for x in range(W):
            for j in range(D):
                if not valid[y, x, j]:
                    continue
                num = 0.0
                den = 0.0
                for dj in range(-1, 2):
                    jj = min(max(j + dj, 0), D - 1)
                    for dy in range(-1, 2):
                        yy = min(max(y + dy, 0), H - 1)
                        for dx in range(-1, 2):
                            xx = min(max(x + dx, 0), W - 1)
                            if valid[yy, xx, jj]:
                                num += values[yy, xx, jj]
                                den += 1.0
                out[y, x, j] = num / den
    return out


def _masked_box3_np(values, valid):
    H, W, D = values.shape
    m = valid.astype(np.float64)
    vm = np.where(valid, values.astype(np.float64), 0.0)
    pv = np.pad(vm, 1, mode="edge")
    pm = np.pad(m, 1, mode="edge")
    num = np.zeros((H, W, D))
    den = np.zeros((H, W, D))
    for dj in range(3):
        for dy in range(3):
            for dx in range(3):
                num += pv[dy : dy + H, dx : dx + W, dj : dj + D]
                den += pm[dy : dy + H, dx : dx + W, dj : dj + D]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(valid, num / np.maximum(den, 1.0), 0.0)
    return out.astype(np.float32)


def masked_box3(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Normalized 3×3×3 box filter over valid cells; invalid cells stay zero."""
    values = np.ascontiguousarray(values, dtype=np.float32)
    valid = np.ascontiguousarray(valid, dtype=np.bool_)
    if backend() == "numba":
        return _masked_box3_nb(values, valid)
    return _masked_box3_np(values, valid)
