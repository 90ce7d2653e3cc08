"""File formats: PFM, PLY, PGM/PPM, JSON reports and CSV tables."""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

REPORT_VERSION = 1
CONFIG_VERSION = 1


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, data: np.ndarray) -> None:
    """Little-endian PFM (scale −1), rows stored bottom to top."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
    elif data.ndim == 2:
        tag = b"Pf"
    else:
        raise ValueError(f"PFM holds H×W or H×W×3 data, got shape {data.shape}")
    H, W = data.shape[:2]
    header = tag + b"\n" + f"{W} {H}\n".encode() + b"-1.0\n"
    body = np.ascontiguousarray(np.flipud(data), dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    m = re.match(rb"(P[fF])\s+(\d+)\s+(\d+)\s+(\S+)\s", buf)
    if not m:
        raise ValueError(f"{path}: not a PFM file")
    tag, W, H, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    chans = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=W * H * chans, offset=m.end())
    shape = (H, W, 3) if chans == 3 else (H, W)
    return np.flipud(data.reshape(shape)).astype(np.float32)


# ---------------------------------------------------------------------------
# PLY


def write_ply(path, xyz: np.ndarray, rgb: np.ndarray | None = None, ascii: bool = False) -> None:
    """Point cloud with float32 x, y, z and uchar r, g, b."""
    xyz = np.asarray(xyz, dtype=np.float32).reshape(-1, 3)
    rgb = np.zeros((len(xyz), 3), np.uint8) if rgb is None else np.asarray(rgb, dtype=np.uint8).reshape(-1, 3)
    if len(rgb) != len(xyz):
        raise ValueError("xyz and rgb lengths differ")
    fmt = "ascii" if ascii else "binary_little_endian"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(xyz)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    ).encode()
    if ascii:
        lines = [
            f"{x!r} {y!r} {z!r} {r} {g} {b}"
            for (x, y, z), (r, g, b) in zip(xyz.astype(float).tolist(), rgb.tolist())
        ]
        body = ("\n".join(lines) + ("\n" if lines else "")).encode()
    else:
        rec = np.empty(len(xyz), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "u1"), ("g", "u1"), ("b", "u1")])
        rec["x"], rec["y"], rec["z"] = xyz[:, 0], xyz[:, 1], xyz[:, 2]
        rec["r"], rec["g"], rec["b"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
        body = rec.tobytes()
    Path(path).write_bytes(header + body)


def read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """Reads what :func:`write_ply` writes; returns ``(xyz float32, rgb uint8)``."""
    buf = Path(path).read_bytes()
    end = buf.find(b"end_header\n")
    if not buf.startswith(b"ply") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    header = buf[:end].decode()
    n = int(re.search(r"element vertex (\d+)", header).group(1))
    body = buf[end + len(b"end_header\n") :]
    if "format ascii" in header:
        rows = np.array([ln.split() for ln in body.decode().splitlines() if ln.strip()], dtype=np.float64).reshape(n, 6)
        return rows[:, :3].astype(np.float32), rows[:, 3:].astype(np.uint8)
    rec = np.frombuffer(body, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "u1"), ("g", "u1"), ("b", "u1")], count=n)
    return np.stack([rec["x"], rec["y"], rec["z"]], -1), np.stack([rec["r"], rec["g"], rec["b"]], -1)


# ---------------------------------------------------------------------------
# PGM / PPM


def write_pnm(path, image: np.ndarray) -> None:
    """8-bit binary PGM (H×W) or PPM (H×W×3) from values in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    px = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    if px.ndim == 2:
        tag = b"P5"
    elif px.ndim == 3 and px.shape[2] == 3:
        tag = b"P6"
    else:
        raise ValueError(f"cannot store image of shape {img.shape}")
    H, W = px.shape[:2]
    Path(path).write_bytes(tag + f"\n{W} {H}\n255\n".encode() + px.tobytes())


def read_pnm(path) -> np.ndarray:
    """Binary PGM/PPM as float64 in [0, 1]."""
    buf = Path(path).read_bytes()
    m = re.match(rb"(P[56])\s+(?:#.*\s+)*(\d+)\s+(\d+)\s+(\d+)\s", buf)
    if not m:
        raise ValueError(f"{path}: not a binary PGM/PPM file")
    W, H, maxval = int(m.group(2)), int(m.group(3)), int(m.group(4))
    chans = 3 if m.group(1) == b"P6" else 1
    dtype = np.uint8 if maxval < 256 else ">u2"
    data = np.frombuffer(buf, dtype=dtype, count=W * H * chans, offset=m.end()).astype(np.float64) / maxval
    return data.reshape((H, W, 3) if chans == 3 else (H, W))


# ---------------------------------------------------------------------------
# JSON / CSV


def dump_json(path, obj: dict) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> None:
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in columns})


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v
