"""Numba vs numpy timings for the hot kernels and one full cascade run.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel is warmed up once per backend (JIT compile / cache load) before
timing; reported numbers are the best of ``--repeat`` runs. Outputs of the two
backends are compared so a speedup never hides a divergence.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from latemvs import _accel, kernels
from latemvs.filtering import FilterConfig, fuse_point_cloud
from latemvs.metrics import clean_suite
from latemvs.pipeline import CascadeConfig, run_cascade


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    H, W, C, D = 64, 80, 3, 32
    feats = rng.standard_normal((H, W, C)).astype(np.float32)
    us = rng.uniform(-2, W + 1, (H, W))
    vs = rng.uniform(-2, H + 1, (H, W))
    K = np.array([[100.0, 0, W / 2], [0, 100.0, H / 2], [0, 0, 1]])
    ang = np.radians(4.0)
    R = np.array([[np.cos(ang), 0, np.sin(ang)], [0, 1, 0], [-np.sin(ang), 0, np.cos(ang)]])
    t = np.array([-4.0, 0.0, 0.3])
    depths = np.broadcast_to(np.linspace(40, 80, D), (H, W, D)).copy()
    vol = rng.standard_normal((H, W, D)).astype(np.float32)
    valid = rng.random((H, W, D)) > 0.2
    return {
        "gather_bilinear": lambda: kernels.gather_bilinear(feats, us, vs),
        "pairwise_cost_volume": lambda: kernels.pairwise_cost_volume(feats, feats, np.linalg.inv(K), R, t, K, depths),
        "masked_box3": lambda: kernels.masked_box3(vol, valid),
    }


def _same(a, b) -> bool:
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, atol=1e-5) for x, y in zip(a, b))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    scene = clean_suite()[0]
    views = scene.views
    images = [v.image for v in views]
    cams = [v.camera for v in views]
    cfg = CascadeConfig()
    cases["run_cascade"] = lambda: run_cascade(images, cams, cfg, scene.rig.depth_min)
    ests = [run_cascade([images[i]] + images[:i] + images[i + 1 :], [cams[i]] + cams[:i] + cams[i + 1 :], cfg, scene.rig.depth_min).final for i in range(len(images))]
    masks = [e.valid for e in ests]
    cases["fuse_point_cloud"] = lambda: fuse_point_cloud(ests, masks, cams, images, FilterConfig())

    results = {}
    print(f"{'case':24s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}  agree")
    for name, fn in cases.items():
        row = {}
        outs = {}
        for be in ("numba", "numpy"):
            with _accel.use_backend(be):
                row[be] = best_of(fn, args.repeat)
                outs[be] = fn()
        if name == "run_cascade":
            agree = np.allclose(outs["numba"].final.depth, outs["numpy"].final.depth, atol=1e-4)
        elif name == "fuse_point_cloud":
            agree = np.array_equal(outs["numba"].source, outs["numpy"].source)
        else:
            agree = _same(outs["numba"], outs["numpy"])
        row["speedup"] = row["numpy"] / row["numba"]
        row["agree"] = bool(agree)
        results[name] = row
        print(f"{name:24s} {row['numba']:10.4f} {row['numpy']:10.4f} {row['speedup']:8.2f}  {agree}")

    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
