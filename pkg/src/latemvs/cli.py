"""Command line: ``latemvs {synth,depth,fuse,eval,compare}``.

Exit codes: 0 success, 1 bad arguments or configuration, 2 failure while running.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import _accel, io
from .aggregation import AggregationStrategy
from .filtering import FilterConfig, filter_all, fuse_point_cloud
from .flex_views import run_flexible
from .geometry import read_cam_file, write_cam_file
from .metrics import (
    MetricsReport,
    SuiteScene,
    clean_suite,
    cloud_metrics,
    compare_strategies,
    depth_accuracy,
    occlusion_suite,
)
from .pipeline import CascadeConfig, ConfigError, DepthEstimate
from .scene import SceneError, read_scene_file, sample_gt_cloud, visible_points, write_scene_file

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
GT_DENSITY = 4.0  # ground-truth samples per unit area


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config


def load_config(path) -> tuple[CascadeConfig, FilterConfig]:
    """JSON document ``{"version": 1, "cascade": {...}, "filter": {...}}``."""
    if path is None:
        return CascadeConfig(), FilterConfig()
    try:
        d = io.load_json(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if d.get("version") != io.CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {d.get('version')!r}")
    unknown = set(d) - {"version", "cascade", "filter"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return CascadeConfig.from_dict(d.get("cascade", {})), FilterConfig.from_dict(d.get("filter", {}))


def _cascade_from_args(args) -> CascadeConfig:
    cfg, _ = load_config(args.config)
    kw = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    if args.strategy is not None or args.reducer is not None:
        kind = args.strategy or cfg.aggregation.kind
        reducer = args.reducer if kind == "late_preserved" else None
        if kind == "late_preserved" and reducer is None:
            reducer = cfg.aggregation.reducer or "best_peak"
        kw["aggregation"] = AggregationStrategy(kind, reducer)
    if args.shuffle_seed is not None:
        kw["shuffle_seed"] = args.shuffle_seed
    if args.logit_gain is not None:
        kw["logit_gain"] = args.logit_gain
    return CascadeConfig(**kw)


def _filter_from_args(args) -> FilterConfig:
    _, cfg = load_config(args.config)
    kw = cfg.to_dict()
    for name in FilterConfig.__dataclass_fields__:
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return FilterConfig.from_dict(kw)


# ---------------------------------------------------------------------------
# scene directories


def write_scene_dir(out: Path, item: SuiteScene) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_scene_file(out / "scene.json", item.scene, item.rig)
    for k, v in enumerate(item.views):
        io.write_pnm(out / f"view_{k:02d}.pgm", v.image)
        io.write_pfm(out / f"gt_{k:02d}.pfm", v.gt_depth)
        write_cam_file(out / f"cam_{k:02d}.txt", v.camera, item.rig.depth_min, item.rig.depth_interval)


def read_scene_dir(path: Path):
    cams = sorted(path.glob("cam_*.txt"))
    if not cams:
        raise UsageError(f"{path}: no cam_XX.txt files (run `latemvs synth` first)")
    images, cameras, gts = [], [], []
    depth_min = None
    for c in cams:
        k = c.stem.split("_")[1]
        img = io.read_pnm(path / f"view_{k}.pgm")
        rec = read_cam_file(c)
        cameras.append(rec.camera(img.shape[1], img.shape[0]))
        images.append(img)
        gt = path / f"gt_{k}.pfm"
        gts.append(io.read_pfm(gt).astype(np.float64) if gt.exists() else None)
        if depth_min is None:
            depth_min = rec.depth_min
    scene = None
    if (path / "scene.json").exists():
        scene, _ = read_scene_file(path / "scene.json")
    return images, cameras, gts, depth_min, scene


def _read_estimates(depth_dir: Path, n: int) -> list[DepthEstimate]:
    ests = []
    for k in range(n):
        dp, cp = depth_dir / f"depth_{k:02d}.pfm", depth_dir / f"conf_{k:02d}.pfm"
        if not dp.exists() or not cp.exists():
            raise UsageError(f"{depth_dir}: missing depth/confidence for view {k} (run `latemvs depth --all`)")
        d = io.read_pfm(dp).astype(np.float64)
        ests.append(DepthEstimate(d, io.read_pfm(cp).astype(np.float64), d > 0))
    return ests


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.scene:
        scene, rig = read_scene_file(args.scene)
        if rig is None:
            raise UsageError(f"{args.scene} has no rig section")
        items = [SuiteScene(Path(args.scene).stem, scene, rig)]
    else:
        items = clean_suite() if args.suite == "clean" else occlusion_suite(args.count)
    for item in items:
        write_scene_dir(out / item.name if len(items) > 1 or not args.scene else out, item)
        print(f"wrote {item.name}")
    return EXIT_OK


def cmd_depth(args) -> int:
    src = Path(args.input)
    images, cameras, _, depth_min, scene = read_scene_dir(src)
    cfg = _cascade_from_args(args)
    n = args.views or len(images)
    if not 2 <= n <= len(images):
        raise UsageError(f"--views must be between 2 and {len(images)}, got {n}")
    anchors = sample_gt_cloud(scene, 0.25) if scene is not None else None
    if depth_min is None:
        raise UsageError("camera files carry no depth range")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    refs = range(len(images)) if args.all else [args.ref]
    for r in refs:
        order = [r] + [i for i in range(len(images)) if i != r][: n - 1]
        res = run_flexible([images[i] for i in order], [cameras[i] for i in order], cfg, depth_min, anchor_points=anchors)
        est = res.estimate
        io.write_pfm(out / f"depth_{r:02d}.pfm", np.where(est.valid, est.depth, 0.0))
        io.write_pfm(out / f"conf_{r:02d}.pfm", np.where(est.valid, est.confidence, 0.0))
        manifest = res.manifest
        manifest["reference_view"] = r
        manifest["views"] = order
        if not args.timings:
            manifest.pop("timings_s", None)
        if args.stages:
            for s, st in enumerate(res.runs[0].stages):
                io.write_pfm(out / f"stage{s}_depth_{r:02d}.pfm", st.estimate.depth)
                io.write_pfm(out / f"stage{s}_conf_{r:02d}.pfm", st.estimate.confidence)
        io.dump_json(out / f"manifest_{r:02d}.json", manifest)
        print(f"view {r}: {res.mode} run, depth written")
    return EXIT_OK


def cmd_fuse(args) -> int:
    images, cameras, _, _, _ = read_scene_dir(Path(args.input))
    cfg = _filter_from_args(args)
    ests = _read_estimates(Path(args.depth), len(images))
    masks = [e.valid for e in ests] if args.no_filter else filter_all(ests, cameras, cfg)
    cloud = fuse_point_cloud(ests, masks, cameras, images, cfg)
    io.write_ply(args.out, cloud.xyz, cloud.rgb, ascii=args.ascii)
    print(f"{len(cloud)} points -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    images, cameras, gts, _, scene = read_scene_dir(Path(args.input))
    ests = _read_estimates(Path(args.depth), len(images))
    k = args.ref
    if gts[k] is None:
        raise UsageError(f"no ground truth for view {k}")
    cfg = _cascade_from_args(args)
    thr = args.threshold if args.threshold is not None else 2.0 * cfg.stages[-1].interval
    acc = depth_accuracy(ests[k], gts[k], thr)
    rep = MetricsReport(
        scene=Path(args.input).name,
        strategy=cfg.aggregation.label,
        config=cfg.to_dict(),
        preservation_ratio=None,
        informative_pixels=0,
        preservation_ratio_aggregated=None,
        depth_accuracy=acc.fraction,
        depth_threshold=float(thr),
    )
    if args.cloud:
        if scene is None:
            raise UsageError("cloud evaluation needs scene.json next to the views")
        xyz, _ = io.read_ply(args.cloud)
        gt = sample_gt_cloud(scene, GT_DENSITY)
        gt = gt[visible_points(scene, cameras, gt)]
        cm = cloud_metrics(xyz, gt, args.dist_cap)
        rep.cloud_accuracy, rep.cloud_completeness, rep.cloud_overall = cm.accuracy, cm.completeness, cm.overall
    rep.write(args.out)
    print(f"depth accuracy {acc.fraction} -> {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _cascade_from_args(args)
    if args.scene:
        items = []
        for p in args.scene:
            scene, rig = read_scene_file(p)
            if rig is None:
                raise UsageError(f"{p} has no rig section")
            items.append(SuiteScene(Path(p).stem, scene, rig))
    else:
        items = clean_suite() if args.suite == "clean" else occlusion_suite(args.count)
    table = compare_strategies(items, args.strategies, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.write(out / "report.json", out / "table.csv")
    for name, row in table.summary().items():
        print(f"{name:32s} ratio={row['preservation_ratio']} aggregated={row['preservation_ratio_aggregated']} acc={row['depth_accuracy']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_cascade_flags(p):
    p.add_argument("--config", help="JSON config file (version 1)")
    p.add_argument("--strategy", choices=["early_variance", "early_weighted", "late_preserved"])
    p.add_argument("--reducer", choices=["mean", "best_peak", "entropy_weighted"])
    p.add_argument("--shuffle-seed", type=int)
    p.add_argument("--logit-gain", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latemvs", description="Plane-sweep MVS with early/late cost aggregation.")
    ap.add_argument("--backend", choices=["numba", "numpy"], help="kernel backend (default: $LATEMVS_BACKEND or numba)")
    ap.add_argument("--threads", type=int, help="numba worker threads")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a scene file or a built-in suite")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scene", help="scene JSON with a rig section")
    g.add_argument("--suite", choices=["clean", "occlusion"])
    p.add_argument("--count", type=int, default=5, help="occlusion suite size")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("depth", help="run the cascade")
    p.add_argument("--input", required=True, help="scene directory from `synth`")
    p.add_argument("--out", required=True)
    p.add_argument("--ref", type=int, default=0)
    p.add_argument("--all", action="store_true", help="every view as reference in turn")
    p.add_argument("--views", type=int, help="N': number of views to use")
    p.add_argument("--stages", action="store_true", help="also write per-stage maps")
    p.add_argument("--timings", action="store_true", help="record timings in the manifest")
    _add_cascade_flags(p)
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("fuse", help="filter depth maps and fuse a point cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--depth", required=True, help="directory written by `depth --all`")
    p.add_argument("--out", required=True, help="output .ply")
    p.add_argument("--ascii", action="store_true")
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--config")
    p.add_argument("--conf-threshold", dest="conf_threshold", type=float)
    p.add_argument("--reproj-px-threshold", dest="reproj_px_threshold", type=float)
    p.add_argument("--abs-depth-threshold", dest="abs_depth_threshold", type=float)
    p.add_argument("--rel-depth-threshold", dest="rel_depth_threshold", type=float)
    p.add_argument("--depth-mode", dest="depth_mode", choices=["absolute", "relative"])
    p.add_argument("--dyn-view-weights", dest="dyn_view_weights", type=float, nargs=4, metavar="W")
    p.add_argument("--dyn-score-threshold", dest="dyn_score_threshold", type=float)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="metrics against ground truth")
    p.add_argument("--input", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--ref", type=int, default=0)
    p.add_argument("--cloud", help="fused .ply to score")
    p.add_argument("--threshold", type=float, help="depth accuracy threshold (default 2 x finest interval)")
    p.add_argument("--dist-cap", type=float, default=5.0)
    p.add_argument("--out", required=True, help="report .json")
    _add_cascade_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="strategy comparison table")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scene", nargs="+")
    g.add_argument("--suite", choices=["clean", "occlusion"])
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--strategies", nargs="+", default=["early_weighted", "late_preserved/best_peak"])
    p.add_argument("--out", required=True)
    _add_cascade_flags(p)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.backend:
            _accel.set_backend(args.backend)
        if args.threads:
            _accel.set_num_threads(args.threads)
        return args.func(args)
    except (UsageError, ConfigError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - anything else is a runtime failure
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
