import json

import numpy as np
import pytest

from latemvs import io
from latemvs.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, load_config, main
from latemvs.metrics import clean_suite
from latemvs.pipeline import ConfigError
from latemvs.scene import write_scene_file


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A rendered fronto scene plus depth maps for every view."""
    root = tmp_path_factory.mktemp("cli")
    item = clean_suite()[0]
    write_scene_file(root / "plane.json", item.scene, item.rig)
    assert main(["synth", "--scene", str(root / "plane.json"), "--out", str(root / "scene")]) == EXIT_OK
    assert main(["depth", "--input", str(root / "scene"), "--out", str(root / "depth"), "--all"]) == EXIT_OK
    return root


def test_synth_layout(workdir):
    names = {p.name for p in (workdir / "scene").iterdir()}
    assert {"scene.json", "view_00.pgm", "gt_04.pfm", "cam_04.txt"} <= names


def test_depth_outputs(workdir):
    d = io.read_pfm(workdir / "depth" / "depth_00.pfm")
    gt = io.read_pfm(workdir / "scene" / "gt_00.pfm")
    assert d.shape == gt.shape == (128, 160)
    assert np.median(np.abs(d - gt)[d > 0]) < 0.5
    man = io.load_json(workdir / "depth" / "manifest_00.json")
    assert man["reference_view"] == 0 and "timings_s" not in man


def test_fuse_and_eval(workdir):
    ply = workdir / "cloud.ply"
    assert main(["fuse", "--input", str(workdir / "scene"), "--depth", str(workdir / "depth"), "--out", str(ply)]) == 0
    xyz, _ = io.read_ply(ply)
    assert len(xyz) > 1000
    rep = workdir / "report.json"
    assert main(["eval", "--input", str(workdir / "scene"), "--depth", str(workdir / "depth"),
                 "--cloud", str(ply), "--out", str(rep)]) == 0
    r = io.load_json(rep)
    assert 0.5 < r["depth_accuracy"] <= 1.0
    assert r["cloud_overall"] == pytest.approx(0.5 * (r["cloud_accuracy"] + r["cloud_completeness"]))


def test_fuse_flags_tighten(workdir):
    args = ["fuse", "--input", str(workdir / "scene"), "--depth", str(workdir / "depth")]
    main(args + ["--out", str(workdir / "a.ply")])
    main(args + ["--out", str(workdir / "b.ply"), "--conf-threshold", "0.8", "--dyn-score-threshold", "2.5"])
    main(args + ["--out", str(workdir / "c.ply"), "--no-filter"])
    n = [len(io.read_ply(workdir / f"{k}.ply")[0]) for k in "abc"]
    assert n[1] <= n[0] <= n[2]


def test_config_file_and_override(workdir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 1, "filter": {"conf_threshold": 0.9}}))
    args = ["fuse", "--input", str(workdir / "scene"), "--depth", str(workdir / "depth"), "--config", str(cfg)]
    assert main(args + ["--out", str(tmp_path / "x.ply")]) == 0
    assert main(args + ["--out", str(tmp_path / "y.ply"), "--conf-threshold", "0.3"]) == 0
    assert main(["fuse", "--input", str(workdir / "scene"), "--depth", str(workdir / "depth"), "--out", str(tmp_path / "z.ply")]) == 0
    y, z = (tmp_path / "y.ply").read_bytes(), (tmp_path / "z.ply").read_bytes()
    assert y == z  # the flag wins over the file
    assert len(io.read_ply(tmp_path / "x.ply")[0]) <= len(io.read_ply(tmp_path / "y.ply")[0])


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"version": 1, "cascade": {"shuffle_seed": 7}}))
    c, f = load_config(p)
    assert c.shuffle_seed == 7 and f.conf_threshold == 0.3
    for bad in ({"version": 2}, {"version": 1, "extra": {}}, {"version": 1, "cascade": {"bogus": 1}}):
        p.write_text(json.dumps(bad))
        with pytest.raises(ConfigError):
            load_config(p)


def test_exit_codes(workdir, tmp_path):
    assert main([]) == EXIT_USAGE
    assert main(["depth", "--input", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["depth", "--input", str(workdir / "scene"), "--out", str(tmp_path / "o"), "--views", "9"]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": 3}')
    assert main(["depth", "--input", str(workdir / "scene"), "--out", str(tmp_path / "o"), "--config", str(bad)]) == EXIT_USAGE
    # a truncated depth map is a runtime failure, not a usage error
    d = tmp_path / "d"
    d.mkdir()
    for k in range(5):
        (d / f"depth_{k:02d}.pfm").write_bytes(b"Pf\n160 128\n-1.0\n")
        (d / f"conf_{k:02d}.pfm").write_bytes(b"Pf\n160 128\n-1.0\n")
    assert main(["fuse", "--input", str(workdir / "scene"), "--depth", str(d), "--out", str(tmp_path / "x.ply")]) == EXIT_RUNTIME


def test_compare(tmp_path):
    rc = main(["compare", "--suite", "occlusion", "--count", "1", "--out", str(tmp_path)])
    assert rc == 0
    rep = io.load_json(tmp_path / "report.json")
    assert set(rep["summary"]) == {"early_weighted", "late_preserved/best_peak"}
    assert len(io.read_csv(tmp_path / "table.csv")) == 2


def test_help_is_success(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "synth" in capsys.readouterr().out
