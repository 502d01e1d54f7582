from __future__ import annotations

import json
import os

import numpy as np
import pytest

from hotrack import cli, synth
from hotrack.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main

GOLDEN = os.path.join(os.path.dirname(__file__), "golden", "report_schema.json")

SMALL = """
[synth]
frames = 8
k_min = 3
k_max = 4
sequences = 2
objects = box, cylinder
[noise]
sigma = 0
quantization = 0
dropout = 0
edge_band = 0
[object]
resolution = 64
[hand]
particles = 64
iterations = 8
passes = 1
[refine]
particles = 32
global_iterations = 4
finger_iterations = 4
passes = 1
[bench]
frames = 3
refine_frames = 1
"""


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.cfg"
    path.write_text(SMALL)
    return str(path)


@pytest.fixture(scope="module")
def grasp_dir(tmp_path_factory, small_cfg):
    out = tmp_path_factory.mktemp("grasp")
    assert main(["--config", small_cfg, "--seed", "1", "synth", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def object_dir(tmp_path_factory, small_cfg):
    out = tmp_path_factory.mktemp("object")
    assert main(["--config", small_cfg, "synth", "--out", str(out), "--kind", "object", "--sequences", "1"]) == 0
    return out


def _schema(obj):
    if isinstance(obj, dict):
        return {k: _schema(v) for k, v in sorted(obj.items()) if k != "config"}
    return type(obj).__name__ if not isinstance(obj, (int, float)) or isinstance(obj, bool) else "number"


def test_synth_manifest_and_determinism(grasp_dir, small_cfg, tmp_path):
    manifest = json.loads((grasp_dir / "manifest.json").read_text())
    assert len(manifest["sequences"]) == 2
    assert manifest["version"].startswith("0.1.0")
    assert manifest["config"]["run"]["seed"] == 1
    assert [s["seed"] for s in manifest["sequences"]] == [1000, 1001]
    again = tmp_path / "again"
    assert main(["--config", small_cfg, "--seed", "1", "synth", "--out", str(again)]) == EXIT_OK
    assert (again / "manifest.json").read_bytes() == (grasp_dir / "manifest.json").read_bytes()
    for name in ("seq_000", "seq_001"):
        for f in os.listdir(grasp_dir / name):
            assert (again / name / f).read_bytes() == (grasp_dir / name / f).read_bytes()


def test_synth_invalid_k_range(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[synth]\nframes = 10\nk_min = 3\nk_max = 12\n")
    assert main(["--config", str(bad), "synth", "--out", str(tmp_path / "o")]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "k_min/k_max" in err and "bad.cfg:4" in err


def test_track_object_and_online_contract(object_dir, small_cfg, tmp_path):
    seq = str(object_dir / "seq_000")
    full, part = tmp_path / "full.jsonl", tmp_path / "part.jsonl"
    assert main(["--config", small_cfg, "track", seq, "--mode", "object", "--out", str(full)]) == EXIT_OK
    assert main(["--config", small_cfg, "track", seq, "--mode", "object", "--out", str(part),
                 "--frames", "5"]) == EXIT_OK
    h_full, r_full = cli.read_results(full)
    h_part, r_part = cli.read_results(part)
    assert h_full["mode"] == "object" and h_full["frames"] == 8 and "config" in h_full
    assert r_full[:5] == r_part
    assert sum(r["object"]["diverged"] for r in r_full) == 0
    again = tmp_path / "again.jsonl"
    main(["--config", small_cfg, "track", seq, "--mode", "object", "--out", str(again)])
    assert again.read_bytes() == full.read_bytes()


def test_hand_mode_on_object_sequence(object_dir, small_cfg, tmp_path, capsys):
    code = main(["--config", small_cfg, "track", str(object_dir / "seq_000"), "--mode", "hand",
                 "--out", str(tmp_path / "h.jsonl")])
    assert code == EXIT_DATA
    assert "hand joints" in capsys.readouterr().err


def test_track_ho_schema(grasp_dir, small_cfg, tmp_path):
    out = tmp_path / "ho.jsonl"
    assert main(["--config", small_cfg, "track", str(grasp_dir / "seq_000"), "--mode", "ho",
                 "--out", str(out), "--frames", "2"]) == EXIT_OK
    _, records = cli.read_results(out)
    for r in records:
        hand = r["hand"]
        assert len(hand["joints"]) == 21 and len(hand["theta"]) == 45
        ref = hand["refined"]
        assert {"joints", "theta", "rotation", "translation", "gate_on", "improved"} <= set(ref)
    assert "shape" in records[0]["hand"]


def test_eval_ground_truth(grasp_dir, small_cfg, tmp_path):
    seq = synth.load_sequence(str(grasp_dir / "seq_001"))
    header, records = cli.ground_truth_results(seq)
    path = tmp_path / "gt.jsonl"
    with open(path, "w") as fh:
        for row in [header] + records:
            fh.write(json.dumps(row) + "\n")
    report_path, curve = tmp_path / "report.json", tmp_path / "curve.csv"
    assert main(["--config", small_cfg, "eval", str(path), str(grasp_dir / "seq_001"), "--out", str(report_path),
                 "--curve-csv", str(curve)]) == EXIT_OK
    report = json.loads(report_path.read_text())
    assert report["hand"]["mpjpe"] == 0.0 and report["hand"]["auc"] == pytest.approx(1.0)
    assert report["object"]["acc_5_5"] == 1.0 and report["object"]["acc_10_10"] == 1.0
    assert report["object"]["cd_mean"] == pytest.approx(0.0, abs=1e-12)
    assert report["hand"]["pd_max"] <= 0.005
    lines = curve.read_text().splitlines()
    assert lines[0].startswith("threshold_m") and len(lines) == 32
    with open(GOLDEN) as fh:
        assert _schema(report) == json.load(fh)


def test_eval_frame_mismatch(grasp_dir, small_cfg, tmp_path, capsys):
    seq = synth.load_sequence(str(grasp_dir / "seq_000"))
    header, records = cli.ground_truth_results(seq)
    path = tmp_path / "short.jsonl"
    with open(path, "w") as fh:
        for row in [header] + records[:3]:
            fh.write(json.dumps(row) + "\n")
    assert main(["--config", small_cfg, "eval", str(path), str(grasp_dir / "seq_000")]) == EXIT_DATA
    assert "frames" in capsys.readouterr().err


def test_missing_sequence(small_cfg, tmp_path):
    assert main(["--config", small_cfg, "track", str(tmp_path / "none"), "--out", str(tmp_path / "x")]) == EXIT_DATA


def test_bad_usage():
    with pytest.raises(SystemExit) as exc:
        main(["track"])
    assert exc.value.code == 2


@pytest.mark.slow
def test_bench_report(small_cfg, tmp_path):
    from hotrack.config import load_config

    out = tmp_path / "bench.json"
    assert main(["--config", small_cfg, "bench", "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert set(report["modules"]) == {"object", "hand", "refine"}
    for stats in report["modules"].values():
        assert set(stats) == {"frames", "mean_ms", "p95_ms"}
    assert report["modules"]["object"]["frames"] == 2

    # object tracker timing: repeatability and particle scaling
    def obj_ms(particles):
        cfg = load_config(small_cfg, {("object", "particles"): particles, ("bench", "frames"): 6,
                                      ("bench", "refine_frames"): 0, ("hand", "iterations"): 1})
        return cli.cmd_bench(cfg)["modules"]["object"]["mean_ms"]

    a, b = obj_ms(128), obj_ms(128)
    assert abs(a - b) / min(a, b) < 0.2
    assert obj_ms(512) <= 5.0 * a
