import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from egocorridor.cli import main
from egocorridor.corridor_net import count_params, desk_spec, reference_spec
from egocorridor.netpbm import read_netpbm, read_pgm, write_pgm
from egocorridor.scene_forge import read_manifest


def _catalog(path: Path, n=8, **extra):
    scenes = [
        {"road": {"lane_width": 3.0 + 0.1 * i}, "marking": {"style": "solid" if i % 2 else "dashed"},
         "degradation": ["none", "heavy_rain", "faded_lines", "shadows"][i % 4], "severity": 0.6, "seed": i}
        for i in range(n)
    ]
    path.write_text(json.dumps(dict({"scenes": scenes}, **extra)))
    return path


def _digest(root: Path):
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file() and p.name != "run.json"
    }


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def dataset(workdir):
    cat = _catalog(workdir / "cat.json")
    assert main(["gen-data", str(cat), str(workdir / "data"), "--frames-per-spec", "5"]) == 0
    return workdir / "data"


@pytest.fixture(scope="module")
def trained(workdir, dataset):
    out = workdir / "train"
    assert main(["train", str(dataset), "desk", "default", str(out), "--epochs", "2", "--seed", "7"]) == 0
    return out


def test_gen_data_outputs(dataset):
    rows = read_manifest(dataset / "manifest.jsonl")
    assert len(rows) == 40
    assert len(list((dataset / "images").iterdir())) == 40
    run = json.loads((dataset / "run.json").read_text())
    assert run["subcommand"] == "gen-data" and run["results"]["frames"] == 40
    assert len(run["resolved"]["catalog"]["scenes"]) == 8


def test_gen_data_is_reproducible(workdir, dataset):
    again = workdir / "data2"
    assert main(["gen-data", str(workdir / "cat.json"), str(again), "--frames-per-spec", "5"]) == 0
    assert _digest(again) == _digest(dataset)


def test_gen_data_bad_lane_width(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenes": [{"road": {"lane_width": 7.0}}]}))
    assert main(["gen-data", str(bad), str(tmp_path / "o")]) == 2
    assert "lane_width" in capsys.readouterr().err


def test_gen_data_missing_catalog(tmp_path):
    assert main(["gen-data", str(tmp_path / "nope.json"), str(tmp_path / "o")]) == 3


def test_train_outputs(trained):
    for name in ("best.ecnw", "final.ecnw", "loss.csv", "split.json", "run.json"):
        assert (trained / name).is_file()
    lines = (trained / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_rmse,val_rmse" and len(lines) == 3


def test_train_is_reproducible(workdir, dataset, trained):
    out = workdir / "train2"
    assert main(["train", str(dataset), "desk", "default", str(out), "--epochs", "2", "--seed", "7"]) == 0
    assert (out / "loss.csv").read_bytes() == (trained / "loss.csv").read_bytes()


def test_train_full_size_over_budget(tmp_path, dataset, capsys):
    net = tmp_path / "net.json"
    net.write_text(json.dumps({"preset": "full", "widths": [8, 32, 64, 160]}))
    assert main(["train", str(dataset), str(net), "default", str(tmp_path / "o")]) == 2
    assert str(count_params(reference_spec(widths=(8, 32, 64, 160)))) in capsys.readouterr().err


def test_train_shape_mismatch(tmp_path, dataset):
    net = tmp_path / "net.json"
    net.write_text(json.dumps(desk_spec().resized(48, 80).to_dict()))
    assert main(["train", str(dataset), str(net), "default", str(tmp_path / "o"), "--epochs", "1"]) == 4


def test_infer_single_frame_with_overlay(tmp_path, dataset, trained, capsys):
    frame = sorted((dataset / "images").iterdir())[0]
    assert main(["infer", str(trained / "best.ecnw"), str(frame), str(tmp_path), "--overlay", "--raw"]) == 0
    mask = read_pgm(tmp_path / "masks" / f"{frame.stem}.pgm")
    assert mask.shape == (96, 160) and mask.dtype == np.uint8
    ov = read_netpbm(tmp_path / "overlays" / f"{frame.stem}.ppm")
    assert ov.shape == (96, 160, 3)
    assert (tmp_path / "raw" / f"{frame.stem}.ecnw").is_file()
    assert "frames/s" in capsys.readouterr().out
    run = json.loads((tmp_path / "run.json").read_text())
    assert run["results"]["frames_per_second"] > 0


def test_infer_frame_directory(tmp_path, dataset, trained):
    assert main(["infer", str(trained / "best.ecnw"), str(dataset / "images"), str(tmp_path)]) == 0
    assert len(list((tmp_path / "masks").glob("*.pgm"))) == 40
    (tmp_path / "none").mkdir()
    assert main(["infer", str(trained / "best.ecnw"), str(tmp_path / "none"), str(tmp_path / "o")]) == 2


def test_infer_dimension_mismatch(tmp_path, trained):
    write_pgm(tmp_path / "small.pgm", np.zeros((48, 80), np.uint8))
    assert main(["infer", str(trained / "best.ecnw"), str(tmp_path / "small.pgm"), str(tmp_path / "o")]) == 4


def test_infer_corrupt_checkpoint(tmp_path, dataset):
    bad = tmp_path / "bad.ecnw"
    bad.write_bytes(b"ECNW1\x00")
    frame = sorted((dataset / "images").iterdir())[0]
    assert main(["infer", str(bad), str(frame), str(tmp_path / "o")]) == 5


def test_eval(tmp_path, dataset, trained):
    assert main(["eval", str(trained / "best.ecnw"), str(dataset / "manifest.jsonl"), str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "eval.json").read_text())["summary"]
    assert summary["frames"] == 40 and 0.0 <= summary["mean_iou"] <= 1.0
    assert set(summary["per_category_iou"]) == {"none", "heavy_rain", "faded_lines", "shadows"}


def test_bench_classical_and_dnn(tmp_path, trained):
    cat = tmp_path / "seq.json"
    cat.write_text(json.dumps({"scenes": [{"name": "clean", "marking": {"style": "solid"}, "seed": 3}]}))
    assert main(["gen-data", str(cat), str(tmp_path / "seqs"), "--sequences"]) == 0
    assert (tmp_path / "seqs" / "clean" / "speed.csv").is_file()
    out = tmp_path / "bench"
    assert main(["bench", str(tmp_path / "seqs"), str(trained / "best.ecnw"), "default", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["detectors"] == ["dnn", "classical"]
    counts = report["categories"]["none"]["classical"]
    assert counts["total"] == 450 and counts["available"] >= 405
    text = (out / "report.txt").read_text()
    assert "classical frame-based" in text and "dnn seq.-based" in text
    assert (out / "run.json").is_file()


def test_bench_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["bench", str(tmp_path / "empty"), "none", "default", str(tmp_path / "o")]) == 2


def test_overlay_command(tmp_path):
    img = np.full((6, 8), 80, np.uint8)
    mask = np.zeros((6, 8), np.uint8)
    mask[3:, 2:6] = 255
    write_pgm(tmp_path / "i.pgm", img)
    write_pgm(tmp_path / "m.pgm", mask)
    assert main(["overlay", str(tmp_path / "i.pgm"), str(tmp_path / "m.pgm"), str(tmp_path / "o.ppm")]) == 0
    out = read_netpbm(tmp_path / "o.ppm")
    assert out.shape == (6, 8, 3) and (out[0, 0] == 80).all() and not (out[4, 3] == 80).all()
    write_pgm(tmp_path / "m2.pgm", np.zeros((5, 8), np.uint8))
    assert main(["overlay", str(tmp_path / "i.pgm"), str(tmp_path / "m2.pgm"), str(tmp_path / "o2.ppm")]) == 4


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "egocorridor", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
