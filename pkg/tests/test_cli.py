import json
import subprocess
import sys

import numpy as np
import pytest

from gareg.cli import main
from gareg.features import PointSet, load_points, save_points
from gareg.harness import control_grid
from gareg.imaging import Image, encode_pgm, load_image, save_image

SMALL = ["--population-size", "60", "--max-generations", "40", "--stall-generations", "15"]


def run(*argv):
    return main([str(a) for a in argv])


def strip_time(path):
    d = json.loads(path.read_text())
    d.pop("wall_time", None)
    return json.dumps(d, sort_keys=True)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    t = json.dumps({"tx": 6, "ty": -4, "theta": 0.2, "scale": 1.05, "shear_x": 0.02, "shear_y": 0.0})
    assert run("synth", "--ref", "procedural:shapes", "--transform", t, "--noise", 0, "--seed", 1,
               "--out", out) == 0
    return out


def test_synth_writes_case(synth_dir):
    names = {p.name for p in synth_dir.iterdir()}
    assert {"reference.pgm", "sensed.pgm", "ground_truth.json", "control_ref.csv", "control_sensed.csv"} <= names
    gt = json.loads((synth_dir / "ground_truth.json").read_text())
    assert gt["tx"] == 6 and gt["theta"] == 0.2
    assert len(load_points(synth_dir / "control_ref.csv")) == 25


def test_synth_identity_byte_equal(tmp_path):
    ident = '{"tx":0,"ty":0,"theta":0,"scale":1,"shear_x":0,"shear_y":0}'
    assert run("synth", "--ref", "procedural:checker", "--transform", ident, "--out", tmp_path) == 0
    assert (tmp_path / "sensed.pgm").read_bytes() == (tmp_path / "reference.pgm").read_bytes()


def test_synth_random_is_seeded(tmp_path):
    for d in ("a", "b"):
        assert run("synth", "--ref", "procedural:checker", "--size", 96, "--noise", 5, "--seed", 3,
                   "--out", tmp_path / d) == 0
    assert (tmp_path / "a" / "sensed.pgm").read_bytes() == (tmp_path / "b" / "sensed.pgm").read_bytes()
    assert (tmp_path / "a" / "ground_truth.json").read_text() == (tmp_path / "b" / "ground_truth.json").read_text()


def test_register_synthetic_pair(synth_dir, tmp_path):
    out = tmp_path / "reg"
    code = run("register", "--ref", synth_dir / "reference.pgm", "--sensed", synth_dir / "sensed.pgm",
               "--ref-control", synth_dir / "control_ref.csv", "--sensed-control", synth_dir / "control_sensed.csv",
               "--nodata", 0, "--seed", 2, "--out", out, "--format", "png")
    rep = json.loads((out / "report.json").read_text())
    assert code == (0 if rep["success"] else 2)
    assert rep["rmse"] < 1.5
    for name in ("warped.png", "overlay.png", "front.csv", "ref_features.csv", "sensed_features.csv"):
        assert (out / name).exists()
    assert load_image(out / "overlay.png").shape == (256, 256)


def test_register_self_reports_small_rmse(tmp_path):
    from gareg.harness import checker_image

    img = checker_image(256)
    save_image(img, tmp_path / "img.pgm")
    grid = PointSet(control_grid(256, 256, 5))
    save_points(grid, tmp_path / "grid.csv")
    code = run("register", "--ref", tmp_path / "img.pgm", "--sensed", tmp_path / "img.pgm",
               "--ref-control", tmp_path / "grid.csv", "--sensed-control", tmp_path / "grid.csv",
               "--seed", 0, "--out", tmp_path / "out")
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert code == 0
    assert rep["rmse"] < 0.5 and rep["success"] is True


def test_register_is_deterministic(synth_dir, tmp_path):
    for d in ("a", "b"):
        assert run("register", "--ref", synth_dir / "reference.pgm", "--sensed", synth_dir / "sensed.pgm",
                   "--mode", "semi", "--ref-points", synth_dir / "control_ref.csv",
                   "--sensed-points", synth_dir / "control_sensed.csv", "--seed", 7,
                   "--out", tmp_path / d, *SMALL) in (0, 2)
    assert strip_time(tmp_path / "a" / "report.json") == strip_time(tmp_path / "b" / "report.json")
    assert (tmp_path / "a" / "warped.pgm").read_bytes() == (tmp_path / "b" / "warped.pgm").read_bytes()
    assert (tmp_path / "a" / "front.csv").read_bytes() == (tmp_path / "b" / "front.csv").read_bytes()


def test_semi_automatic_without_points_is_usage_error(synth_dir, tmp_path, capsys):
    code = run("register", "--ref", synth_dir / "reference.pgm", "--sensed", synth_dir / "sensed.pgm",
               "--mode", "semi_automatic", "--out", tmp_path)
    assert code == 1
    assert "requires --ref-points" in capsys.readouterr().err


def test_missing_and_bad_inputs(tmp_path, capsys):
    assert run("register", "--ref", tmp_path / "nope.pgm", "--sensed", tmp_path / "nope.pgm",
               "--out", tmp_path) == 1
    assert "no such file" in capsys.readouterr().err
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"")
    assert run("features", "--image", bad, "--out", tmp_path) == 1
    assert "header" in capsys.readouterr().err
    assert run("register", "--ref", bad) == 1
    assert run("synth", "--ref", "procedural:nothing", "--out", tmp_path) == 1
    assert run("register", "--ref", bad, "--sensed", bad, "--bounds", "nope=1:2") == 1


def test_features_constant_image_exit2(tmp_path, capsys):
    save_image(Image(np.full((64, 64), 9.0)), tmp_path / "flat.pgm")
    assert run("features", "--image", tmp_path / "flat.pgm", "--out", tmp_path) == 2
    assert "insufficient features" in capsys.readouterr().err


def test_features_deterministic(synth_dir, tmp_path):
    for d in ("a", "b"):
        assert run("features", "--image", synth_dir / "reference.pgm", "--max-points", 50,
                   "--out", tmp_path / d) == 0
    a = (tmp_path / "a" / "features.csv").read_bytes()
    assert a == (tmp_path / "b" / "features.csv").read_bytes()
    assert len(a.splitlines()) == 50


def test_config_precedence(synth_dir, tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"ga": {"population_size": 40, "max_generations": 5, "seed": 1},
                                "rmse_threshold": 0.001, "detector": {"max_points": 80}}))
    out = tmp_path / "o"
    code = run("register", "--ref", synth_dir / "reference.pgm", "--sensed", synth_dir / "sensed.pgm",
               "--ref-control", synth_dir / "control_ref.csv", "--sensed-control", synth_dir / "control_sensed.csv",
               "--config", conf, "--max-generations", 3, "--out", out)
    rep = json.loads((out / "report.json").read_text())
    assert rep["seed"] == 1
    assert rep["phase1_generations"] <= 3
    assert rep["rmse_threshold"] == 0.001
    assert rep["n_ref_points"] <= 80
    assert code == 2 and rep["success"] is False


def test_eval_small_manifest_deterministic(tmp_path, capsys):
    manifest = {"size": 128, "case_seed": 5, "cases": [
        {"name": "c0", "image": "procedural:checker", "transform": "random", "noise_sigma": 0, "seeds": [0]},
        {"name": "c1", "image": "procedural:shapes", "transform":
            {"tx": 3, "ty": -2, "theta": 0.1, "scale": 1.0, "shear_x": 0.0, "shear_y": 0.0},
         "noise_sigma": 5, "seeds": [0]},
    ]}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(manifest))
    outs = []
    for d in ("a", "b"):
        assert run("eval", "--manifest", path, "--out", tmp_path / d, *SMALL) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    lines = outs[0].splitlines()
    assert lines[0] == "image,avg_rmse,sigma_rmse"
    assert len(lines) == 4 and lines[-1].startswith("success_rate ")
    for name in ("runs.csv", "suite.csv", "suite.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    for f in (tmp_path / "a" / "runs").glob("*.json"):
        assert strip_time(f) == strip_time(tmp_path / "b" / "runs" / f.name)


def test_inputs_not_mutated(synth_dir, tmp_path):
    before = {p.name: p.read_bytes() for p in synth_dir.iterdir() if p.is_file()}
    run("features", "--image", synth_dir / "sensed.pgm", "--nodata", 0, "--out", tmp_path)
    after = {p.name: p.read_bytes() for p in synth_dir.iterdir() if p.is_file()}
    assert before == after


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "gareg.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "register" in res.stdout and "0.299" in res.stdout


def test_pgm_encoding_helper_matches_file(tmp_path):
    img = Image(np.arange(12, dtype=float).reshape(3, 4))
    assert save_image(img, tmp_path / "x.pgm").read_bytes() == encode_pgm(img)
