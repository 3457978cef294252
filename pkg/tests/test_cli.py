import json

import pytest

from splatprint.cli import main
from splatprint.scene import SceneConfig, format_scene_config

SMALL_SCENE = SceneConfig(width=48, height=48, focal_px=190.0, n_minutiae=20)


@pytest.fixture
def scene_file(tmp_path):
    path = tmp_path / "scene.ini"
    path.write_text(format_scene_config(SMALL_SCENE))
    return path


def report(capsys):
    out = capsys.readouterr().out
    return dict(line.split(": ", 1) for line in out.strip().splitlines())


def test_align_pair_noise_free(scene_file, tmp_path, capsys):
    out = tmp_path / "t.json"
    assert main(["align-pair", "--scene", str(scene_file), "--views", "0,1", "--output", str(out)]) == 0
    rep = report(capsys)
    assert float(rep["rotation_error_deg"]) < 1e-6
    assert set(json.loads(out.read_text())) >= {"scale", "weighted_residual"}


def test_eval_reg_standalone(scene_file, tmp_path, capsys):
    csv = tmp_path / "reg.csv"
    assert main(["eval-reg", "--scene", str(scene_file), "--noise", "0.05", "--csv", str(csv)]) == 0
    rep = report(capsys)
    assert float(rep["registration_d_3d_mean"]) < float(rep["registration_d_2d_mean"])
    assert csv.read_text().startswith("view_a,view_b,d_3d_px")


def test_run_then_tools(scene_file, tmp_path, capsys):
    run = tmp_path / "run"
    args = ["--scene", str(scene_file), "--out", str(run)]
    assert main(["run", *args, "--iters", "5"]) == 0
    rep = report(capsys)
    assert "heldout_psnr_mean" in rep and (run / "manifest.json").is_file()

    ckpt = run / "train" / "gaussians.ply"
    assert main(["render", "--ckpt", str(ckpt), "--scene", str(scene_file), "--yaw", "10",
                 "--output", str(tmp_path / "r.ppm")]) == 0
    assert (tmp_path / "r.ppm").read_bytes().startswith(b"P6\n48 48\n255\n")
    capsys.readouterr()
    assert main(["segment", "--ckpt", str(ckpt), "--scene", str(scene_file), "--poses",
                 str(run / "train" / "poses.json"), "--output", str(tmp_path / "s.ply")]) == 0
    rep = report(capsys)
    assert int(rep["n_out"]) <= int(rep["n_after_decompose"])

    for cmd in (["eval-depth", "--uniform-weights"], ["eval-nvs", "--n-novel", "3"], ["eval-reg"]):
        assert main([cmd[0], "--out", str(run), *cmd[1:]]) == 0
    assert "csv" in report(capsys)


def test_gen_and_stepwise(scene_file, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["gen", "--scene", str(scene_file), "--out", str(run)]) == 0
    assert main(["align-global", "--out", str(run), "--scene", str(scene_file)]) == 0
    assert main(["train", "--out", str(run), "--iters", "2"]) == 0
    assert "gsplat_train.train_psnr_mean" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--scene", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 2
    assert "nope.ini" in capsys.readouterr().err
    assert main(["run"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2


def test_stage_failure_exit_3(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "empty")]) == 3
    assert "gsplat_train" in capsys.readouterr().err


def test_bad_views_flag(scene_file):
    assert main(["align-pair", "--scene", str(scene_file), "--views", "0,0"]) == 2
