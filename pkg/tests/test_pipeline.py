import json
from dataclasses import replace

import pytest

from splatprint.errors import ConfigError, StageError
from splatprint.gsplat import TrainConfig
from splatprint.pipeline import STAGES, RunDir, default_run_config, load_run_config, run_pipeline, run_stage
from splatprint.scene import SceneConfig, format_scene_config

SMALL_SCENE = SceneConfig(width=48, height=48, focal_px=190.0, n_minutiae=20)


def small_config(out):
    cfg = default_run_config(out, scene=SMALL_SCENE, n_novel=4)
    return replace(cfg, train=replace(TrainConfig(), iters=8))


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    a = tmp_path_factory.mktemp("run_a")
    b = tmp_path_factory.mktemp("run_b")
    return a, run_pipeline(small_config(a)), b, run_pipeline(small_config(b))


def test_manifest_structure(two_runs):
    root, manifest, *_ = two_runs
    data = json.loads((root / "manifest.json").read_text())
    assert [s["name"] for s in data["stages"]] == list(STAGES)
    assert all(s["status"] == "ok" and s["outputs"] for s in data["stages"])
    assert data["metrics"] and data["metrics"] == manifest.metrics
    assert data["config_sha256"] == manifest.config_sha256
    # no absolute paths leak into the manifest
    assert str(root) not in (root / "manifest.json").read_text()


def test_manifests_identical(two_runs):
    a, _, b, _ = two_runs
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()


def test_stage_rerun_reproduces_outputs(two_runs):
    root, manifest, *_ = two_runs
    for name in ("global_align", "segment"):
        rec = run_stage(small_config(root), name)
        old = next(s for s in manifest.stages if s["name"] == name)
        assert rec["outputs"] == old["outputs"]


def test_expected_artifacts(two_runs):
    root = RunDir(two_runs[0])
    for rel in ("align/fused.ply", "train/gaussians.ply", "segment/gaussians.ply", "eval/metrics.json",
                "eval/novel.csv", "eval/registration.csv", "eval/depth.csv", "eval/novel_03.ppm"):
        assert (root / rel).is_file(), rel
    assert root.view_image(0).is_file() and root.view_mask(2).is_file()


def test_missing_inputs_raise_stage_error(tmp_path):
    with pytest.raises(StageError) as exc:
        run_stage(small_config(tmp_path), "gsplat_train")
    assert exc.value.stage == "gsplat_train"


def test_unknown_stage(tmp_path):
    with pytest.raises(ConfigError):
        run_stage(small_config(tmp_path), "nope")


def test_missing_scene_file(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nscene = missing.ini\n")
    with pytest.raises(ConfigError, match="missing.ini"):
        load_run_config(cfg)


def test_load_run_config(tmp_path):
    (tmp_path / "scene.ini").write_text(format_scene_config(SMALL_SCENE))
    (tmp_path / "run.ini").write_text(
        "[run]\nscene = scene.ini\nseed = 4\nout_dir = out\n"
        "[noise]\nsigma_mm = 0.05\n[train]\niters = 12\nrefine_poses = false\n"
        "[segment]\ntheta_keep = 0.4\n[eval]\nn_novel = 5\n"
    )
    cfg = load_run_config(tmp_path / "run.ini")
    assert cfg.scene == SMALL_SCENE and cfg.seed == 4 and cfg.noise.seed == 4
    assert cfg.noise.sigma_mm == 0.05 and cfg.train.iters == 12 and not cfg.train.refine_poses
    assert cfg.theta_keep == 0.4 and cfg.n_novel == 5 and cfg.out_dir == tmp_path / "out"
    assert cfg.sha256() != small_config(tmp_path).sha256()


def test_bad_run_config_values(tmp_path):
    (tmp_path / "run.ini").write_text("[train]\nunknown_key = 1\n")
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "run.ini")
    (tmp_path / "run.ini").write_text("[noise]\nsigma_mm = lots\n")
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "run.ini")
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.ini")
