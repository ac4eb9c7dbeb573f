"""Command line: subcommands, output files, stamps and exit codes."""

import csv
import os
from dataclasses import replace

import numpy as np
import pytest
import yaml

from lfextrap.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from lfextrap.config import load_config
from lfextrap.lightfield import MANIFEST_NAME, load_lightfield
from lfextrap.synthetic import save_scene_specs, single_plane_scene, two_plane_scene

TINY_CONFIG = {
    "data": {"n_train": 2, "n_eval": 1, "grid": [1, 6], "size": [16, 40], "seed": 3},
    "train": {"lr": 1e-3, "batch": 1, "patch_h": 8, "steps_a": 2, "steps_b": 2},
    "metrics": {"crop": 2, "n_planes": 7, "alpha_min": -0.6, "alpha_max": 0.6},
    "seed": 2,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.yaml"
    cfg.write_text(yaml.safe_dump(TINY_CONFIG))
    ckpt_dir = root / "train"
    assert main(["--config", str(cfg), "--serial", "--out", str(ckpt_dir), "train", "--quiet"]) == EXIT_OK
    grid = root / "grid"
    save_scene_specs([single_plane_scene(0.5, grid=(4, 4), size=(16, 16), seed=1)], root / "scenes.yaml")
    assert main(["--config", str(cfg), "--out", str(grid), "generate", str(root / "scenes.yaml")]) == EXIT_OK
    return {"root": root, "config": str(cfg), "checkpoint": str(ckpt_dir / "checkpoint.bin"),
            "lf": str(next(grid.glob("*/" + MANIFEST_NAME)).parent)}


def run(ws, out, *args):
    return main(["--config", ws["config"], "--out", str(ws["root"] / out), *args])


def test_version_exits_cleanly(capsys):
    assert main(["--version"]) == EXIT_OK
    assert "lfextrap" in capsys.readouterr().out


def test_train_outputs_and_stamp(workspace):
    out = workspace["root"] / "train"
    assert (out / "checkpoint.bin").exists() and (out / "train_log.jsonl").exists()
    stamp = yaml.safe_load(open(out / "stamp.yaml"))
    assert stamp["seed"] == 2 and stamp["serial"] is True and len(stamp["config_hash"]) == 16
    assert load_config(out / "config.yaml").seed == 2


def test_train_resumes_from_checkpoint(workspace):
    assert run(workspace, "resume", "train", "--quiet", "--checkpoint", workspace["checkpoint"]) == EXIT_OK
    assert (workspace["root"] / "resume" / "checkpoint.bin").exists()


def test_generate_from_config(workspace):
    assert run(workspace, "gen", "generate") == EXIT_OK
    names = sorted(p.name for p in (workspace["root"] / "gen").iterdir() if p.is_dir())
    assert names == ["eval000", "train000", "train001"]
    lf = load_lightfield(workspace["root"] / "gen" / "train000")
    assert (lf.grid_rows, lf.grid_cols, lf.height, lf.width) == (1, 6, 16, 40)


def test_generate_warns_outside_shear_coverage(workspace):
    spec = two_plane_scene(-3.0, 1.0, grid=(2, 4), size=(16, 16), seed=0)
    back = replace(spec.layers[0], disparity=-5.0)
    spec = replace(spec, layers=(back, spec.layers[1]), disparity_range=(-5.0, 3.0))
    save_scene_specs([spec], workspace["root"] / "wide.yaml")
    with pytest.warns(UserWarning, match="coverage"):
        assert run(workspace, "wide", "generate", str(workspace["root"] / "wide.yaml")) == EXIT_OK


def test_generate_rejects_invalid_spec_file(workspace):
    bad = workspace["root"] / "bad.yaml"
    bad.write_text("scenes:\n  - layers: []\n")
    assert run(workspace, "bad", "generate", str(bad)) == EXIT_USAGE


def test_extrapolate_four_to_eight(workspace):
    assert run(workspace, "ext", "extrapolate", workspace["lf"], "--checkpoint", workspace["checkpoint"]) == EXIT_OK
    ext = load_lightfield(workspace["root"] / "ext")
    assert (ext.grid_rows, ext.grid_cols) == (8, 8)
    assert ext.synthetic.sum() == 48
    src = load_lightfield(workspace["lf"])
    np.testing.assert_allclose(ext.views[2:6, 2:6], src.views, atol=1 / 255)


def test_extrapolate_iteration_cap_is_a_usage_error(workspace):
    code = run(workspace, "ext4", "extrapolate", workspace["lf"], "--checkpoint", workspace["checkpoint"],
               "--iterations", "4")
    assert code == EXIT_USAGE


def test_refocus_writes_stack(workspace):
    assert main(["--out", str(workspace["root"] / "stack"), "refocus", workspace["lf"]]) == EXIT_OK
    out = workspace["root"] / "stack"
    assert len(list(out.glob("refocus_*.png"))) == 61
    assert yaml.safe_load(open(out / "index.yaml"))["planes"] == 61
    assert (out / "stamp.yaml").exists()


def test_precision_overlay_and_brackets(workspace):
    code = run(workspace, "prec", "precision", workspace["lf"], workspace["lf"], "--label", "1.0X", "--label", "4.0X",
               "--alpha0", "0.0")
    assert code == EXIT_OK
    out = workspace["root"] / "prec"
    header = next(csv.reader(open(out / "precision_overlay.csv")))
    assert header == ["alpha_mid", "ssim_1.0X", "ssim_4.0X"]
    rows = list(csv.DictReader(open(out / "arp.csv")))
    assert [r["label"] for r in rows] == ["1.0X", "4.0X"]


def test_precision_label_mismatch(workspace):
    assert run(workspace, "prec2", "precision", workspace["lf"], "--label", "a", "--label", "b") == EXIT_USAGE


def test_evaluate_writes_report(workspace, capsys):
    assert run(workspace, "eval", "evaluate", "--checkpoint", workspace["checkpoint"]) == EXIT_OK
    rows = list(csv.DictReader(open(workspace["root"] / "eval" / "report.csv")))
    assert len(rows) == 2 and {r["protocol"] for r in rows} == {"row"}
    assert "psnr=" in capsys.readouterr().out


def test_ablate_with_pretrained_models(workspace):
    ck = workspace["checkpoint"]
    assert run(workspace, "abl", "ablate", "--model", f"full={ck}", "--model", f"no-fusion={ck}") == EXIT_OK
    rows = list(csv.DictReader(open(workspace["root"] / "abl" / "ablation.csv")))
    assert [r["variant"] for r in rows] == ["full", "no-fusion"]


def test_ablate_rejects_bad_model_spec(workspace):
    assert run(workspace, "abl2", "ablate", "--model", "nonsense") == EXIT_USAGE


def test_missing_config_is_usage_error(tmp_path):
    assert main(["--config", str(tmp_path / "nope.yaml"), "generate"]) == EXIT_USAGE


def test_malformed_config_is_usage_error(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("shear:\n  K: -2\n")
    assert main(["--config", str(bad), "generate"]) == EXIT_USAGE


def test_unknown_option_is_usage_error():
    assert main(["train", "--bogus"]) == EXIT_USAGE


def test_corrupt_manifest_is_runtime_error(tmp_path):
    lf = tmp_path / "lf"
    os.makedirs(lf)
    (lf / MANIFEST_NAME).write_text("grid: [unclosed\n")
    assert main(["--out", str(tmp_path / "o"), "refocus", str(lf)]) == EXIT_RUNTIME
