import hashlib
import json
import logging
import subprocess
import sys

import numpy as np
import pytest

from ntlcut.cli import PREPROCESS_DEFAULTS, main
from ntlcut.gridio import read_raster, write_raster
from ntlcut.preprocess import FilterThresholds
from ntlcut.raster import Raster


def run(*argv):
    return main([*map(str, argv), "--log-level", "WARNING"])


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestSynth:
    def test_same_seed_same_manifest(self, tmp_path):
        assert run("synth", "--n-scenes", 3, "--out-dir", tmp_path / "a") == 0
        assert run("synth", "--n-scenes", 3, "--out-dir", tmp_path / "b") == 0
        for name in ("scenes.jsonl", "synth.json", "scenes/dmsp_00002.tif", "scenes/viirs_00000.tif"):
            assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)
        snap = json.loads((tmp_path / "a/synth_config.json").read_text())
        assert snap["resolved"]["seed"] == 42 and snap["resolved"]["n_scenes"] == 3

    def test_seed_changes_output(self, tmp_path):
        run("synth", "--n-scenes", 1, "--out-dir", tmp_path / "a")
        run("synth", "--n-scenes", 1, "--seed", 7, "--out-dir", tmp_path / "b")
        assert digest(tmp_path / "a/scenes/viirs_00000.tif") != digest(tmp_path / "b/scenes/viirs_00000.tif")

    def test_zero_scenes(self, tmp_path):
        assert run("synth", "--n-scenes", 0, "--out-dir", tmp_path) == 0
        assert (tmp_path / "scenes.jsonl").read_text() == ""

    def test_bad_path(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run("synth", "--n-scenes", 1, "--out-dir", blocker / "sub") != 0
        assert "ntlcut synth: error" in capsys.readouterr().err

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[synth]\nn_scenes = 2\nwidth = 64\nheight = 64\n")
        assert run("synth", "--config", cfg, "--height", 96, "-o", "n_scenes=1",
                   "--out-dir", tmp_path / "o") == 0
        r = json.loads((tmp_path / "o/synth_config.json").read_text())["resolved"]
        assert (r["n_scenes"], r["width"], r["height"]) == (1, 64, 96)
        assert read_raster(tmp_path / "o/scenes/viirs_00000.tif").shape == (96, 64)

    def test_unknown_key(self, tmp_path, capsys):
        assert run("synth", "-o", "nope=1", "--out-dir", tmp_path) != 0
        assert "nope" in capsys.readouterr().err


class TestPreprocess:
    def test_defaults_match_thresholds(self):
        t = FilterThresholds()
        assert (PREPROCESS_DEFAULTS["min_land"], PREPROCESS_DEFAULTS["max_lat"],
                PREPROCESS_DEFAULTS["tau_dark"], PREPROCESS_DEFAULTS["tau_uniform"],
                PREPROCESS_DEFAULTS["clip_q"]) == (t.min_land_fraction, t.max_abs_latitude,
                                                    t.tau_dark, t.tau_uniform, t.clip_quantile)

    def test_dry_run(self, tmp_path, capsys):
        run("synth", "--n-scenes", 4, "--out-dir", tmp_path / "raw")
        capsys.readouterr()
        assert run("preprocess", tmp_path / "raw", "--dry-run", "--out-dir", tmp_path / "d") == 0
        counts = json.loads(capsys.readouterr().out)
        assert {"extracted", "spatial", "radiometric", "train", "val", "test"} <= set(counts)
        assert not (tmp_path / "d").exists()

    def test_missing_mask_names_flag(self, tmp_path, capsys):
        r = Raster(np.ones((64, 64), np.float32), 0.1, (0.0, 10.0))
        write_raster(tmp_path / "d.tif", r)
        write_raster(tmp_path / "v.tif", r)
        assert run("preprocess", "--dmsp", tmp_path / "d.tif", "--viirs", tmp_path / "v.tif",
                   "--out-dir", tmp_path / "o") != 0
        assert "--land-mask" in capsys.readouterr().err

    def test_stage_order(self, tmp_path, capsys):
        assert run("preprocess", tmp_path, "--out-dir", tmp_path / "o") != 0
        assert "ntlcut synth" in capsys.readouterr().err

    def test_idempotent(self, tmp_path):
        run("synth", "--n-scenes", 4, "--format", "bin", "--out-dir", tmp_path / "raw")
        run("preprocess", tmp_path / "raw", "--out-dir", tmp_path / "a")
        run("preprocess", tmp_path / "raw", "--out-dir", tmp_path / "b")
        for name in ("manifest.jsonl", "dataset.json", "preprocess_config.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestLaterStages:
    def test_train_requires_preprocess(self, tmp_path, capsys):
        assert run("train", "--manifest", tmp_path) != 0
        assert "ntlcut preprocess" in capsys.readouterr().err

    def test_train_flags(self, small_dataset, tmp_path):
        assert run("train", "--manifest", small_dataset / "manifest_16.jsonl", "--epochs", 1,
                   "-o", "max_iterations=1", "--out-dir", tmp_path) == 0
        snap = json.loads((tmp_path / "train_config.json").read_text())
        assert snap["resolved"]["epochs_constant"] == 1 and snap["resolved"]["max_iterations"] == 1
        assert len((tmp_path / "losses.csv").read_text().splitlines()) == 2

    def test_infer_pads_and_crops(self, small_dataset, smoke_run, tmp_path, caplog):
        src = Raster(np.random.default_rng(0).uniform(0, 63, (70, 100)).astype(np.float32),
                     0.1, (5.0, 40.0))
        write_raster(tmp_path / "in.tif", src)
        with caplog.at_level(logging.WARNING):
            assert main(["infer", str(tmp_path / "in.tif"), "--checkpoint",
                         str(smoke_run[0] / "checkpoints/final.bin"), "--manifest",
                         str(small_dataset), "--out-dir", str(tmp_path / "o"),
                         "--log-level", "WARNING"]) == 0
        assert "zero-padding" in caplog.text
        out = read_raster(tmp_path / "o/in_calibrated.tif")
        assert out.shape == (70, 100) and out.origin == (5.0, 40.0)
        assert read_raster(tmp_path / "o/in_calibrated.bin").shape == (70, 100)
        rec = json.loads((tmp_path / "o/outputs.jsonl").read_text())
        assert rec["padded"] and rec["tiles"] == 4

    def test_identity_eval_then_report(self, small_dataset, tmp_path, capsys):
        assert run("eval", "--model", "identity", "--manifest", small_dataset,
                   "--out-dir", tmp_path / "e") == 0
        assert json.loads(capsys.readouterr().out.strip())["r_squared"] == pytest.approx(1.0)
        assert run("report", "--eval-dir", tmp_path / "e", "--out-dir", tmp_path / "r") == 0
        assert "| R² | 1.0000 |" in (tmp_path / "r/report.md").read_text()

    def test_eval_needs_checkpoint(self, small_dataset, tmp_path, capsys):
        assert run("eval", "--manifest", small_dataset, "--out-dir", tmp_path) != 0
        assert "--checkpoint" in capsys.readouterr().err

    def test_report_needs_eval(self, tmp_path):
        assert run("report", "--eval-dir", tmp_path) != 0


def test_module_entry_point(tmp_path):
    p = subprocess.run([sys.executable, "-m", "ntlcut", "--threads", "1", "synth", "--n-scenes",
                        "0", "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert p.returncode == 0, p.stderr
    assert (tmp_path / "synth.json").exists()
