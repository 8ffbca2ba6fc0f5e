import json
import subprocess
import sys

import pytest

from unictrl.cli import main
from unictrl.io import save_checkpoint


@pytest.fixture
def ckpt(tiny_model, tmp_path):
    return save_checkpoint(tiny_model, tmp_path / "tiny.uctl")


def _error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return err[0]


def test_generate_writes_artifacts(ckpt, tmp_path, capsys):
    out = tmp_path / "vid"
    code = main(["generate", "--ckpt", str(ckpt), "--prompt", "red square moving right", "--seed", "3",
                 "--steps", "5", "--unictrl", "--c", "0.4", "--out", str(out)])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["unictrl"]["motion_degree"] == 0.4
    assert len(manifest["checkpoint"]["sha256"]) == 64
    assert (out / "video.gif").exists() and (out / "timing.json").exists()
    assert "timing" not in json.dumps(manifest)


def test_config_file_with_flag_override(ckpt, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"ckpt": str(ckpt), "prompt": "blue circle", "seed": 1, "steps": 4, "guidance": 2.0}))
    out = tmp_path / "vid"
    assert main(["generate", "--config", str(cfg), "--seed", "8", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 8 and manifest["sampler"]["guidance"] == 2.0


def test_evaluate_prints_report(ckpt, tmp_path, capsys):
    out = tmp_path / "vid"
    main(["generate", "--ckpt", str(ckpt), "--prompt", "x", "--steps", "3", "--out", str(out)])
    capsys.readouterr()
    assert main(["evaluate", "--video", str(out), "--block", "4", "--radius", "3"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) >= {"consistency_score", "motion_score", "per_frame_consistency", "per_pair_motion"}


def test_ablate_writes_report(ckpt, tmp_path):
    out = tmp_path / "abl"
    code = main(["ablate", "--ckpt", str(ckpt), "--prompt", "red square", "--modes", "baseline,full,c=0",
                 "--seeds", "0,1", "--out", str(out), "--steps", "3", "--workers", "2"])
    assert code == 0
    doc = json.loads((out / "report.json").read_text())
    assert set(doc["modes"]) == {"baseline", "full", "c=0"}
    assert doc["modes"]["full"]["runs"] == 2
    assert (out / "full_seed1" / "grid.png").exists()


def test_missing_checkpoint_error(tmp_path, capsys):
    code = main(["generate", "--ckpt", str(tmp_path / "nope.uctl"), "--prompt", "x", "--out", str(tmp_path / "o")])
    assert code != 0
    assert _error_line(capsys).startswith("error: io: ")


def test_corrupt_checkpoint_error(tmp_path, capsys):
    bad = tmp_path / "bad.uctl"
    bad.write_bytes(b"garbage bytes")
    assert main(["generate", "--ckpt", str(bad), "--prompt", "x"]) != 0
    assert _error_line(capsys).startswith("error: checkpoint: not a checkpoint")


def test_invalid_argument_error(ckpt, tmp_path, capsys):
    assert main(["generate", "--ckpt", str(ckpt), "--prompt", "x", "--c", "2.0", "--out", str(tmp_path / "o")]) != 0
    assert _error_line(capsys).startswith("error: invalid-argument: ")


def test_unknown_mode_error(ckpt, tmp_path, capsys):
    assert main(["ablate", "--ckpt", str(ckpt), "--prompt", "x", "--modes", "wat", "--seeds", "0",
                 "--out", str(tmp_path)]) != 0
    assert "unknown ablation mode" in _error_line(capsys)


def test_control_flag_implies_unictrl(ckpt, tmp_path):
    out = tmp_path / "vid"
    assert main(["generate", "--ckpt", str(ckpt), "--prompt", "x", "--steps", "3", "--c", "0.2", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["unictrl"]["motion_degree"] == 0.2


def test_bad_config_json(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert main(["train", "--config", str(cfg)]) != 0
    assert _error_line(capsys).startswith("error: config: ")


def test_train_command(tmp_path, capsys):
    cfg = tmp_path / "t.json"
    cfg.write_text(json.dumps({"steps": 2, "batch_size": 1, "model": {"model_dim": 16, "head_count": 2, "block_count": 1, "cond_dim": 16}}))
    out = tmp_path / "m.uctl"
    assert main(["train", "--config", str(cfg), "--seed", "4", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["checkpoint"] == str(out) and out.exists()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "unictrl", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()


def test_manifest_config_reproduces_video(ckpt, tmp_path):
    first = tmp_path / "first"
    main(["generate", "--ckpt", str(ckpt), "--prompt", "green square moving left", "--seed", "2",
          "--steps", "4", "--c", "0.4", "--kv-mismatch", "--out", str(first)])
    manifest = json.loads((first / "manifest.json").read_text())
    cfg = tmp_path / "again.json"
    cfg.write_text(json.dumps(manifest["config"]))
    again = tmp_path / "again"
    assert main(["generate", "--config", str(cfg), "--out", str(again)]) == 0
    for name in manifest["artifacts"]:
        assert (first / name).read_bytes() == (again / name).read_bytes(), name
