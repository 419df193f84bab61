import json
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from lvseg.cli import main
from lvseg.train import NonFiniteLossError

SYNTH_ARGS = ["--height", "24", "--width", "24", "--length", "16",
              "--period", "8", "--seed", "11"]

TRAIN_YAML = {
    "epochs": 1,
    "learning_rate": 3e-3,
    "batch_size": 4,
    "num_frames": 4,
    "period": 1,
    "seed": 0,
    "augment": {"enabled": False},
    "model": {"encoder_channels": [4, 8], "residual_units": 1},
}


def run(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env)


def write_config(path, stage, **overrides):
    data = dict(TRAIN_YAML, stage=stage, **overrides)
    Path(path).write_text(yaml.safe_dump(data))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> pretrain -> finetune chain shared by the read-only tests."""
    ws = tmp_path_factory.mktemp("cli")
    data = ws / "data"
    res = run("synth", "--out", data, "--count", "7", *SYNTH_ARGS)
    assert res.exit_code == 0, res.output

    pre_cfg = write_config(ws / "pre.yaml", "pretrain", mask_ratio=0.5)
    res = run("pretrain", "--data", data, "--config", pre_cfg,
              "--out", ws / "pre")
    assert res.exit_code == 0, res.output

    fin_cfg = write_config(ws / "fin.yaml", "finetune")
    res = run("finetune", "--data", data, "--config", fin_cfg,
              "--init", ws / "pre" / "pretrained.ckpt", "--out", ws / "fin")
    assert res.exit_code == 0, res.output
    return ws


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


# ---------------------------------------------------------------------------
# synth

def test_synth_layout_and_manifest(workspace):
    data = workspace / "data"
    assert len(list((data / "Videos").glob("*.lvt"))) == 7
    assert len(list((data / "Annotations").glob("*.lva"))) == 7
    assert (data / "FileList.csv").exists()
    manifest = json.loads((data / "run_manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["seed"] == 11


def test_synth_reruns_are_byte_identical(tmp_path):
    for name in ("a", "b"):
        res = run("synth", "--out", tmp_path / name, "--count", "3",
                  *SYNTH_ARGS)
        assert res.exit_code == 0, res.output
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_synth_rejects_zero_count(tmp_path):
    res = run("synth", "--out", tmp_path / "d", "--count", "0")
    assert res.exit_code == 2


def test_synth_rejects_bad_geometry(tmp_path):
    # length shorter than two periods is a validation error
    res = run("synth", "--out", tmp_path / "d", "--count", "2",
              "--length", "10", "--period", "8")
    assert res.exit_code == 2


# ---------------------------------------------------------------------------
# training commands

def test_pretrain_outputs(workspace):
    out = workspace / "pre"
    assert (out / "pretrained.ckpt").exists()
    assert (out / "train_log.jsonl").exists()
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["command"] == "pretrain"


def test_pretrain_reruns_are_byte_identical(workspace, tmp_path):
    cfg = workspace / "pre.yaml"
    for name in ("a", "b"):
        res = run("pretrain", "--data", workspace / "data", "--config", cfg,
                  "--out", tmp_path / name)
        assert res.exit_code == 0, res.output
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_finetune_outputs(workspace):
    out = workspace / "fin"
    assert (out / "finetuned.ckpt").exists()
    log = [json.loads(l) for l in
           (out / "train_log.jsonl").read_text().splitlines()]
    assert all("val_dsc" in rec for rec in log)


def test_stage_mismatch_rejected(workspace, tmp_path):
    res = run("pretrain", "--data", workspace / "data",
              "--config", workspace / "fin.yaml", "--out", tmp_path / "o")
    assert res.exit_code == 2


def test_unknown_config_key_rejected(workspace, tmp_path):
    cfg = tmp_path / "bad.yaml"
    data = dict(TRAIN_YAML, stage="pretrain", momentum=0.9)
    cfg.write_text(yaml.safe_dump(data))
    res = run("pretrain", "--data", workspace / "data", "--config", cfg,
              "--out", tmp_path / "o")
    assert res.exit_code == 2


def test_missing_data_root_rejected(tmp_path):
    res = run("pretrain", "--out", tmp_path / "o", env={"LVSEG_DATA_ROOT": ""})
    assert res.exit_code == 2


def test_data_root_env_var(workspace, tmp_path):
    cfg = workspace / "pre.yaml"
    res = run("pretrain", "--config", cfg, "--out", tmp_path / "o",
              env={"LVSEG_DATA_ROOT": str(workspace / "data")})
    assert res.exit_code == 0, res.output


def test_incompatible_init_checkpoint_rejected(workspace, tmp_path):
    cfg = write_config(tmp_path / "f8.yaml", "finetune", num_frames=8)
    res = run("finetune", "--data", workspace / "data", "--config", cfg,
              "--init", workspace / "pre" / "pretrained.ckpt",
              "--out", tmp_path / "o")
    assert res.exit_code == 2
    assert "num_frames" in res.output


def test_missing_init_checkpoint_rejected(workspace, tmp_path):
    res = run("finetune", "--data", workspace / "data",
              "--config", workspace / "fin.yaml",
              "--init", tmp_path / "nope.ckpt", "--out", tmp_path / "o")
    assert res.exit_code == 2


# ---------------------------------------------------------------------------
# evaluation and analysis

def test_eval_writes_reports(workspace, tmp_path):
    res = run("eval", "--data", workspace / "data",
              "--checkpoint", workspace / "fin" / "finetuned.ckpt",
              "--split", "test", "--report", tmp_path / "rep")
    assert res.exit_code == 0, res.output
    payload = json.loads((tmp_path / "rep.json").read_text())
    assert set(payload["aggregates"]) >= {"overall", "ED", "ES"}
    assert (tmp_path / "rep.csv").exists()
    assert "overall:" in res.output


def test_eval_dense_mode(workspace, tmp_path):
    res = run("eval", "--data", workspace / "data",
              "--checkpoint", workspace / "fin" / "finetuned.ckpt",
              "--split", "test", "--dense", "--report", tmp_path / "rep")
    assert res.exit_code == 0, res.output
    payload = json.loads((tmp_path / "rep.json").read_text())
    # dense ground truth labels every frame, so the per-frame list is long
    assert payload["aggregates"]["overall"]["n"] >= 16
    assert "middle" in payload["aggregates"]


def test_eval_missing_checkpoint(workspace, tmp_path):
    res = run("eval", "--data", workspace / "data",
              "--checkpoint", tmp_path / "nope.ckpt",
              "--report", tmp_path / "rep")
    assert res.exit_code == 2


def test_analyze_outputs(workspace, tmp_path):
    res = run("analyze", "--data", workspace / "data",
              "--checkpoint", workspace / "fin" / "finetuned.ckpt",
              "--split", "test", "--out", tmp_path / "an")
    assert res.exit_code == 0, res.output
    out = tmp_path / "an"
    area = list(out.glob("*_area.csv"))
    assert area and list(out.glob("*_spectrum.csv")) and list(out.glob("*.png"))
    summary = json.loads((out / "shuffle_summary.json").read_text())
    assert {"mean_dsc_ordered", "mean_dsc_shuffled",
            "mean_delta"} <= set(summary)
    series = [int(v) for v in area[0].read_text().splitlines()[1:]]
    assert len(series) == 16


def test_analyze_unknown_video_rejected(workspace, tmp_path):
    res = run("analyze", "--data", workspace / "data",
              "--checkpoint", workspace / "fin" / "finetuned.ckpt",
              "--video", "nope", "--out", tmp_path / "an")
    assert res.exit_code == 2


# ---------------------------------------------------------------------------
# failure exit codes

def test_io_failure_exit_code(workspace, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    res = run("pretrain", "--data", workspace / "data",
              "--config", workspace / "pre.yaml",
              "--out", blocker / "nested")
    assert res.exit_code == 3


def test_numeric_failure_exit_code(workspace, tmp_path, monkeypatch):
    import lvseg.cli as cli_mod

    def blow_up(*args, **kwargs):
        raise NonFiniteLossError("loss diverged")

    monkeypatch.setattr(cli_mod, "pretrain", blow_up)
    res = run("pretrain", "--data", workspace / "data",
              "--config", workspace / "pre.yaml", "--out", tmp_path / "o")
    assert res.exit_code == 4
