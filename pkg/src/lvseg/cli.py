"""Batch command-line entry points.

Exit codes: 0 success, 2 usage/validation error, 3 I/O failure, 4 numeric
failure (non-finite loss; the last good checkpoint is retained).

Every command writes ``run_manifest.json`` (command, package version, seed,
config hash) next to its outputs and prints it, so runs are scriptable and
reproducible. In deterministic mode identical inputs and seeds produce
byte-identical artifacts.
"""

from __future__ import annotations

import dataclasses
import functools
import hashlib
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .analysis import (area_series, high_freq_energy, predict_video_masks,
                       shuffle_consistency_test, spectrum)
from .core import ClipSpec, RandomSource
from .ingest import IngestError, decode_video, load_dataset, load_dense_dataset
from .metrics import evaluate_split
from .models import InvalidConfigError, ModelConfig, build_model, load_checkpoint, swap_head
from .phantom import PhantomSpec, generate_dataset
from .train import NonFiniteLossError, TrainConfig, finetune, pretrain

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _config_hash(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _file_fingerprint(path) -> dict | None:
    """Location-independent reference to an input file (name + content hash),
    so manifests stay byte-identical across working directories."""
    if path is None:
        return None
    p = Path(path)
    return {"name": p.name,
            "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}


def _write_manifest(out_dir: Path, command: str, seed: int, payload) -> None:
    manifest = {"command": command, "version": __version__, "seed": seed,
                "config_hash": _config_hash(payload)}
    out_dir.mkdir(parents=True, exist_ok=True)
    text = json.dumps(manifest, indent=2, sort_keys=True)
    (out_dir / "run_manifest.json").write_text(text)
    click.echo(text)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NonFiniteLossError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (OSError, IOError) as exc:
            click.echo(f"I/O failure: {exc}", err=True)
            sys.exit(EXIT_IO)
        except (IngestError, InvalidConfigError, ValueError) as exc:
            click.echo(f"invalid input: {exc}", err=True)
            sys.exit(EXIT_USAGE)
    return wrapper


def _data_root(value: str | None) -> Path:
    root = value or os.environ.get("LVSEG_DATA_ROOT")
    if not root:
        raise click.UsageError("--data not given and LVSEG_DATA_ROOT unset")
    path = Path(root)
    if not path.exists():
        raise click.UsageError(f"data directory does not exist: {path}")
    return path


def _load_train_config(path: str | None, stage: str) -> tuple[TrainConfig, dict]:
    import yaml
    model_section: dict = {}
    if path is None:
        cfg = TrainConfig(stage=stage)
        return cfg, model_section
    p = Path(path)
    if not p.exists():
        raise click.UsageError(f"config file not found: {p}")
    data = yaml.safe_load(p.read_text()) or {}
    model_section = data.pop("model", {}) or {}
    data.setdefault("stage", stage)
    if data["stage"] != stage:
        raise click.UsageError(
            f"config stage {data['stage']!r} does not match command {stage!r}")
    return TrainConfig.from_dict(data), model_section


def _build_from_sections(index, train_cfg: TrainConfig, model_section: dict,
                         head: str):
    from .ingest import video_geometry
    entry = index.entries[0]
    h, w, _ = video_geometry(entry.path)
    cfg = {"family": "volumetric", "height": h, "width": w,
           "num_frames": train_cfg.num_frames, "head": head,
           "init_seed": train_cfg.seed}
    cfg.update(model_section)
    if "encoder_channels" in cfg:
        cfg["encoder_channels"] = tuple(cfg["encoder_channels"])
    return build_model(ModelConfig(**cfg))


def _check_compatible(ckpt_config: dict, train_cfg: TrainConfig, index) -> None:
    from .ingest import video_geometry
    h, w, _ = video_geometry(index.entries[0].path)
    expected = {"num_frames": train_cfg.num_frames, "height": h, "width": w}
    for key, want in expected.items():
        got = ckpt_config.get(key)
        if got != want:
            raise click.UsageError(
                f"checkpoint incompatible: field {key!r} is {got}, expected {want}")


@click.group()
@click.version_option(__version__)
def main():
    """Sparse-annotation echocardiogram video segmentation toolkit."""


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--count", type=int, required=True, help="number of phantom videos")
@click.option("--height", "--h", "height", type=int, default=64, show_default=True)
@click.option("--width", "--w", "width", type=int, default=64, show_default=True)
@click.option("--length", type=int, default=100, show_default=True)
@click.option("--period", type=float, default=20.0, show_default=True)
@click.option("--area-ratio", type=float, default=0.5, show_default=True)
@click.option("--speckle-sigma", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_guarded
def synth(out_dir, count, height, width, length, period, area_ratio,
          speckle_sigma, seed):
    """Generate a synthetic phantom dataset in EchoNet-style layout."""
    if count < 1:
        raise click.UsageError("--count must be >= 1")
    spec = PhantomSpec(height=height, width=width, length=length, period=period,
                       area_ratio=area_ratio, speckle_sigma=speckle_sigma,
                       seed=seed)
    index = generate_dataset(count, spec, out_dir)
    _write_manifest(out_dir, "synth", seed,
                    {"spec": dataclasses.asdict(spec), "count": count})
    click.echo(f"wrote {len(index.entries)} phantom videos to {out_dir}")


@main.command(name="pretrain")
@click.option("--data", type=str, default=None, help="dataset directory "
              "(default: $LVSEG_DATA_ROOT)")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--workers", type=int, default=1, show_default=True,
              help="data-loading concurrency cap")
@_guarded
def pretrain_cmd(data, config_path, out_dir, workers):
    """Self-supervised temporal-masking pretraining."""
    index = load_dataset(_data_root(data))
    cfg, model_section = _load_train_config(config_path, "pretrain")
    model = _build_from_sections(index, cfg, model_section, "reconstruction")
    ckpt = pretrain(model, index, cfg, out_dir)
    _write_manifest(out_dir, "pretrain", cfg.seed,
                    {"train": dataclasses.asdict(cfg), "model": model_section})
    click.echo(f"checkpoint: {ckpt}")


@main.command(name="finetune")
@click.option("--data", type=str, default=None)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--init", "init_ckpt", type=str, default=None,
              help="optional checkpoint to start from (pretrained or other)")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--workers", type=int, default=1, show_default=True)
@_guarded
def finetune_cmd(data, config_path, init_ckpt, out_dir, workers):
    """Weakly supervised LV segmentation fine-tuning."""
    index = load_dataset(_data_root(data))
    cfg, model_section = _load_train_config(config_path, "finetune")
    if init_ckpt:
        p = Path(init_ckpt)
        if not p.exists():
            raise click.UsageError(f"checkpoint not found: {p}")
        model, meta = load_checkpoint(p)
        _check_compatible(meta["config"], cfg, index)
        if model.config.head != "segmentation":
            model = swap_head(model, "segmentation")
    else:
        model = _build_from_sections(index, cfg, model_section, "segmentation")
    ckpt = finetune(model, index, cfg, out_dir)
    _write_manifest(out_dir, "finetune", cfg.seed,
                    {"train": dataclasses.asdict(cfg), "model": model_section,
                     "init": _file_fingerprint(init_ckpt)})
    click.echo(f"checkpoint: {ckpt}")


@main.command(name="eval")
@click.option("--data", type=str, default=None)
@click.option("--checkpoint", required=True, type=str)
@click.option("--split", type=click.Choice(["train", "val", "test"]),
              default="test", show_default=True)
@click.option("--dense/--sparse", default=False,
              help="evaluate against dense ground-truth masks")
@click.option("--report", "report_prefix", required=True,
              type=click.Path(path_type=Path))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@_guarded
def eval_cmd(data, checkpoint, split, dense, report_prefix, seed, workers):
    """Evaluate a checkpoint: per-frame DSC with bootstrap CIs."""
    root = _data_root(data)
    p = Path(checkpoint)
    if not p.exists():
        raise click.UsageError(f"checkpoint not found: {p}")
    model, meta = load_checkpoint(p)
    index = load_dense_dataset(root) if dense else load_dataset(root)
    if meta.get("extra", {}).get("stats"):
        index.stats = meta["extra"]["stats"]
    spec = ClipSpec(model.config.num_frames, 1)
    report = evaluate_split(model, index, spec, split=split, seed=seed)
    report_prefix.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(report_prefix.with_suffix(".csv"))
    report.write_json(report_prefix.with_suffix(".json"))
    _write_manifest(report_prefix.parent, "eval", seed,
                    {"checkpoint": _file_fingerprint(checkpoint), "split": split,
                     "dense": dense})
    for group, agg in report.aggregates.items():
        click.echo(f"{group}: {agg['mean']:.4f} "
                   f"({agg['ci_lo']:.4f}-{agg['ci_hi']:.4f}, n={agg['n']})")


@main.command()
@click.option("--data", type=str, default=None)
@click.option("--checkpoint", required=True, type=str)
@click.option("--video", "video_id", type=str, default=None,
              help="restrict to one video id")
@click.option("--split", type=click.Choice(["train", "val", "test"]),
              default="test", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--cutoff", type=float, default=0.25, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@_guarded
def analyze(data, checkpoint, video_id, split, out_dir, cutoff, seed, workers):
    """Area series, spectra, plots, and the frame-shuffle probe."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    root = _data_root(data)
    p = Path(checkpoint)
    if not p.exists():
        raise click.UsageError(f"checkpoint not found: {p}")
    model, meta = load_checkpoint(p)
    index = load_dataset(root)
    if meta.get("extra", {}).get("stats"):
        index.stats = meta["extra"]["stats"]
    entries = index.split(split)
    if video_id is not None:
        entries = [e for e in entries if e.video_id == video_id]
        if not entries:
            raise click.UsageError(f"video {video_id!r} not in split {split!r}")
    spec = ClipSpec(model.config.num_frames, 1)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = RandomSource(seed)

    shuffle_rows = []
    hf_energies = {}
    for k, entry in enumerate(entries):
        video = decode_video(entry.path)
        masks = predict_video_masks(model, video, spec, index.stats)
        series = area_series(masks)
        mags = spectrum(series)
        hf_energies[entry.video_id] = high_freq_energy(series, cutoff)
        np.savetxt(out_dir / f"{entry.video_id}_area.csv", series,
                   fmt="%d", header="lv_area_pixels", comments="")
        np.savetxt(out_dir / f"{entry.video_id}_spectrum.csv", mags,
                   fmt="%.8f", header="magnitude", comments="")
        fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
        axes[0].plot(series)
        axes[0].set(title=f"{entry.video_id} LV area", xlabel="frame",
                    ylabel="pixels")
        axes[1].plot(mags)
        axes[1].set(title="spectrum", xlabel="bin", ylabel="magnitude")
        fig.tight_layout()
        fig.savefig(out_dir / f"{entry.video_id}.png",
                    metadata={"Software": "lvseg"})
        plt.close(fig)
        shuffle_rows.append(shuffle_consistency_test(model, index, entry, spec,
                                                     rng.child(k)))

    summary = {
        "num_videos": len(entries),
        "cutoff_fraction": cutoff,
        "mean_high_freq_energy": float(np.mean(list(hf_energies.values()))),
        "high_freq_energy": hf_energies,
        "mean_dsc_ordered": float(np.mean([r.dsc_ordered for r in shuffle_rows])),
        "mean_dsc_shuffled": float(np.mean([r.dsc_shuffled for r in shuffle_rows])),
        "mean_delta": float(np.mean([r.delta for r in shuffle_rows])),
        "per_video": [{"video_id": r.video_id, "dsc_ordered": r.dsc_ordered,
                       "dsc_shuffled": r.dsc_shuffled, "delta": r.delta}
                      for r in shuffle_rows],
    }
    (out_dir / "shuffle_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True))
    _write_manifest(out_dir, "analyze", seed,
                    {"checkpoint": _file_fingerprint(checkpoint), "split": split,
                     "video": video_id, "cutoff": cutoff})
    click.echo(f"mean ordered DSC {summary['mean_dsc_ordered']:.4f}, "
               f"shuffled {summary['mean_dsc_shuffled']:.4f}, "
               f"delta {summary['mean_delta']:.4f}")


if __name__ == "__main__":
    main()
