"""Two-stage training: self-supervised pretraining on masked-clip
reconstruction, then weakly supervised fine-tuning where only labeled
frames contribute gradients.

Both stages use AdamW, per-clip augmentation, and per-dataset channel
normalization ((x - mean) / std applied to non-padding frames; masking and
padding zeros live in normalized space). Every epoch appends one
line-delimited JSON record to ``train_log.jsonl``; in deterministic mode the
wall-time field is written as 0.0 so artifacts are byte-identical across
runs.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from .augment import AugmentConfig, augment
from .core import ClipSpec, RandomSource, SparseLabelSet, VideoTensor
from .ingest import DatasetIndex, IndexEntry, decode_video
from .losses import reconstruction_loss, total_seg_loss
from .masking import default_ratio, mask_clip, num_masked_frames
from .metrics import dsc
from .models import (SegmentationModel, clip_to_tensor,
                     output_to_array, save_checkpoint, swap_head)
from .sampler import extract, sample_eval_clip, sample_train_clip


class NonFiniteLossError(RuntimeError):
    """Training loss became NaN/Inf; the last good checkpoint is retained."""


@dataclass
class TrainConfig:
    stage: str = "finetune"  # pretrain | finetune
    epochs: int | None = None  # default: 100 for pretrain, 70 for finetune
    learning_rate: float = 3e-4
    weight_decay: float = 1e-5
    batch_size: int = 4
    num_frames: int = 32
    period: int = 1
    mask_ratio: float = field(default_factory=default_ratio)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.epochs is None:
            self.epochs = 100 if self.stage == "pretrain" else 70
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.stage == "pretrain":
            num_masked_frames(self.num_frames, self.mask_ratio)  # range check

    @property
    def clip_spec(self) -> ClipSpec:
        return ClipSpec(self.num_frames, self.period)

    def to_file(self, path) -> None:
        data = asdict(self)
        Path(path).write_text(yaml.safe_dump(data, sort_keys=True))

    @staticmethod
    def from_file(path) -> "TrainConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        return TrainConfig.from_dict(data)

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        data = dict(data)
        aug = data.pop("augment", None)
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = TrainConfig(**data)
        if aug is not None:
            cfg.augment = AugmentConfig(**aug) if isinstance(aug, dict) else aug
        return cfg


class VideoCache:
    """Raw [0, 1] pixel volumes, decoded once per video."""

    def __init__(self):
        self._cache: dict[str, np.ndarray] = {}

    def get(self, entry: IndexEntry) -> np.ndarray:
        if entry.video_id not in self._cache:
            self._cache[entry.video_id] = decode_video(entry.path)
        return self._cache[entry.video_id]


def normalize_clip(clip: VideoTensor, stats: dict) -> VideoTensor:
    """Per-channel (x - mean) / std on real frames; padding stays zero."""
    mean = np.asarray(stats.get("mean", [0, 0, 0]), dtype=np.float32)
    std = np.asarray(stats.get("std", [1, 1, 1]), dtype=np.float32)
    pixels = (clip.pixels - mean) / std
    for k, pad in enumerate(clip.pad_flags):
        if pad:
            pixels[:, :, k, :] = 0.0
    return VideoTensor(pixels, clip.frame_indices, clip.pad_flags)


def _seed_torch(config: TrainConfig) -> None:
    torch.manual_seed(config.seed)
    if config.deterministic:
        torch.use_deterministic_algorithms(True)


def _check_finite(loss: torch.Tensor, context: str) -> None:
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss during {context}: {loss.item()}")


def _log_epoch(log_path, record: dict, deterministic: bool,
               started: float) -> None:
    record["wall_time"] = 0.0 if deterministic else round(time.time() - started, 3)
    with open(log_path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _batches(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def pretrain(model: SegmentationModel, index: DatasetIndex, config: TrainConfig,
             out_dir) -> Path:
    """Self-supervised reconstruction pretraining.

    Each epoch draws one randomly positioned clip per training video, masks
    it at the configured ratio, and minimizes batch-mean MSE against the
    unmasked clip. Returns the checkpoint path.
    """
    if model.config.head != "reconstruction":
        raise ValueError("pretraining requires a reconstruction head")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "pretrained.ckpt"
    log_path = out_dir / "train_log.jsonl"
    log_path.write_text("")

    _seed_torch(config)
    rng = RandomSource(config.seed)
    cache = VideoCache()
    entries = index.split("train")
    if not entries:
        raise ValueError("dataset has no training videos")
    spec = config.clip_spec
    opt = torch.optim.AdamW(model.net.parameters(), lr=config.learning_rate,
                            weight_decay=config.weight_decay)
    history = []
    started = time.time()
    for epoch in range(config.epochs):
        model.net.train()
        order = rng.permutation(len(entries))
        losses = []
        for batch_ids in _batches(list(order), config.batch_size):
            inputs, targets = [], []
            for i in batch_ids:
                entry = entries[int(i)]
                video = cache.get(entry)
                anchor = rng.integers(0, entry.num_frames)
                clip_idx = sample_train_clip(entry.num_frames, anchor, spec, rng)
                clip, _ = extract(video, clip_idx)
                clip, _ = augment(clip, None, rng, config.augment)
                clip = normalize_clip(clip, index.stats)
                masked = mask_clip(clip, config.mask_ratio, rng)
                inputs.append(clip_to_tensor(masked.clip))
                targets.append(clip_to_tensor(clip))
            x = torch.cat(inputs)
            y = torch.cat(targets)
            pred = model.net(x)
            loss = reconstruction_loss(y, pred)
            _check_finite(loss, f"pretrain epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        mean_loss = float(np.mean(losses))
        history.append(mean_loss)
        save_checkpoint(model, ckpt_path, stage="pretrained",
                        extra={"epoch": epoch, "loss_history": history,
                               "stats": index.stats,
                               "train_config": asdict(config)})
        _log_epoch(log_path, {"epoch": epoch, "stage": "pretrain",
                              "loss": mean_loss}, config.deterministic, started)
    return ckpt_path


def _predict_probs(model: SegmentationModel, clip: VideoTensor) -> np.ndarray:
    model.net.eval()
    with torch.no_grad():
        out = model.net(clip_to_tensor(clip))
    return 1.0 / (1.0 + np.exp(-output_to_array(out)[..., 0]))  # (H, W, F)


def validate_dsc(model: SegmentationModel, index: DatasetIndex,
                 entries: list[IndexEntry], spec: ClipSpec,
                 cache: VideoCache) -> float:
    """Mean anchor-frame DSC over the annotated frames of ``entries``."""
    scores = []
    for entry in entries:
        video = cache.get(entry)
        for ann in entry.annotated_frames:
            clip_idx = sample_eval_clip(entry.num_frames, ann.frame_index, spec)
            clip, _ = extract(video, clip_idx)
            clip = normalize_clip(clip, index.stats)
            probs = _predict_probs(model, clip)
            pred = (probs[:, :, clip_idx.anchor_slot] >= 0.5).astype(np.uint8)
            scores.append(dsc(ann.mask, pred))
    return float(np.mean(scores)) if scores else 0.0


def finetune_step(model: SegmentationModel, opt,
                  batch: list[tuple[SparseLabelSet, VideoTensor]]) -> float | None:
    """One optimizer step on a batch of (labels, normalized clip).

    Batches with no labeled slot anywhere are skipped entirely, so unlabeled
    clips cannot alter parameters.
    """
    if not any(len(labels) for labels, _ in batch):
        return None
    x = torch.cat([clip_to_tensor(clip) for _, clip in batch])
    logits = model.net(x)  # (B, 1, F, H, W)
    probs = torch.sigmoid(logits[:, 0])  # (B, F, H, W)
    loss = total_seg_loss([(labels, probs[i]) for i, (labels, _) in enumerate(batch)])
    _check_finite(loss, "finetune step")
    opt.zero_grad()
    loss.backward()
    opt.step()
    return float(loss.detach())


def finetune(model: SegmentationModel, index: DatasetIndex, config: TrainConfig,
             out_dir) -> Path:
    """Weakly supervised fine-tuning with two clips per video per epoch
    (one anchored at the ED frame, one at the ES frame).

    The checkpoint with the best mean validation DSC on anchor frames is
    retained as ``finetuned.ckpt``. Returns its path.
    """
    if model.config.head == "reconstruction":
        model = swap_head(model, "segmentation")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "finetuned.ckpt"
    log_path = out_dir / "train_log.jsonl"
    log_path.write_text("")

    _seed_torch(config)
    rng = RandomSource(config.seed)
    cache = VideoCache()
    train_entries = index.split("train")
    val_entries = index.split("val") or train_entries
    if not train_entries:
        raise ValueError("dataset has no training videos")
    if not any(e.annotated_frames for e in train_entries):
        raise ValueError("dataset has no annotations")
    spec = config.clip_spec
    opt = torch.optim.AdamW(model.net.parameters(), lr=config.learning_rate,
                            weight_decay=config.weight_decay)
    best_val = -1.0
    history = []
    started = time.time()
    for epoch in range(config.epochs):
        model.net.train()
        # two samples per video per epoch: one per annotated frame
        tasks = [(e, ann) for e in train_entries for ann in e.annotated_frames]
        order = rng.permutation(len(tasks))
        losses = []
        for batch_ids in _batches(list(order), config.batch_size):
            batch = []
            for i in batch_ids:
                entry, ann = tasks[int(i)]
                video = cache.get(entry)
                clip_idx = sample_train_clip(entry.num_frames, ann.frame_index,
                                             spec, rng)
                annotations = {a.frame_index: a.mask
                               for a in entry.annotated_frames}
                clip, labels = extract(video, clip_idx, annotations)
                clip, labels = augment(clip, labels, rng, config.augment)
                clip = normalize_clip(clip, index.stats)
                batch.append((labels, clip))
            loss = finetune_step(model, opt, batch)
            if loss is not None:
                losses.append(loss)
        val = validate_dsc(model, index, val_entries, spec, cache)
        mean_loss = float(np.mean(losses)) if losses else 0.0
        history.append({"loss": mean_loss, "val_dsc": val})
        if val > best_val:
            best_val = val
            save_checkpoint(model, ckpt_path, stage="finetuned",
                            extra={"epoch": epoch, "val_dsc": val,
                                   "stats": index.stats,
                                   "train_config": asdict(config)})
        _log_epoch(log_path, {"epoch": epoch, "stage": "finetune",
                              "loss": mean_loss, "val_dsc": val},
                   config.deterministic, started)
    return ckpt_path
