"""Dice similarity, split evaluation by cardiac phase, and percentile
bootstrap confidence intervals over per-frame scores."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import ClipSpec, RandomSource
from .ingest import DatasetIndex, decode_video


@dataclass(frozen=True)
class VideoScore:
    video_id: str
    phase: str  # ED | ES | middle | other
    frame_index: int
    dsc: float


@dataclass
class DiceReport:
    per_video: list[VideoScore]
    aggregates: dict[str, dict] = field(default_factory=dict)
    # aggregates[group] = {"mean": m, "ci_lo": lo, "ci_hi": hi, "n": n}

    def scores(self, group: str = "overall") -> list[float]:
        if group == "overall":
            return [s.dsc for s in self.per_video]
        return [s.dsc for s in self.per_video if s.phase == group]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["video_id", "phase", "frame_index", "dsc"])
            for s in self.per_video:
                writer.writerow([s.video_id, s.phase, s.frame_index,
                                 f"{s.dsc:.6f}"])
            writer.writerow([])
            writer.writerow(["group", "mean", "ci_lo", "ci_hi", "n"])
            for group, agg in self.aggregates.items():
                writer.writerow([group, f"{agg['mean']:.6f}",
                                 f"{agg['ci_lo']:.6f}", f"{agg['ci_hi']:.6f}",
                                 agg["n"]])

    def write_json(self, path) -> None:
        payload = {"per_video": [asdict(s) for s in self.per_video],
                   "aggregates": self.aggregates}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def dsc(a: np.ndarray, b: np.ndarray) -> float:
    """Dice similarity 2|a&b| / (|a|+|b|); 1.0 when both masks are empty."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def bootstrap_ci(values, level: float = 0.95, resamples: int = 10000,
                 rng: RandomSource | None = None) -> tuple[float, float]:
    """Nonparametric percentile bootstrap CI of the mean."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        raise ValueError("bootstrap_ci needs a nonempty sample")
    rng = rng or RandomSource(0)
    idx = rng.integer_array(0, values.size, size=(resamples, values.size))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo = float(np.percentile(means, 100 * alpha))
    hi = float(np.percentile(means, 100 * (1 - alpha)))
    return lo, hi


def _aggregate(report: DiceReport, groups, level, resamples, seed) -> None:
    for g, group in enumerate(groups):
        vals = report.scores(group)
        if not vals:
            continue
        lo, hi = bootstrap_ci(vals, level=level, resamples=resamples,
                              rng=RandomSource(seed).child(g))
        report.aggregates[group] = {"mean": float(np.mean(vals)),
                                    "ci_lo": lo, "ci_hi": hi, "n": len(vals)}


def evaluate_split(model, index: DatasetIndex, spec: ClipSpec,
                   split: str = "test", level: float = 0.95,
                   resamples: int = 10000, seed: int = 0,
                   entries=None) -> DiceReport:
    """Centered-clip evaluation of every annotated frame in a split.

    For each annotated frame: place it at the clip center, forward, binarize
    sigmoid(logits) at 0.5, and score the anchor slot against the ground
    truth. Aggregates pool all frames ("overall") plus ED and ES separately,
    and middle for dense datasets.
    """
    # local import: train imports metrics for validation scoring
    from .sampler import extract, sample_eval_clip
    from .train import _predict_probs, normalize_clip

    entries = list(entries) if entries is not None else index.split(split)
    if not entries:
        raise ValueError(f"split {split!r} is empty")
    per_video = []
    for entry in entries:
        video = decode_video(entry.path)
        for ann in entry.annotated_frames:
            clip_idx = sample_eval_clip(entry.num_frames, ann.frame_index, spec)
            clip, _ = extract(video, clip_idx)
            clip = normalize_clip(clip, index.stats)
            probs = _predict_probs(model, clip)
            pred = (probs[:, :, clip_idx.anchor_slot] >= 0.5).astype(np.uint8)
            per_video.append(VideoScore(entry.video_id, ann.phase,
                                        ann.frame_index, dsc(ann.mask, pred)))
    report = DiceReport(per_video=per_video)
    groups = ["overall", "ED", "ES"] + (["middle"] if index.dense else [])
    _aggregate(report, groups, level, resamples, seed)
    return report
