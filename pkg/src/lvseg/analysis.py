"""Temporal-consistency analysis: whole-video LV area series from tiled
evaluation windows, frequency-domain smoothness, and the frame-shuffle
consistency probe.

The spectrum is one-sided and energy-preserving: interior bins carry a
sqrt(2) factor so that sum(magnitudes^2) equals L * sum(de-meaned series^2)
(Parseval with an unnormalized forward transform).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ClipSpec, RandomSource, VideoTensor
from .ingest import DatasetIndex, IndexEntry, decode_video
from .metrics import dsc


class CoverageGapError(ValueError):
    pass


def stitch_windows(video_len: int, num_frames: int) -> list[tuple[int, range]]:
    """Non-overlapping tiling with a right-aligned tail window.

    Returns (window_start, frames_taken_from_it) pairs; every source frame
    is covered by exactly one window. Videos shorter than the window yield a
    single zero-padded window starting at 0.
    """
    if video_len <= num_frames:
        return [(0, range(0, video_len))]
    starts = list(range(0, video_len - num_frames + 1, num_frames))
    covered = starts[-1] + num_frames
    if covered < video_len:
        tail = video_len - num_frames
        starts.append(tail)
        return [(s, range(s, s + num_frames)) for s in starts[:-1]] + \
               [(tail, range(covered, video_len))]
    return [(s, range(s, s + num_frames)) for s in starts]


def predict_video_masks(model, video_pixels: np.ndarray, spec: ClipSpec,
                        stats: dict) -> np.ndarray:
    """Binary masks for every frame of a video via tiled eval windows."""
    from .sampler import extract, resample_uniform
    from .train import _predict_probs, normalize_clip

    h, w, length, _ = video_pixels.shape
    masks = np.zeros((length, h, w), dtype=np.uint8)
    covered = np.zeros(length, dtype=bool)
    for start, taken in stitch_windows(length, spec.num_frames):
        if length < spec.num_frames:
            clip_idx = resample_uniform(length, spec.num_frames)
        else:
            from .sampler import ClipIndices
            indices = tuple(range(start, start + spec.num_frames))
            clip_idx = ClipIndices(indices, (False,) * spec.num_frames)
        clip, _ = extract(video_pixels, clip_idx)
        clip = normalize_clip(clip, stats)
        probs = _predict_probs(model, clip)
        for frame in taken:
            slot = frame - start
            masks[frame] = (probs[:, :, slot] >= 0.5).astype(np.uint8)
            covered[frame] = True
    if not covered.all():
        raise CoverageGapError(f"frames not covered: {np.flatnonzero(~covered)}")
    return masks


def area_series(masks: np.ndarray) -> np.ndarray:
    """Per-frame positive-pixel counts of an (F, H, W) mask stack."""
    masks = np.asarray(masks)
    return masks.reshape(masks.shape[0], -1).astype(np.int64).sum(axis=1)


def spectrum(series) -> np.ndarray:
    """One-sided magnitude spectrum of the de-meaned series.

    Bin k corresponds to frequency k / L cycles per frame. Interior bins are
    scaled by sqrt(2) so the squared magnitudes sum to the full two-sided
    energy L * sum(x_demeaned^2).
    """
    x = np.asarray(series, dtype=np.float64)
    if x.size < 2:
        raise ValueError("series must have length >= 2")
    x = x - x.mean()
    mags = np.abs(np.fft.rfft(x))
    n = x.size
    weights = np.full(mags.shape, np.sqrt(2.0))
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    return mags * weights


def high_freq_energy(series, cutoff_fraction: float = 0.25) -> float:
    """Energy in bins whose frequency exceeds cutoff_fraction of the
    sampling rate (cutoff_fraction in (0, 0.5]; 0.5 is the Nyquist bin)."""
    if not 0.0 < cutoff_fraction <= 0.5:
        raise ValueError(f"cutoff_fraction must be in (0, 0.5], got {cutoff_fraction}")
    x = np.asarray(series, dtype=np.float64)
    mags = spectrum(x)
    cutoff_bin = cutoff_fraction * x.size
    bins = np.arange(mags.size)
    return float((mags[bins > cutoff_bin] ** 2).sum())


@dataclass(frozen=True)
class ShuffleResult:
    video_id: str
    dsc_ordered: float
    dsc_shuffled: float

    @property
    def delta(self) -> float:
        return self.dsc_ordered - self.dsc_shuffled


def shuffle_consistency_test(model, index: DatasetIndex, entry: IndexEntry,
                             spec: ClipSpec, rng: RandomSource) -> ShuffleResult:
    """Anchor-frame DSC with the clip in order vs. with non-anchor slots
    randomly permuted (the anchor stays in place). Report-only."""
    from .sampler import extract, sample_eval_clip
    from .train import _predict_probs, normalize_clip

    ann = entry.annotated_frames[0]
    video = decode_video(entry.path)
    clip_idx = sample_eval_clip(entry.num_frames, ann.frame_index, spec)
    clip, _ = extract(video, clip_idx)
    clip = normalize_clip(clip, index.stats)
    anchor = clip_idx.anchor_slot

    probs = _predict_probs(model, clip)
    ordered = dsc(ann.mask, (probs[:, :, anchor] >= 0.5).astype(np.uint8))

    others = [s for s in range(clip.num_frames) if s != anchor]
    perm = rng.permutation(len(others))
    pixels = clip.pixels.copy()
    flags = list(clip.pad_flags)
    idxs = list(clip.frame_indices)
    for dst, src in zip(others, (others[int(p)] for p in perm)):
        pixels[:, :, dst, :] = clip.pixels[:, :, src, :]
        flags[dst] = clip.pad_flags[src]
        idxs[dst] = clip.frame_indices[src]
    shuffled_clip = VideoTensor(pixels, tuple(idxs), tuple(flags))
    probs_s = _predict_probs(model, shuffled_clip)
    shuffled = dsc(ann.mask, (probs_s[:, :, anchor] >= 0.5).astype(np.uint8))
    return ShuffleResult(entry.video_id, ordered, shuffled)
