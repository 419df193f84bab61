"""Clip extraction: random training windows around an anchor, centered
evaluation windows, and uniform whole-video resampling for short/long
out-of-distribution sequences.

All samplers emit a ClipIndices whose real indices form a strictly
increasing arithmetic sequence with step T; slots that fall past the end of
the video become zero-padding slots at the tail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PAD_INDEX, ClipSpec, RandomSource, SparseLabelSet, VideoTensor


class AnchorRangeError(ValueError):
    pass


class IndexAlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class ClipIndices:
    """Source-frame indices for each of the F slots; pad slots hold -1."""

    indices: tuple[int, ...]
    pad_flags: tuple[bool, ...]
    anchor_slot: int | None = None

    def __post_init__(self):
        real = [i for i, p in zip(self.indices, self.pad_flags) if not p]
        if any(b - a <= 0 for a, b in zip(real, real[1:])):
            raise ValueError("real indices must be strictly increasing")
        seen_pad = False
        for p in self.pad_flags:
            if p:
                seen_pad = True
            elif seen_pad:
                raise ValueError("pad slots must be a suffix")

    def __len__(self) -> int:
        return len(self.indices)


def _window_from_start(video_len: int, start: int, spec: ClipSpec,
                       anchor: int | None) -> ClipIndices:
    """Materialize a window given a congruence-preserving start, clamping it
    into the video where possible and padding the tail otherwise."""
    f, t = spec.num_frames, spec.period
    span = spec.span
    if anchor is not None:
        # keep start on the anchor's stride grid
        residue = anchor % t
    else:
        residue = start % t if start > 0 else max(start % t, 0)

    if video_len >= span:
        max_start = video_len - span
        max_cong = residue + ((max_start - residue) // t) * t if max_start >= residue else None
        start = max(start, residue)
        if max_cong is not None:
            start = min(start, max_cong)
    else:
        start = residue if anchor is not None else 0

    indices, pads = [], []
    for k in range(f):
        idx = start + k * t
        if idx < video_len:
            indices.append(idx)
            pads.append(False)
        else:
            indices.append(PAD_INDEX)
            pads.append(True)
    slot = None
    if anchor is not None:
        slot = (anchor - start) // t
        if not (0 <= slot < f and indices[slot] == anchor):
            raise AnchorRangeError(
                f"anchor {anchor} not representable in window (start={start}, "
                f"F={f}, T={t}, video_len={video_len})")
    return ClipIndices(tuple(indices), tuple(pads), slot)


def sample_train_clip(video_len: int, anchor: int, spec: ClipSpec,
                      rng: RandomSource) -> ClipIndices:
    """Random window around an annotated frame.

    The anchor is placed at a uniformly drawn slot, then the window is
    shifted (staying on the anchor's stride grid) so it lies inside the
    video when it fits; short videos fall back to tail zero-padding.
    """
    if not 0 <= anchor < video_len:
        raise AnchorRangeError(f"anchor {anchor} outside [0, {video_len})")
    slot = rng.integers(0, spec.num_frames)
    start = anchor - slot * spec.period
    return _window_from_start(video_len, start, spec, anchor)


def sample_eval_clip(video_len: int, anchor: int, spec: ClipSpec) -> ClipIndices:
    """Deterministic window with the anchor at the center slot floor(F/2)."""
    if not 0 <= anchor < video_len:
        raise AnchorRangeError(f"anchor {anchor} outside [0, {video_len})")
    start = anchor - (spec.num_frames // 2) * spec.period
    return _window_from_start(video_len, start, spec, anchor)


def resample_uniform(video_len: int, num_frames: int) -> ClipIndices:
    """Uniformly resample a whole video down (or pad up) to F frames.

    For video_len >= F the indices are round(i*(L-1)/(F-1)), always
    including the first and last frame; shorter videos keep all frames and
    append zero-padding slots.
    """
    if video_len < 1:
        raise ValueError(f"video_len must be >= 1, got {video_len}")
    if video_len < num_frames:
        indices = list(range(video_len)) + [PAD_INDEX] * (num_frames - video_len)
        pads = [False] * video_len + [True] * (num_frames - video_len)
        return ClipIndices(tuple(indices), tuple(pads))
    if num_frames == 1:
        return ClipIndices((0,), (False,))
    pos = np.arange(num_frames) * (video_len - 1) / (num_frames - 1)
    indices = np.round(pos).astype(int)
    return ClipIndices(tuple(int(i) for i in indices), (False,) * num_frames)


def extract(video_pixels: np.ndarray, clip_indices: ClipIndices,
            annotations: dict[int, np.ndarray] | None = None
            ) -> tuple[VideoTensor, SparseLabelSet]:
    """Gather clip pixels and align sparse annotations to clip slots.

    ``video_pixels`` is the full (H, W, L, C) video; ``annotations`` maps
    source-frame indices to binary masks. Pad slots are zero frames and are
    never labeled.
    """
    h, w, length, c = video_pixels.shape
    f = len(clip_indices)
    pixels = np.zeros((h, w, f, c), dtype=np.float32)
    for k, (idx, pad) in enumerate(zip(clip_indices.indices, clip_indices.pad_flags)):
        if not pad:
            if not 0 <= idx < length:
                raise IndexAlignmentError(f"slot {k} index {idx} outside video")
            pixels[:, :, k, :] = video_pixels[:, :, idx, :]
    clip = VideoTensor(pixels, clip_indices.indices, clip_indices.pad_flags)

    masks: dict[int, np.ndarray] = {}
    if annotations:
        seen: dict[int, int] = {}
        for k, (idx, pad) in enumerate(zip(clip_indices.indices,
                                           clip_indices.pad_flags)):
            if pad or idx not in annotations:
                continue
            if idx in seen:
                raise IndexAlignmentError(
                    f"labeled frame {idx} appears at slots {seen[idx]} and {k}")
            seen[idx] = k
            masks[k] = annotations[idx]
    labels = SparseLabelSet(masks=masks, num_slots=f)
    return clip, labels
