"""Self-supervised temporal masking: zero a random subset of frame slots."""

from __future__ import annotations

import math

from .core import MaskedClip, RandomSource, VideoTensor

DEFAULT_MASK_RATIO = 0.6


def default_ratio() -> float:
    """Masking ratio used when none is configured (the tuned optimum)."""
    return DEFAULT_MASK_RATIO


def num_masked_frames(num_frames: int, ratio: float) -> int:
    """round-half-away-from-zero of ratio*F, clamped to F-1."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"masking ratio must be in [0, 1), got {ratio}")
    return min(math.floor(ratio * num_frames + 0.5), num_frames - 1)


def mask_clip(clip: VideoTensor, ratio: float, rng: RandomSource) -> MaskedClip:
    """Zero a uniformly drawn set of round(ratio*F) whole frames.

    Unmasked slots are bit-identical to the input; masked slots are exactly
    zero. Provenance (frame indices, pad flags) is preserved.
    """
    f = clip.num_frames
    n_masked = num_masked_frames(f, ratio)
    slots = frozenset(int(s) for s in rng.choice(f, size=n_masked, replace=False))
    pixels = clip.pixels.copy()
    for s in slots:
        pixels[:, :, s, :] = 0.0
    masked = VideoTensor(pixels, clip.frame_indices, clip.pad_flags)
    return MaskedClip(clip=masked, masked_slots=slots)
