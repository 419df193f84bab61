"""Shared domain types for video clips, sparse labels, and seeded randomness.

Conventions used throughout the package:
  * pixel volumes are float32 arrays of shape (H, W, F, C) with C = 3;
  * frame slots are zero-based;
  * padding frames (synthetic zero frames appended past the end of a video)
    carry frame_index -1 and pad_flag True, and their pixels are exactly zero;
  * mask stacks are (F, H, W) uint8 arrays with values in {0, 1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

PAD_INDEX = -1


class ShapeMismatchError(ValueError):
    """A tensor dimension disagrees with its declared or expected size."""


class PaddingInconsistencyError(ValueError):
    """A slot flagged as padding contains nonzero pixels."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class VideoTensor:
    """An (H, W, F, C) pixel volume with per-frame provenance.

    ``frame_indices[k]`` is the source-frame number that slot ``k`` was read
    from, or -1 for synthetic padding slots. Padding slots must be all-zero.
    """

    pixels: np.ndarray
    frame_indices: tuple[int, ...]
    pad_flags: tuple[bool, ...]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 4:
            raise ShapeMismatchError(f"pixels must be 4-D (H, W, F, C), got {px.shape}")
        h, w, f, c = px.shape
        if h < 1 or w < 1 or f < 1:
            raise ShapeMismatchError(f"H, W, F must be >= 1, got {px.shape}")
        if c != 3:
            raise ShapeMismatchError(f"C must be 3, got C={c}")
        fi = tuple(int(i) for i in self.frame_indices)
        pf = tuple(bool(b) for b in self.pad_flags)
        if len(fi) != f:
            raise ShapeMismatchError(f"len(frame_indices)={len(fi)} != F={f}")
        if len(pf) != f:
            raise ShapeMismatchError(f"len(pad_flags)={len(pf)} != F={f}")
        for k, is_pad in enumerate(pf):
            if is_pad and px[:, :, k, :].any():
                raise PaddingInconsistencyError(f"pad slot {k} has nonzero pixels")
        object.__setattr__(self, "pixels", _freeze(px))
        object.__setattr__(self, "frame_indices", fi)
        object.__setattr__(self, "pad_flags", pf)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def num_frames(self) -> int:
        return self.pixels.shape[2]

    @property
    def channels(self) -> int:
        return self.pixels.shape[3]

    def frame(self, slot: int) -> np.ndarray:
        return self.pixels[:, :, slot, :]


@dataclass(frozen=True)
class ClipSpec:
    """Clip geometry: number of frames and sampling stride in source frames."""

    num_frames: int
    period: int = 1

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValueError(f"num_frames must be >= 1, got {self.num_frames}")
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")

    @property
    def span(self) -> int:
        """Source frames covered by the window: (F-1)*T + 1."""
        return (self.num_frames - 1) * self.period + 1


@dataclass(frozen=True)
class SparseLabelSet:
    """Per-clip mapping from frame slots to binary masks.

    Slots not in ``labeled_slots`` carry no mask and must never contribute
    to losses or gradients.
    """

    masks: Mapping[int, np.ndarray]
    labeled_slots: tuple[int, ...] = field(default=None)  # type: ignore[assignment]
    num_slots: int = 0

    def __post_init__(self):
        slots = tuple(sorted(int(s) for s in self.masks))
        if self.labeled_slots is not None:
            declared = tuple(sorted(int(s) for s in self.labeled_slots))
            if declared != slots:
                raise ValueError("labeled_slots disagrees with masks keys")
        frozen = {}
        shape = None
        for s, m in sorted(self.masks.items()):
            s = int(s)
            if self.num_slots and not 0 <= s < self.num_slots:
                raise ValueError(f"slot {s} outside [0, {self.num_slots})")
            m = np.asarray(m, dtype=np.uint8)
            if m.ndim != 2:
                raise ShapeMismatchError(f"mask at slot {s} must be 2-D, got {m.shape}")
            if shape is None:
                shape = m.shape
            elif m.shape != shape:
                raise ShapeMismatchError(
                    f"mask at slot {s} has shape {m.shape}, expected {shape}"
                )
            if not np.isin(m, (0, 1)).all():
                raise ValueError(f"mask at slot {s} has values outside {{0, 1}}")
            frozen[s] = _freeze(m)
        object.__setattr__(self, "masks", frozen)
        object.__setattr__(self, "labeled_slots", slots)

    def __len__(self) -> int:
        return len(self.labeled_slots)

    @staticmethod
    def empty(num_slots: int = 0) -> "SparseLabelSet":
        return SparseLabelSet(masks={}, num_slots=num_slots)


@dataclass(frozen=True)
class MaskedClip:
    """A clip together with the slots that were zeroed for self-supervision."""

    clip: VideoTensor
    masked_slots: frozenset[int]

    def __post_init__(self):
        slots = frozenset(int(s) for s in self.masked_slots)
        f = self.clip.num_frames
        if len(slots) >= f:
            raise ValueError(f"|masked_slots|={len(slots)} must be < F={f}")
        for s in slots:
            if not 0 <= s < f:
                raise ValueError(f"masked slot {s} outside [0, {f})")
            if self.clip.pixels[:, :, s, :].any():
                raise ValueError(f"masked slot {s} has nonzero pixels")
        object.__setattr__(self, "masked_slots", slots)

    @property
    def num_masked(self) -> int:
        return len(self.masked_slots)


class RandomSource:
    """Seeded random generator; equal seeds give equal draw sequences.

    Wraps a PCG64 generator. ``child(key)`` derives an independent stream
    deterministically, for per-worker or per-stage seeding.
    """

    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._spawn_key = _spawn_key
        seq = np.random.SeedSequence(self.seed, spawn_key=_spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def child(self, key: int) -> "RandomSource":
        return RandomSource(self.seed, self._spawn_key + (int(key),))

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        return int(self._gen.integers(low, high))

    def integer_array(self, low: int, high: int, size) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size=size)

    def lognormal(self, mean: float = 0.0, sigma: float = 1.0, size=None):
        return self._gen.lognormal(mean, sigma, size=size)


def validate_clip(clip: VideoTensor, spec: ClipSpec) -> VideoTensor:
    """Check clip invariants against a ClipSpec; returns the clip unchanged.

    VideoTensor construction already enforces shape and padding invariants,
    so the remaining check is frame-count agreement with the spec.
    """
    if clip.num_frames != spec.num_frames:
        raise ShapeMismatchError(
            f"clip has F={clip.num_frames}, spec requires F={spec.num_frames}"
        )
    return clip
