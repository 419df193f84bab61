"""Exact, invertible rearrangement between an F-frame clip and its
sqrt(F) x sqrt(F) grid super image.

Frame k goes to grid row k // g, column k % g (row-major, top-left first),
with g = sqrt(F). Pixels are copied unchanged; no resampling anywhere.
"""

from __future__ import annotations

import math

import numpy as np

from .core import VideoTensor


class NonSquareFrameCountError(ValueError):
    pass


class DivisibilityError(ValueError):
    pass


def grid_side(num_frames: int) -> int:
    g = math.isqrt(num_frames)
    if g * g != num_frames:
        raise NonSquareFrameCountError(
            f"F={num_frames} is not a perfect square; super-image layout needs one")
    return g


def frames_to_grid(pixels: np.ndarray) -> np.ndarray:
    """(H, W, F, C) -> (H*g, W*g, C) with g = sqrt(F)."""
    h, w, f, c = pixels.shape
    g = grid_side(f)
    # (H, W, gr, gc, C) -> (gr, H, gc, W, C) -> (gr*H, gc*W, C)
    arr = pixels.reshape(h, w, g, g, c)
    arr = arr.transpose(2, 0, 3, 1, 4)
    return np.ascontiguousarray(arr.reshape(g * h, g * w, c))


def grid_to_frames(image: np.ndarray, num_frames: int) -> np.ndarray:
    """(H*g, W*g, C) -> (H, W, F, C); exact inverse of frames_to_grid."""
    g = grid_side(num_frames)
    hh, ww, c = image.shape
    if hh % g or ww % g:
        raise DivisibilityError(
            f"image {hh}x{ww} not divisible into a {g}x{g} grid")
    h, w = hh // g, ww // g
    arr = image.reshape(g, h, g, w, c)
    arr = arr.transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(arr.reshape(h, w, g * g, c))


def to_super_image(clip: VideoTensor) -> np.ndarray:
    return frames_to_grid(clip.pixels)


def from_super_image(image: np.ndarray, num_frames: int,
                     frame_indices=None, pad_flags=None) -> VideoTensor:
    pixels = grid_to_frames(image, num_frames)
    if frame_indices is None:
        frame_indices = tuple(range(num_frames))
    if pad_flags is None:
        pad_flags = (False,) * num_frames
    return VideoTensor(pixels, frame_indices, pad_flags)
