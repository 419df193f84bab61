"""Clip-consistent augmentation: color jitter, CLAHE, random rotation,
padding, and random cropping.

One parameter draw per clip, applied identically to every frame. Photometric
transforms touch pixels only and operate in raw [0, 1] space; geometric
transforms move pixels (linear interpolation) and masks (nearest neighbor)
with the same parameters. Padding slots stay exactly zero throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .core import RandomSource, SparseLabelSet, VideoTensor


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    brightness: float = 0.2
    contrast: float = 0.2
    rotation_deg: float = 15.0
    pad_ratio: float = 124.0 / 112.0  # pad H, W to round(H * pad_ratio) before crop
    clahe: bool = True
    clahe_clip: float = 2.0
    clahe_grid: int = 8

    @staticmethod
    def disabled() -> "AugmentConfig":
        return AugmentConfig(enabled=False)


@dataclass(frozen=True)
class AugmentDraw:
    """Per-clip parameter draw so geometric transforms can be replayed."""

    brightness: float
    contrast: float
    angle: float
    crop_y: int
    crop_x: int
    apply_clahe: bool


def draw_parameters(cfg: AugmentConfig, height: int, width: int,
                    rng: RandomSource) -> AugmentDraw:
    pad_h = int(round(height * cfg.pad_ratio))
    pad_w = int(round(width * cfg.pad_ratio))
    return AugmentDraw(
        brightness=float(rng.uniform(-cfg.brightness, cfg.brightness)),
        contrast=float(rng.uniform(-cfg.contrast, cfg.contrast)),
        angle=float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)),
        crop_y=rng.integers(0, pad_h - height + 1),
        crop_x=rng.integers(0, pad_w - width + 1),
        apply_clahe=cfg.clahe,
    )


def _jitter(frame: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    return np.clip(frame * (1.0 + contrast) + brightness, 0.0, 1.0)


def _clahe(frame: np.ndarray, clip: float, grid: int) -> np.ndarray:
    """CLAHE on the intensity channel; channels are re-replicated from it."""
    intensity = np.clip(frame[:, :, 0] * 255.0, 0, 255).astype(np.uint8)
    eq = cv2.createCLAHE(clipLimit=clip, tileGridSize=(grid, grid)).apply(intensity)
    return np.repeat((eq.astype(np.float32) / 255.0)[:, :, None], 3, axis=2)


def apply_geometric(frame: np.ndarray, draw: AugmentDraw, pad_ratio: float,
                    is_mask: bool) -> np.ndarray:
    """Rotate about the frame center, zero-pad symmetrically, then crop back
    to the original size at the drawn offset."""
    h, w = frame.shape[:2]
    pad_h = int(round(h * pad_ratio))
    pad_w = int(round(w * pad_ratio))
    interp = cv2.INTER_NEAREST if is_mask else cv2.INTER_LINEAR
    rot = cv2.getRotationMatrix2D((w / 2 - 0.5, h / 2 - 0.5), draw.angle, 1.0)
    out = cv2.warpAffine(frame, rot, (w, h), flags=interp,
                         borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    top = (pad_h - h) // 2
    left = (pad_w - w) // 2
    if frame.ndim == 3:
        padded = np.zeros((pad_h, pad_w, frame.shape[2]), dtype=frame.dtype)
    else:
        padded = np.zeros((pad_h, pad_w), dtype=frame.dtype)
    padded[top:top + h, left:left + w] = out
    return padded[draw.crop_y:draw.crop_y + h, draw.crop_x:draw.crop_x + w]


def center_crop_draw(cfg: AugmentConfig, height: int, width: int,
                     angle: float = 0.0) -> AugmentDraw:
    """Identity-geometry draw (rotation ``angle``, centered crop, no jitter)."""
    pad_h = int(round(height * cfg.pad_ratio))
    pad_w = int(round(width * cfg.pad_ratio))
    return AugmentDraw(0.0, 0.0, angle, (pad_h - height) // 2,
                       (pad_w - width) // 2, False)


def apply_draw(clip: VideoTensor, labels: SparseLabelSet | None,
               draw: AugmentDraw, cfg: AugmentConfig
               ) -> tuple[VideoTensor, SparseLabelSet | None]:
    f = clip.num_frames
    out = np.zeros_like(clip.pixels)
    for k in range(f):
        if clip.pad_flags[k]:
            continue  # padding frames stay zero
        frame = clip.pixels[:, :, k, :]
        frame = _jitter(frame, draw.brightness, draw.contrast)
        if draw.apply_clahe:
            frame = _clahe(frame, cfg.clahe_clip, cfg.clahe_grid)
        out[:, :, k, :] = apply_geometric(frame, draw, cfg.pad_ratio, is_mask=False)
    new_clip = VideoTensor(out, clip.frame_indices, clip.pad_flags)
    new_labels = labels
    if labels is not None and len(labels):
        masks = {slot: apply_geometric(labels.masks[slot], draw, cfg.pad_ratio,
                                       is_mask=True)
                 for slot in labels.labeled_slots}
        new_labels = SparseLabelSet(masks=masks, num_slots=f)
    return new_clip, new_labels


def augment(clip: VideoTensor, labels: SparseLabelSet | None,
            rng: RandomSource, cfg: AugmentConfig
            ) -> tuple[VideoTensor, SparseLabelSet | None]:
    """Augment a clip (and its sparse masks) with one shared parameter draw."""
    if not cfg.enabled:
        return clip, labels
    draw = draw_parameters(cfg, clip.height, clip.width, rng)
    return apply_draw(clip, labels, draw, cfg)
