"""Training objectives: batch-mean reconstruction MSE and the sparse dice
loss that sums frame-wise dice over labeled slots only.

Unlabeled slots are never touched when building the loss graph, so their
predictions contribute exactly zero to both the value and the gradient.
"""

from __future__ import annotations

import numpy as np
import torch

from .core import SparseLabelSet

DICE_EPS = 1e-5


class ShapeMismatchError(ValueError):
    pass


def reconstruction_loss(targets: torch.Tensor, preds: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of per-sample mean squared error.

    Both tensors are (B, ...) with identical shapes.
    """
    if targets.shape != preds.shape:
        raise ShapeMismatchError(
            f"target shape {tuple(targets.shape)} != prediction shape "
            f"{tuple(preds.shape)}")
    b = targets.shape[0]
    per_sample = ((preds - targets) ** 2).reshape(b, -1).mean(dim=1)
    return per_sample.mean()


def frame_dice_loss(mask: torch.Tensor, probs: torch.Tensor,
                    eps: float = DICE_EPS) -> torch.Tensor:
    """Soft dice loss for one frame: 1 - (2*sum(y*p)+eps)/(sum(y)+sum(p)+eps)."""
    if mask.shape != probs.shape:
        raise ShapeMismatchError(
            f"mask shape {tuple(mask.shape)} != probs shape {tuple(probs.shape)}")
    with torch.no_grad():
        lo, hi = float(probs.min()), float(probs.max())
    if lo < -1e-6 or hi > 1 + 1e-6:
        raise ValueError(f"probabilities outside [0, 1]: min={lo}, max={hi}")
    mask = mask.to(probs.dtype)
    inter = (mask * probs).sum()
    return 1.0 - (2.0 * inter + eps) / (mask.sum() + probs.sum() + eps)


def _mask_tensor(mask, like: torch.Tensor) -> torch.Tensor:
    if isinstance(mask, torch.Tensor):
        return mask.to(like.dtype)
    return torch.from_numpy(np.array(mask)).to(like.dtype)


def sparse_dice_loss(labels: SparseLabelSet, preds: torch.Tensor,
                     eps: float = DICE_EPS) -> torch.Tensor:
    """Sum of frame-wise dice losses over labeled slots.

    ``preds`` is an (F, H, W) probability map; only rows indexed by the
    labeled slots enter the graph, so unlabeled frames cannot leak gradient.
    With zero labeled slots the loss is the constant 0.
    """
    if preds.ndim != 3:
        raise ShapeMismatchError(f"preds must be (F, H, W), got {tuple(preds.shape)}")
    num_slots = preds.shape[0]
    total = None
    for slot in labels.labeled_slots:
        if not 0 <= slot < num_slots:
            raise ShapeMismatchError(
                f"labeled slot {slot} has no prediction (F={num_slots})")
        term = frame_dice_loss(_mask_tensor(labels.masks[slot], preds),
                               preds[slot], eps)
        total = term if total is None else total + term
    if total is None:
        return torch.zeros((), dtype=preds.dtype)
    return total


def total_seg_loss(batch: list[tuple[SparseLabelSet, torch.Tensor]],
                   eps: float = DICE_EPS) -> torch.Tensor:
    """Mean over the batch of per-sample sparse dice losses."""
    if not batch:
        raise ValueError("empty batch")
    losses = [sparse_dice_loss(labels, preds, eps) for labels, preds in batch]
    return torch.stack(losses).mean()
