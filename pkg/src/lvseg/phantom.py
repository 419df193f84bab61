"""Synthetic beating-heart phantom videos with exact dense ground truth.

Each phantom is an ellipse ("blood pool") inside a bright ring
("myocardium") whose area follows a sinusoid: maxima are end-diastole (ED)
frames, minima end-systole (ES). Multiplicative log-normal speckle is applied
to the intensity image only, so masks depend purely on geometry.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import io as lvio
from .core import RandomSource, VideoTensor
from .ingest import DatasetIndex, load_sparse_dataset


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 64
    width: int = 64
    length: int = 100
    period: float = 20.0
    area_ratio: float = 0.5  # ES area / ED area
    speckle_sigma: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.period < 4:
            raise ValueError(f"period must be >= 4, got {self.period}")
        if self.length < 2 * self.period:
            raise ValueError(
                f"length must be >= 2*period, got {self.length} < {2 * self.period}")
        if not 0.0 < self.area_ratio < 1.0:
            raise ValueError(f"area_ratio must be in (0, 1), got {self.area_ratio}")


@dataclass(frozen=True)
class PhantomResult:
    video: VideoTensor
    masks: np.ndarray  # (F, H, W) uint8 dense ground truth
    ed_indices: tuple[int, ...]
    es_indices: tuple[int, ...]
    spec: PhantomSpec


def _ellipse_mask(h, w, cy, cx, a, b):
    yy, xx = np.mgrid[0:h, 0:w]
    return (((yy - cy) / a) ** 2 + ((xx - cx) / b) ** 2 <= 1.0).astype(np.uint8)


def generate_phantom(spec: PhantomSpec) -> PhantomResult:
    """Generate one phantom video, its dense masks, and ED/ES frame indices.

    The LV area at frame t is
        area(t) = A_es + (A_ed - A_es) * (1 + cos(2*pi*t/period)) / 2
    so ED frames sit at integer multiples of the period and ES frames halfway
    between. Both axes scale with sqrt(area/A_ed), keeping pixel-area ratio
    at ES/ED equal to ``area_ratio`` up to rasterization error.
    """
    rng = RandomSource(spec.seed)
    h, w, length = spec.height, spec.width, spec.length
    cy = h / 2 + rng.uniform(-h * 0.03, h * 0.03)
    cx = w / 2 + rng.uniform(-w * 0.03, w * 0.03)
    a0 = h * rng.uniform(0.26, 0.30)  # ED semi-axes
    b0 = w * rng.uniform(0.20, 0.24)

    phase = 2 * math.pi * np.arange(length) / spec.period
    scale = spec.area_ratio + (1 - spec.area_ratio) * (1 + np.cos(phase)) / 2
    masks = np.zeros((length, h, w), dtype=np.uint8)
    frames = np.zeros((h, w, length), dtype=np.float32)
    ring_factor = 1.25
    for t in range(length):
        s = math.sqrt(scale[t])
        lv = _ellipse_mask(h, w, cy, cx, a0 * s, b0 * s)
        ring = _ellipse_mask(h, w, cy, cx, a0 * s * ring_factor, b0 * s * ring_factor)
        img = np.full((h, w), 0.25, dtype=np.float32)
        img[ring == 1] = 0.70
        img[lv == 1] = 0.10
        masks[t] = lv
        frames[:, :, t] = img

    speckle = rng.lognormal(0.0, spec.speckle_sigma,
                            size=frames.shape).astype(np.float32)
    frames = np.clip(frames * speckle, 0.0, 1.0)
    pixels = np.repeat(frames[:, :, :, None], 3, axis=3)

    n_cycles = int(length // spec.period) + 1
    ed = [int(round(k * spec.period)) for k in range(n_cycles)]
    es = [int(round((k + 0.5) * spec.period)) for k in range(n_cycles)]
    ed = tuple(i for i in ed if 0 <= i < length)
    es = tuple(i for i in es if 0 <= i < length)

    video = VideoTensor(pixels=pixels,
                        frame_indices=tuple(range(length)),
                        pad_flags=(False,) * length)
    return PhantomResult(video, masks, ed, es, spec)


def assign_splits(n: int, ratios=(0.7, 0.15, 0.15)) -> list[str]:
    """Deterministic split assignment: floor val/test counts, remainder to
    train; videos are assigned in order train, then val, then test."""
    n_val = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_val - n_test
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


def export_sparse(phantoms: list[PhantomResult], directory,
                  ratios=(0.7, 0.15, 0.15), write_dense: bool = True) -> DatasetIndex:
    """Write phantoms as an EchoNet-style sparse dataset.

    Each video gets exactly one ED and one ES annotation (the first full
    cycle), attached directly as masks. With ``write_dense`` the full
    ground-truth mask stacks are also written under Masks/ so the same
    directory can be read back as a dense-label dataset for oracle
    evaluation.
    """
    directory = Path(directory)
    (directory / "Videos").mkdir(parents=True, exist_ok=True)
    (directory / "Annotations").mkdir(exist_ok=True)
    if write_dense:
        (directory / "Masks").mkdir(exist_ok=True)
    splits = assign_splits(len(phantoms), ratios)

    rows = []
    manifest = {"videos": [], "format": "lvseg-phantom-v1"}
    for k, (ph, split) in enumerate(zip(phantoms, splits)):
        if not ph.ed_indices or not ph.es_indices:
            raise ValueError(f"phantom {k} has no complete cycle to annotate")
        vid = f"phantom{k:04d}"
        lvio.save_video_tensor(directory / "Videos" / f"{vid}.lvt", ph.video)
        ed, es = ph.ed_indices[0], ph.es_indices[0]
        lvio.write_archive(
            directory / "Annotations" / f"{vid}.lva",
            {"mask_0": ph.masks[ed], "mask_1": ph.masks[es]},
            meta={"frames": [int(ed), int(es)], "phases": ["ED", "ES"]})
        if write_dense:
            lvio.write_tensor(directory / "Masks" / f"{vid}.lvt", ph.masks,
                              meta={"kind": "mask_stack"})
        rows.append((f"{vid}.lvt", split.upper(), ph.video.num_frames))
        manifest["videos"].append({"video_id": vid, "split": split,
                                   "ed_frame": int(ed), "es_frame": int(es),
                                   **asdict(ph.spec)})

    with open(directory / "FileList.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["FileName", "Split", "NumFrames"])
        writer.writerows(rows)
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True))
    return load_sparse_dataset(directory)


def generate_dataset(count: int, spec: PhantomSpec, directory,
                     ratios=(0.7, 0.15, 0.15)) -> DatasetIndex:
    """Generate ``count`` phantoms (per-video seeds derived from spec.seed)
    and export them."""
    phantoms = []
    for k in range(count):
        per_video = PhantomSpec(**{**asdict(spec), "seed": spec.seed + 1000 * k})
        phantoms.append(generate_phantom(per_video))
    return export_sparse(phantoms, directory, ratios)
