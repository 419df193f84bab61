"""Dataset ingestion: tracing tables, keypoint-to-mask rasterization, and
index construction for sparse (two annotated frames per video) and dense
(every frame annotated) layouts.

On-disk layouts understood here:
  * EchoNet-style sparse with tracings:
        FileList.csv            header: FileName,Split[,NumFrames]
        VolumeTracings.csv      header: FileName,X1,Y1,X2,Y2,Frame
        Videos/<name>           .lvt container or any cv2-decodable video
  * direct-mask sparse (what synth_phantom exports):
        FileList.csv, Videos/, Annotations/<id>.lva archives
  * dense:
        FileList.csv, Videos/, Masks/<id>.lvt mask stacks (F, H, W)

Pixel values at rest are raw [0, 1]; per-dataset channel mean/std is computed
at ingestion and carried on the index so the training pipeline can normalize.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import cv2
import numpy as np

from . import io as lvio

VALID_SPLITS = ("train", "val", "test")


class IngestError(ValueError):
    pass


class MalformedRowError(IngestError):
    def __init__(self, row_number: int, message: str):
        super().__init__(f"row {row_number}: {message}")
        self.row_number = row_number


class MissingColumnError(IngestError):
    pass


class DegenerateGeometryError(IngestError):
    """All keypoints collinear: the traced polygon has zero area."""


class AnnotationCountError(IngestError):
    pass


class MissingVideoError(IngestError):
    pass


class FrameCountMismatchError(IngestError):
    pass


@dataclass(frozen=True)
class TracingRecord:
    """Keypoint chords traced by an annotator on one frame of one video."""

    video_id: str
    frame_index: int
    segments: tuple[tuple[float, float, float, float], ...]

    def __post_init__(self):
        if self.frame_index < 0:
            raise IngestError(f"frame_index must be >= 0, got {self.frame_index}")


@dataclass(frozen=True)
class AnnotatedFrame:
    frame_index: int
    mask: np.ndarray  # (H, W) uint8
    phase: str  # ED | ES | middle | other


@dataclass(frozen=True)
class IndexEntry:
    video_id: str
    path: Path
    split: str
    annotated_frames: tuple[AnnotatedFrame, ...]
    num_frames: int


@dataclass
class DatasetIndex:
    entries: list[IndexEntry]
    root: Path
    stats: dict = field(default_factory=dict)  # {"mean": [c0..c2], "std": [...]}
    dense: bool = False

    def split(self, name: str) -> list[IndexEntry]:
        name = name.lower()
        if name not in VALID_SPLITS:
            raise IngestError(f"unknown split {name!r}, expected one of {VALID_SPLITS}")
        return [e for e in self.entries if e.split == name]


def _require_columns(fieldnames, required, what):
    missing = [c for c in required if c not in (fieldnames or [])]
    if missing:
        raise MissingColumnError(f"{what} is missing columns: {', '.join(missing)}")


def parse_tracings(table: TextIO | str | Path) -> dict[str, list[TracingRecord]]:
    """Parse a tracing table into per-video, per-frame keypoint records.

    Expected header: FileName,X1,Y1,X2,Y2,Frame. Rows are grouped by
    (FileName, Frame); each group becomes one TracingRecord whose segments
    keep their table order.
    """
    if isinstance(table, (str, Path)):
        with open(table, newline="") as fh:
            return parse_tracings(fh)
    reader = csv.DictReader(table)
    _require_columns(reader.fieldnames, ["FileName", "X1", "Y1", "X2", "Y2", "Frame"],
                     "tracing table")
    groups: dict[tuple[str, int], list] = {}
    order: list[tuple[str, int]] = []
    for i, row in enumerate(reader, start=2):  # 1-based, header is row 1
        try:
            vid = row["FileName"].strip()
            seg = (float(row["X1"]), float(row["Y1"]),
                   float(row["X2"]), float(row["Y2"]))
            frame = int(float(row["Frame"]))
        except (TypeError, ValueError, AttributeError) as exc:
            raise MalformedRowError(i, f"cannot parse tracing row: {exc}") from exc
        key = (vid, frame)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(seg)
    result: dict[str, list[TracingRecord]] = {}
    for vid, frame in order:
        result.setdefault(vid, []).append(
            TracingRecord(vid, frame, tuple(groups[(vid, frame)])))
    return result


def _order_polygon(segments) -> np.ndarray:
    """Order chord endpoints into a simple closed polygon.

    Each chord contributes a left and a right endpoint (smaller x first).
    The boundary walks left endpoints top-to-bottom, then right endpoints
    bottom-to-top.
    """
    lefts, rights = [], []
    for x1, y1, x2, y2 in segments:
        if (x1, y1) <= (x2, y2):
            lefts.append((x1, y1))
            rights.append((x2, y2))
        else:
            lefts.append((x2, y2))
            rights.append((x1, y1))
    lefts.sort(key=lambda p: (p[1], p[0]))
    rights.sort(key=lambda p: (-p[1], -p[0]))
    return np.array(lefts + rights, dtype=np.float64)


def shoelace_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def keypoints_to_mask(record: TracingRecord, height: int, width: int,
                      drop_first_segment: bool = False) -> np.ndarray:
    """Rasterize annotator keypoint chords into a filled binary mask.

    ``drop_first_segment`` skips the first table row of the frame, which in
    EchoNet-style tracings is conventionally the long axis rather than a
    chord (default keeps it out when requested by the caller).
    """
    segments = record.segments[1:] if drop_first_segment else record.segments
    if len(segments) < 3:
        raise IngestError(
            f"{record.video_id} frame {record.frame_index}: need >= 3 segments, "
            f"got {len(segments)}")
    poly = _order_polygon(segments)
    poly[:, 0] = np.clip(poly[:, 0], 0, width - 1)
    poly[:, 1] = np.clip(poly[:, 1], 0, height - 1)
    if shoelace_area(poly) < 1e-9:
        raise DegenerateGeometryError(
            f"{record.video_id} frame {record.frame_index}: keypoints are collinear")
    mask = np.zeros((height, width), dtype=np.uint8)
    cv2.fillPoly(mask, [np.round(poly).astype(np.int32)], 1)
    return mask


def decode_video(path: Path) -> np.ndarray:
    """Decode a video file to a raw (H, W, F, 3) float32 array in [0, 1].

    ``.lvt`` containers are read directly; anything else goes through the
    system decoder. Single-channel sources are replicated to 3 channels.
    """
    path = Path(path)
    if path.suffix == ".lvt":
        return lvio.load_video_tensor(path).pixels.copy()
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise MissingVideoError(f"cannot open video: {path}")
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        if frame.ndim == 2:
            frame = np.repeat(frame[:, :, None], 3, axis=2)
        frames.append(frame[:, :, ::-1])  # BGR -> RGB
    cap.release()
    if not frames:
        raise MissingVideoError(f"video has no frames: {path}")
    stack = np.stack(frames, axis=2).astype(np.float32) / 255.0
    return stack


def video_geometry(path: Path) -> tuple[int, int, int]:
    """(H, W, num_frames) without decoding pixels when possible."""
    path = Path(path)
    if path.suffix == ".lvt":
        shape = lvio.read_video_header(path)["shape"]
        return shape[0], shape[1], shape[2]
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise MissingVideoError(f"cannot open video: {path}")
    h = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
    w = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
    n = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
    cap.release()
    return h, w, n


def _parse_filelist(filelist: TextIO | str | Path) -> list[dict]:
    if isinstance(filelist, (str, Path)):
        with open(filelist, newline="") as fh:
            return _parse_filelist(fh)
    reader = csv.DictReader(filelist)
    _require_columns(reader.fieldnames, ["FileName", "Split"], "file list")
    rows = []
    for i, row in enumerate(reader, start=2):
        split = (row["Split"] or "").strip().lower()
        if split not in VALID_SPLITS:
            raise MalformedRowError(i, f"split {row['Split']!r} not in TRAIN/VAL/TEST")
        rows.append({"FileName": row["FileName"].strip(), "Split": split,
                     "NumFrames": row.get("NumFrames")})
    return rows


def _find_video(video_root: Path, name: str) -> Path:
    candidates = [video_root / name]
    if not Path(name).suffix:
        candidates += [video_root / f"{name}{ext}" for ext in (".lvt", ".avi", ".mp4")]
    for c in candidates:
        if c.exists():
            return c
    raise MissingVideoError(f"video not found under {video_root}: {name}")


def _phase_by_area(frames: list[tuple[int, np.ndarray]]) -> list[AnnotatedFrame]:
    """Two annotated frames: larger mask area is ED, smaller is ES."""
    (f0, m0), (f1, m1) = frames
    if m0.sum() >= m1.sum():
        return [AnnotatedFrame(f0, m0, "ED"), AnnotatedFrame(f1, m1, "ES")]
    return [AnnotatedFrame(f0, m0, "ES"), AnnotatedFrame(f1, m1, "ED")]


def compute_channel_stats(entries: Iterable[IndexEntry], max_videos: int = 32) -> dict:
    """Per-channel mean/std over the first ``max_videos`` videos, in raw
    [0, 1] space. Deterministic: entries are visited in index order."""
    sums = np.zeros(3, dtype=np.float64)
    sqs = np.zeros(3, dtype=np.float64)
    count = 0
    for entry in list(entries)[:max_videos]:
        px = decode_video(entry.path)
        flat = px.reshape(-1, px.shape[-1]).astype(np.float64)
        sums += flat.sum(axis=0)
        sqs += (flat ** 2).sum(axis=0)
        count += flat.shape[0]
    if count == 0:
        return {"mean": [0.0, 0.0, 0.0], "std": [1.0, 1.0, 1.0]}
    mean = sums / count
    var = np.maximum(sqs / count - mean ** 2, 1e-12)
    return {"mean": mean.tolist(), "std": np.sqrt(var).tolist()}


def build_index(filelist, tracings, video_root,
                drop_first_segment: bool = True,
                compute_stats: bool = True) -> DatasetIndex:
    """Build a sparse index from an EchoNet-style file list and tracings.

    Every listed video must exist and have tracings for exactly 2 frames
    (ED and ES). Masks are rasterized at the video's native resolution.
    """
    video_root = Path(video_root)
    rows = _parse_filelist(filelist)
    if isinstance(tracings, dict):
        traced = tracings
    else:
        traced = parse_tracings(tracings)
    entries = []
    for row in rows:
        name = row["FileName"]
        path = _find_video(video_root, name)
        vid = Path(name).stem
        records = traced.get(name) or traced.get(vid)
        if records is None:
            raise AnnotationCountError(f"{name}: no tracings found")
        if len(records) != 2:
            raise AnnotationCountError(
                f"{name}: expected tracings for exactly 2 frames, got {len(records)}")
        h, w, n = video_geometry(path)
        frames = [(r.frame_index,
                   keypoints_to_mask(r, h, w, drop_first_segment=drop_first_segment))
                  for r in records]
        entries.append(IndexEntry(vid, path, row["Split"],
                                  tuple(_phase_by_area(frames)), n))
    index = DatasetIndex(entries=entries, root=video_root)
    if compute_stats:
        index.stats = compute_channel_stats(index.split("train") or entries)
    return index


def load_sparse_dataset(directory, compute_stats: bool = True) -> DatasetIndex:
    """Load a direct-mask sparse dataset (Annotations/ archives, no tracings)."""
    directory = Path(directory)
    rows = _parse_filelist(directory / "FileList.csv")
    entries = []
    for row in rows:
        name = row["FileName"]
        path = _find_video(directory / "Videos", name)
        vid = Path(name).stem
        ann_path = directory / "Annotations" / f"{vid}.lva"
        if not ann_path.exists():
            raise AnnotationCountError(f"{vid}: annotation archive missing")
        tensors, meta, _ = lvio.read_archive(ann_path)
        frames = meta["frames"]
        phases = meta["phases"]
        if len(frames) != 2:
            raise AnnotationCountError(
                f"{vid}: expected 2 annotated frames, got {len(frames)}")
        _, _, n = video_geometry(path)
        annotated = tuple(
            AnnotatedFrame(int(fi), tensors[f"mask_{k}"], phases[k])
            for k, fi in enumerate(frames))
        entries.append(IndexEntry(vid, path, row["Split"], annotated, n))
    index = DatasetIndex(entries=entries, root=directory)
    if compute_stats:
        index.stats = compute_channel_stats(index.split("train") or entries)
    return index


def load_dense_dataset(directory, compute_stats: bool = True) -> DatasetIndex:
    """Load a dense dataset where every frame has a ground-truth mask.

    Phases: the middle frame is "middle", the largest-area mask "ED", the
    smallest "ES", everything else "other".
    """
    directory = Path(directory)
    filelist = directory / "FileList.csv"
    if not filelist.exists():
        return DatasetIndex(entries=[], root=directory, dense=True)
    rows = _parse_filelist(filelist)
    entries = []
    for row in rows:
        name = row["FileName"]
        path = _find_video(directory / "Videos", name)
        vid = Path(name).stem
        mask_path = directory / "Masks" / f"{vid}.lvt"
        if not mask_path.exists():
            raise FrameCountMismatchError(f"{vid}: mask stack missing")
        stack, _ = lvio.read_tensor(mask_path)
        _, _, n = video_geometry(path)
        if stack.shape[0] != n:
            raise FrameCountMismatchError(
                f"{vid}: video has {n} frames but mask stack has {stack.shape[0]}")
        areas = stack.reshape(stack.shape[0], -1).sum(axis=1)
        ed, es, mid = int(areas.argmax()), int(areas.argmin()), n // 2
        annotated = []
        for i in range(n):
            phase = ("middle" if i == mid else
                     "ED" if i == ed else "ES" if i == es else "other")
            annotated.append(AnnotatedFrame(i, stack[i].astype(np.uint8), phase))
        entries.append(IndexEntry(vid, path, row["Split"], tuple(annotated), n))
    index = DatasetIndex(entries=entries, root=directory, dense=True)
    if compute_stats and entries:
        index.stats = compute_channel_stats(index.split("train") or entries)
    return index


def load_dataset(directory, compute_stats: bool = True) -> DatasetIndex:
    """Detect the layout under ``directory`` and load the matching index."""
    directory = Path(directory)
    if (directory / "VolumeTracings.csv").exists():
        return build_index(directory / "FileList.csv",
                           directory / "VolumeTracings.csv",
                           directory / "Videos", compute_stats=compute_stats)
    if (directory / "Annotations").is_dir():
        return load_sparse_dataset(directory, compute_stats=compute_stats)
    if (directory / "Masks").is_dir():
        return load_dense_dataset(directory, compute_stats=compute_stats)
    raise IngestError(f"no recognizable dataset layout under {directory}")


def load_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if path.exists():
        return json.loads(path.read_text())
    return {}
