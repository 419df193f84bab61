"""Chunked binary container for tensors, and a named-tensor archive.

Tensor container layout (little-endian):
    magic   b"LVTN1\\0"
    uint32  header length
    bytes   JSON header: {"dtype": numpy dtype str, "shape": [...],
                          "meta": {...}, "chunk": chunk size in bytes}
    chunks  repeated (uint64 length, payload bytes) covering the row-major
            buffer in order

Archive layout:
    magic   b"LVAR1\\0"
    uint32  manifest length
    bytes   JSON manifest: {"names": [...], "meta": {...}}
    bodies  one tensor container per name, in manifest order

Both formats are fully deterministic: identical arrays and metadata produce
identical bytes, which the CLI relies on for reproducible artifacts.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .core import VideoTensor

TENSOR_MAGIC = b"LVTN1\x00"
ARCHIVE_MAGIC = b"LVAR1\x00"
DEFAULT_CHUNK = 1 << 20


class ContainerFormatError(ValueError):
    """The byte stream is not a valid container of the expected kind."""


def _write_json_block(f: BinaryIO, obj: dict) -> None:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    f.write(struct.pack("<I", len(payload)))
    f.write(payload)


def _read_json_block(f: BinaryIO) -> dict:
    raw = f.read(4)
    if len(raw) != 4:
        raise ContainerFormatError("truncated header length")
    (n,) = struct.unpack("<I", raw)
    payload = f.read(n)
    if len(payload) != n:
        raise ContainerFormatError("truncated header")
    return json.loads(payload.decode("utf-8"))


def write_tensor(f, arr: np.ndarray, meta: dict | None = None,
                 chunk_size: int = DEFAULT_CHUNK) -> None:
    """Write one tensor; ``f`` is a binary file object or a path."""
    if isinstance(f, (str, Path)):
        with open(f, "wb") as fh:
            write_tensor(fh, arr, meta, chunk_size)
        return
    arr = np.ascontiguousarray(arr)
    header = {
        "dtype": arr.dtype.str,
        "shape": list(arr.shape),
        "meta": meta or {},
        "chunk": int(chunk_size),
    }
    f.write(TENSOR_MAGIC)
    _write_json_block(f, header)
    buf = arr.tobytes(order="C")
    for off in range(0, len(buf), chunk_size):
        piece = buf[off:off + chunk_size]
        f.write(struct.pack("<Q", len(piece)))
        f.write(piece)
    if not buf:
        f.write(struct.pack("<Q", 0))


def read_tensor(f, peek_header: bool = False):
    """Read one tensor; returns (array, meta). With ``peek_header`` the
    payload is skipped and (None, header dict) is returned instead."""
    if isinstance(f, (str, Path)):
        with open(f, "rb") as fh:
            return read_tensor(fh, peek_header)
    magic = f.read(len(TENSOR_MAGIC))
    if magic != TENSOR_MAGIC:
        raise ContainerFormatError(f"bad tensor magic {magic!r}")
    header = _read_json_block(f)
    dtype = np.dtype(header["dtype"])
    shape = tuple(header["shape"])
    total = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
    if shape and 0 in shape:
        total = 0
    if peek_header:
        # consume payload chunks so the stream stays positioned
        got = 0
        while got < total or (total == 0 and got == 0):
            (n,) = struct.unpack("<Q", f.read(8))
            f.seek(n, 1)
            got += n
            if total == 0:
                break
        return None, header
    parts = []
    got = 0
    while got < total or (total == 0 and got == 0):
        raw = f.read(8)
        if len(raw) != 8:
            raise ContainerFormatError("truncated chunk length")
        (n,) = struct.unpack("<Q", raw)
        piece = f.read(n)
        if len(piece) != n:
            raise ContainerFormatError("truncated chunk payload")
        parts.append(piece)
        got += n
        if total == 0:
            break
    if got != total:
        raise ContainerFormatError(f"payload size {got} != expected {total}")
    arr = np.frombuffer(b"".join(parts), dtype=dtype).reshape(shape)
    return arr.copy(), header["meta"]


def write_archive(path, tensors: dict[str, np.ndarray],
                  meta: dict | None = None,
                  tensor_meta: dict[str, dict] | None = None) -> None:
    """Write a named-tensor archive (insertion order preserved)."""
    names = list(tensors)
    tensor_meta = tensor_meta or {}
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        _write_json_block(f, {"names": names, "meta": meta or {}})
        for name in names:
            write_tensor(f, tensors[name], tensor_meta.get(name))


def read_archive(path):
    """Read a named-tensor archive.

    Returns (tensors: dict name -> array, meta: dict,
             tensor_meta: dict name -> dict).
    """
    with open(path, "rb") as f:
        magic = f.read(len(ARCHIVE_MAGIC))
        if magic != ARCHIVE_MAGIC:
            raise ContainerFormatError(f"bad archive magic {magic!r}")
        manifest = _read_json_block(f)
        tensors = {}
        tensor_meta = {}
        for name in manifest["names"]:
            arr, tmeta = read_tensor(f)
            tensors[name] = arr
            tensor_meta[name] = tmeta
    return tensors, manifest["meta"], tensor_meta


def save_video_tensor(path, video: VideoTensor) -> None:
    write_tensor(path, video.pixels, meta={
        "kind": "video",
        "frame_indices": list(video.frame_indices),
        "pad_flags": [int(b) for b in video.pad_flags],
    })


def load_video_tensor(path) -> VideoTensor:
    arr, meta = read_tensor(path)
    if meta.get("kind") != "video":
        raise ContainerFormatError(f"{path} is not a video tensor container")
    return VideoTensor(
        pixels=arr,
        frame_indices=tuple(meta["frame_indices"]),
        pad_flags=tuple(bool(b) for b in meta["pad_flags"]),
    )


def read_video_header(path) -> dict:
    """Read shape/provenance metadata without loading pixels."""
    _, header = read_tensor(path, peek_header=True)
    return {"shape": tuple(header["shape"]), **header["meta"]}
