"""SEMB: binary container for frame-embedding videos.

Layout (little-endian)::

    "SEMB" | u16 version=1 | u16 reserved | u32 count | u32 L | u32 l_t | u32 d_t
    count x ( u16 len | utf-8 video id | u16 len | utf-8 generator id | L*l_t*d_t f32 )
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import FormatError, ShapeError

MAGIC = b"SEMB"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIII")
_U16 = struct.Struct("<H")


def write_embedding_file(path, video_ids: Sequence[str], generator_ids: Sequence[str], frames: np.ndarray) -> None:
    """Write ``frames`` (``[count, L, l_t, d_t]``) with their ids."""
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ShapeError(f"frames must be [count, L, l_t, d_t], got shape {frames.shape}")
    n, L, lt, dt = frames.shape
    if len(video_ids) != n or len(generator_ids) != n:
        raise ShapeError(f"{len(video_ids)} video ids / {len(generator_ids)} generator ids for {n} items")
    payload = frames.astype("<f4", copy=False)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0, n, L, lt, dt))
        for i in range(n):
            for s in (video_ids[i], generator_ids[i]):
                raw = s.encode("utf-8")
                if len(raw) > 0xFFFF:
                    raise FormatError(f"id longer than 65535 bytes: {s[:40]!r}...")
                fh.write(_U16.pack(len(raw)))
                fh.write(raw)
            fh.write(payload[i].tobytes())


def read_embedding_file(path) -> tuple[list[str], list[str], np.ndarray]:
    """Return ``(video_ids, generator_ids, frames)``; frames are float32."""
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: truncated header: expected {_HEADER.size} bytes, got {len(buf)}")
    magic, version, _reserved, n, L, lt, dt = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    per_item = L * lt * dt * 4
    frames = np.empty((n, L, lt, dt), dtype=np.float32)
    vids, gids = [], []
    off = _HEADER.size

    def need(count, what):
        if off + count > len(buf):
            raise FormatError(
                f"{path}: truncated {what} at byte offset {off}: expected {count} bytes, got {len(buf) - off}")

    for i in range(n):
        for out in (vids, gids):
            need(2, f"item {i} id length")
            (k,) = _U16.unpack_from(buf, off)
            off += 2
            need(k, f"item {i} id")
            try:
                out.append(buf[off:off + k].decode("utf-8"))
            except UnicodeDecodeError:
                raise FormatError(f"{path}: invalid UTF-8 id at byte offset {off}") from None
            off += k
        need(per_item, f"item {i} payload")
        frames[i] = np.frombuffer(buf, dtype="<f4", count=L * lt * dt, offset=off).reshape(L, lt, dt)
        off += per_item
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes after item {n - 1} at byte offset {off}")
    return vids, gids, frames


def write_labels_csv(path, video_ids: Iterable[str], generator_ids: Iterable[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "generator_id"])
        w.writerows(zip(video_ids, generator_ids))


def read_labels_csv(path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["video_id", "generator_id"]:
        raise FormatError(f"{path}: expected header video_id,generator_id")
    return {r[0]: r[1] for r in rows[1:]}
