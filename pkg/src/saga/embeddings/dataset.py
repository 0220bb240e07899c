"""In-memory datasets, stratified splitting/subsampling and PK batching."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ..errors import FormatError, ParameterError, SamplerError, ShapeError, UnknownLabelError
from ..labels import AttributionLevel, GeneratorManifest, LabelRecord
from ..tensor import Prng, Tensor
from .fileformat import read_embedding_file

log = logging.getLogger(__name__)

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = ("TRAIN", "VAL", "TEST")


def check_dims(L: int, l_t: int, d_t: int) -> None:
    if L < 2:
        raise ShapeError(f"L must be >= 2 for temporal attention, got {L}")
    if l_t < 1:
        raise ShapeError(f"l_t must be >= 1, got {l_t}")
    if d_t < 8:
        raise ShapeError(f"d_t must be >= 8, got {d_t}")


@dataclass(frozen=True)
class VideoEmbedding:
    frames: Tensor
    label: LabelRecord | None
    video_id: str


@dataclass(frozen=True)
class EmbeddingStore:
    """All videos of one embedding file, held as a single float32 array."""

    video_ids: tuple[str, ...]
    generator_ids: tuple[str, ...]
    frames: np.ndarray

    def __post_init__(self):
        n = self.frames.shape[0]
        if len(self.video_ids) != n or len(self.generator_ids) != n:
            raise ShapeError("store ids and frames disagree in length")
        check_dims(*self.frames.shape[1:])
        if not np.isfinite(self.frames).all():
            raise ShapeError("embedding store contains non-finite values")

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        vids, gids, frames = read_embedding_file(path)
        return cls(tuple(vids), tuple(gids), frames)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.frames.shape[1:])

    def __len__(self):
        return len(self.video_ids)


@dataclass(frozen=True)
class DatasetIndex:
    """Items of a store that belong to a manifest, with labels and split tags.

    ``rows`` index into ``store``; ``labels`` is ``[n, 5]`` class indices (one
    column per attribution level); ``splits`` holds TRAIN/VAL/TEST tags.
    """

    store: EmbeddingStore
    manifest: GeneratorManifest
    rows: np.ndarray
    labels: np.ndarray
    splits: np.ndarray

    @classmethod
    def build(cls, store: EmbeddingStore, manifest: GeneratorManifest, strict: bool = False) -> "DatasetIndex":
        """Index every store item whose generator is in ``manifest``.

        Items from other generators (held-out probes) are skipped unless
        ``strict``, in which case they raise.
        """
        rows, labels = [], []
        for i, gid in enumerate(store.generator_ids):
            if gid not in manifest:
                if strict:
                    raise UnknownLabelError(f"item {store.video_ids[i]!r}: generator {gid!r} not in manifest")
                continue
            rows.append(i)
            labels.append(manifest.label_record(gid).indices)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1, len(AttributionLevel))
        return cls(store, manifest, np.asarray(rows, dtype=np.int64), labels, np.zeros(len(rows), dtype=np.int8))

    def __len__(self):
        return int(self.rows.size)

    def subset(self, positions) -> "DatasetIndex":
        pos = np.asarray(positions, dtype=np.int64)
        return DatasetIndex(self.store, self.manifest, self.rows[pos], self.labels[pos], self.splits[pos])

    def split(self, tag) -> "DatasetIndex":
        tag = SPLIT_NAMES.index(tag.upper()) if isinstance(tag, str) else int(tag)
        return self.subset(np.flatnonzero(self.splits == tag))

    def with_splits(self, splits: np.ndarray) -> "DatasetIndex":
        return DatasetIndex(self.store, self.manifest, self.rows, self.labels, np.asarray(splits, dtype=np.int8))

    def labels_at(self, level) -> np.ndarray:
        return self.labels[:, AttributionLevel.parse(level)]

    def class_counts(self, level=AttributionLevel.GEN) -> np.ndarray:
        n = self.manifest.classes_at_level(level).n_classes
        return np.bincount(self.labels_at(level), minlength=n)

    def frames(self, positions=None) -> np.ndarray:
        if positions is None:
            return self.store.frames[self.rows]
        return self.store.frames[self.rows[np.asarray(positions, dtype=np.int64)]]

    def video_ids(self) -> list[str]:
        return [self.store.video_ids[r] for r in self.rows]

    def generator_ids(self) -> list[str]:
        return [self.store.generator_ids[r] for r in self.rows]

    def item(self, position: int) -> VideoEmbedding:
        r = int(self.rows[position])
        gid = self.store.generator_ids[r]
        return VideoEmbedding(Tensor(self.store.frames[r]), self.manifest.label_record(gid), self.store.video_ids[r])

    # split-index persistence: one tag per video id
    def save_index(self, path, extra: dict | None = None) -> None:
        obj = dict(extra or {})
        obj["items"] = [
            {"video_id": v, "generator_id": g, "split": SPLIT_NAMES[s]}
            for v, g, s in zip(self.video_ids(), self.generator_ids(), self.splits.tolist())
        ]
        Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")

    def load_splits(self, path) -> "DatasetIndex":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
            tags = {it["video_id"]: SPLIT_NAMES.index(it["split"]) for it in obj["items"]}
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed split index ({exc})") from None
        try:
            splits = np.array([tags[v] for v in self.video_ids()], dtype=np.int8)
        except KeyError as exc:
            raise FormatError(f"{path}: no split tag for video {exc.args[0]!r}") from None
        return self.with_splits(splits)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(index: DatasetIndex, fractions: Sequence[float], seed: int) -> DatasetIndex:
    """Stratified TRAIN/VAL/TEST assignment per GEN class, deterministic in ``seed``."""
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ParameterError(f"split fractions must be three non-negative reals summing to 1, got {fractions}")
    n_parts = sum(f > 0 for f in fr)
    labels = index.labels_at(AttributionLevel.GEN)
    splits = np.zeros(len(index), dtype=np.int8)
    prng = Prng(seed)
    for c in np.unique(labels):
        pos = np.flatnonzero(labels == c)
        n = pos.size
        if n < n_parts:
            log.warning("class %s has %d items, fewer than %d splits; assigning all to TRAIN",
                        index.manifest.classes_at_level("GEN").names[c], n, n_parts)
            continue
        counts = [0, 0, 0]
        for k in (VAL, TEST):
            if fr[k] > 0:
                counts[k] = max(1, _round_half_up(fr[k] * n))
        counts[TRAIN] = n - counts[VAL] - counts[TEST]
        while fr[TRAIN] > 0 and counts[TRAIN] < 1:
            k = VAL if counts[VAL] >= counts[TEST] else TEST
            counts[k] -= 1
            counts[TRAIN] += 1
        perm = pos[prng.spawn(int(c)).permutation(n)]
        splits[perm[counts[TRAIN]:counts[TRAIN] + counts[VAL]]] = VAL
        splits[perm[counts[TRAIN] + counts[VAL]:]] = TEST
    return index.with_splits(splits)


def stratified_subsample(index: DatasetIndex, fraction: float, floor: int = 1, seed: int = 0,
                         level=AttributionLevel.GEN) -> DatasetIndex:
    """Keep ``max(floor, round(fraction * count))`` random items of every class."""
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must lie in (0, 1], got {fraction}")
    if floor < 1:
        raise ParameterError(f"floor must be >= 1, got {floor}")
    labels = index.labels_at(level)
    prng = Prng(seed)
    keep = []
    for c in np.unique(labels):
        pos = np.flatnonzero(labels == c)
        k = min(pos.size, max(floor, _round_half_up(fraction * pos.size)))
        keep.append(pos[np.sort(prng.spawn(int(c)).choice(pos.size, k))])
    return index.subset(np.sort(np.concatenate(keep)))


def pk_batches(labels, P: int, K: int, seed: int, epoch: int = 0) -> Iterator[np.ndarray]:
    """One epoch of PK batches, as arrays of positions into ``labels``.

    Each class's items are shuffled and cut into chunks of ``K`` (the last
    chunk wraps around). Batches take ``P`` classes at a time, favouring the
    classes with the most chunks left, until every chunk is used; a batch
    that runs short of classes is topped up with random chunks of others.
    """
    if isinstance(labels, DatasetIndex):
        labels = labels.labels_at(AttributionLevel.GEN)
    labels = np.asarray(labels, dtype=np.int64)
    if K < 2:
        raise SamplerError(f"K={K}: every anchor needs a positive, so K must be >= 2")
    if P < 2:
        raise SamplerError(f"P={P}: every anchor needs a negative, so P must be >= 2")
    classes = np.unique(labels)
    short = [int(c) for c in classes if (labels == c).sum() < K]
    if short:
        raise SamplerError(f"classes {short} have fewer than K={K} items")
    if classes.size < P:
        raise SamplerError(f"P={P} classes per batch requested but only {classes.size} present")
    prng = Prng(seed).spawn(epoch)
    chunks: dict[int, list[np.ndarray]] = {}
    for c in classes.tolist():
        pos = np.flatnonzero(labels == c)
        perm = pos[prng.permutation(pos.size)]
        n_chunks = -(-pos.size // K)
        padded = np.concatenate([perm, perm[: n_chunks * K - pos.size]])
        chunks[c] = [padded[i * K:(i + 1) * K] for i in range(n_chunks)]
    remaining = {c: list(v) for c, v in chunks.items()}
    cls_list = classes.tolist()
    while any(remaining.values()):
        tie = prng.permutation(len(cls_list))
        order = sorted(range(len(cls_list)), key=lambda i: (-len(remaining[cls_list[i]]), tie[i]))
        chosen = [cls_list[i] for i in order if remaining[cls_list[i]]][:P]
        parts = [remaining[c].pop() for c in chosen]
        if len(chosen) < P:
            others = [cls_list[i] for i in order if cls_list[i] not in chosen][: P - len(chosen)]
            for c in others:
                parts.append(chunks[c][prng.below(len(chunks[c]))])
        yield np.concatenate(parts)
