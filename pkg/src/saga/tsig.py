"""Temporal attention signatures: class-averaged frame-to-frame attention maps.

A signature is the attention of the penultimate temporal block, averaged
over heads (or one selected head) and then over the videos of one class,
and finally min-max scaled to [0, 1].
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .model import Model, forward_batch
from .tensor import Prng

AVERAGED = "AVERAGED"
_BATCH = 256


@dataclass(frozen=True)
class TSig:
    matrix: np.ndarray
    class_id: str
    n_videos: int
    source_block: int
    head: int | None = None
    degenerate: bool = False
    raw: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def head_mode(self) -> str:
        return AVERAGED if self.head is None else f"PER_HEAD({self.head})"

    @property
    def L(self) -> int:
        return int(self.matrix.shape[0])


def _frames(videos) -> np.ndarray:
    """Accept a DatasetIndex, a ``[N, L, l_t, d]`` array, or a sequence of videos."""
    if hasattr(videos, "frames") and callable(videos.frames):
        return videos.frames()
    if isinstance(videos, np.ndarray):
        return videos[None] if videos.ndim == 3 else videos
    items = [np.asarray(getattr(getattr(v, "frames", v), "data", getattr(v, "frames", v))) for v in videos]
    if not items:
        raise ShapeError("no videos given")
    lengths = {a.shape for a in items}
    if len(lengths) > 1:
        raise ShapeError(f"videos of mixed shapes {sorted(lengths)}")
    return np.stack(items)


def extract_attention(model: Model, videos) -> np.ndarray:
    """Per-head softmaxed attention of the penultimate temporal block.

    Returns ``[heads, L, L]`` for one video or ``[N, heads, L, L]`` for many.
    """
    if model.config.depth < 2:
        raise ConfigError(f"signatures need depth >= 2, got depth={model.config.depth}")
    single = isinstance(videos, np.ndarray) and videos.ndim == 3 or hasattr(videos, "video_id")
    frames = _frames([videos] if hasattr(videos, "video_id") else videos)
    was_training = model.training
    model.eval()
    try:
        out = []
        for start in range(0, frames.shape[0], _BATCH):
            res = forward_batch(model, frames[start:start + _BATCH], capture=True)
            out.append(res.attention[model.config.tsig_block].astype(np.float64))
    finally:
        model.training = was_training
    att = np.concatenate(out)
    return att[0] if single else att


def normalize_signature(matrix: np.ndarray) -> tuple[np.ndarray, bool]:
    """Min-max scale to [0, 1]; a zero-range matrix maps to zeros and is flagged."""
    lo, hi = float(matrix.min()), float(matrix.max())
    if not hi > lo:
        return np.zeros_like(matrix, dtype=np.float64), True
    return (matrix - lo) / (hi - lo), False


def signature_from_attention(att: np.ndarray, class_id: str = "", source_block: int = -1,
                             head: int | None = None) -> TSig:
    """Build a signature from stacked per-head attention ``[N, heads, L, L]``."""
    if att.ndim != 4 or att.shape[0] < 1:
        raise ShapeError(f"expected [N, heads, L, L] attention, got shape {att.shape}")
    per_video = att.mean(axis=1) if head is None else att[:, head]
    raw = per_video.mean(axis=0)
    matrix, degenerate = normalize_signature(raw)
    return TSig(matrix, class_id, int(att.shape[0]), source_block, head, degenerate, raw)


def compute_signature(model: Model, videos, head: int | None = None, class_id: str = "") -> TSig:
    """Signature of one class from its videos; ``head=None`` averages heads."""
    att = extract_attention(model, _frames(videos))
    if head is not None and not 0 <= head < model.config.n_heads:
        raise ConfigError(f"head {head} out of range for {model.config.n_heads} heads")
    return signature_from_attention(att, class_id, model.config.tsig_block, head)


def _as_matrix(s) -> np.ndarray:
    return np.asarray(s.matrix if isinstance(s, TSig) else s, dtype=np.float64)


def signature_distance(s1, s2) -> tuple[float, float]:
    """``(cosine similarity, Frobenius distance)`` of two signatures.

    Cosine involving an all-zero signature is reported as 0.
    """
    a, b = _as_matrix(s1), _as_matrix(s2)
    if a.shape != b.shape:
        raise ShapeError(f"signature shapes differ: {a.shape} vs {b.shape}")
    fro = float(np.linalg.norm(a - b))
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0, fro
    cos = float(np.clip(np.dot(a.ravel(), b.ravel()) / (na * nb), -1.0, 1.0))
    return cos, fro


@dataclass
class SignatureDistanceReport:
    """Pairwise signature comparisons plus split-half stability per class."""

    classes: list[str]
    cosine: np.ndarray
    frobenius: np.ndarray
    stability: dict[str, float] = field(default_factory=dict)
    probe: dict | None = None

    @property
    def max_inter(self) -> float:
        n = len(self.classes)
        if n < 2:
            return float("nan")
        return float(self.cosine[~np.eye(n, dtype=bool)].max())

    @property
    def min_intra(self) -> float:
        return min(self.stability.values()) if self.stability else float("nan")

    def to_dict(self) -> dict:
        d = {
            "classes": list(self.classes),
            "cosine": self.cosine.tolist(),
            "frobenius": self.frobenius.tolist(),
            "stability": dict(self.stability),
            "min_intra": _json_num(self.min_intra),
            "max_inter": _json_num(self.max_inter),
        }
        if self.probe is not None:
            d["probe"] = self.probe
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _json_num(x: float):
    return None if math.isnan(x) else x


def distance_report(signatures: Mapping[str, TSig], stability: Mapping[str, float] | None = None
                    ) -> SignatureDistanceReport:
    names = list(signatures)
    n = len(names)
    cos = np.eye(n)
    fro = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            c, f = signature_distance(signatures[names[i]], signatures[names[j]])
            cos[i, j] = cos[j, i] = c
            fro[i, j] = fro[j, i] = f
    return SignatureDistanceReport(names, cos, fro, dict(stability or {}))


def split_half_stability(att: np.ndarray, seed: int, head: int | None = None) -> float:
    """Cosine between signatures of two random disjoint halves of a class."""
    n = att.shape[0]
    if n < 2:
        raise ShapeError("split-half stability needs at least 2 videos")
    perm = Prng(seed).permutation(n)
    half = n // 2
    a = signature_from_attention(att[np.sort(perm[:half])], head=head)
    b = signature_from_attention(att[np.sort(perm[half:2 * half])], head=head)
    return signature_distance(a, b)[0]


def class_signatures(model: Model, index, classes: Sequence[str] | None = None, head: int | None = None,
                     seed: int = 0) -> tuple[dict[str, TSig], SignatureDistanceReport]:
    """Signatures for each GEN class of ``index`` plus their distance report."""
    names = list(index.manifest.classes_at_level("GEN").names)
    wanted = names if classes is None else list(classes)
    unknown = [c for c in wanted if c not in names]
    if unknown:
        raise ConfigError(f"classes {unknown} not in manifest")
    labels = index.labels_at("GEN")
    sigs, stab = {}, {}
    for c in wanted:
        pos = np.flatnonzero(labels == names.index(c))
        if pos.size == 0:
            raise ConfigError(f"no videos of class {c!r} in this split")
        att = extract_attention(model, index.frames(pos))
        sigs[c] = signature_from_attention(att, c, model.config.tsig_block, head)
        if pos.size >= 2:
            stab[c] = split_half_stability(att, seed, head)
    return sigs, distance_report(sigs, stab)


def unseen_signature_probe(model: Model, videos, trained: Mapping[str, TSig], class_id: str = "unseen",
                           head: int | None = None) -> tuple[TSig, dict]:
    """Signature of a never-trained class and its similarity to every trained signature."""
    sig = compute_signature(model, videos, head, class_id)
    sims = {name: signature_distance(sig, s)[0] for name, s in trained.items()}
    nearest = max(sims, key=lambda k: (sims[k], -list(sims).index(k))) if sims else None
    return sig, {
        "class_id": class_id,
        "n_videos": sig.n_videos,
        "similarity": sims,
        "max_similarity": max(sims.values()) if sims else None,
        "nearest": nearest,
    }


def export_heatmap(sig: TSig, path_base) -> tuple[Path, Path]:
    """Write ``path_base.pgm`` (binary 8-bit grayscale) and ``path_base.csv``."""
    m = _as_matrix(sig)
    L = m.shape[0]
    base = Path(path_base)
    pgm, csv_path = base.with_name(base.name + ".pgm"), base.with_name(base.name + ".csv")
    pixels = np.floor(255.0 * np.clip(m, 0.0, 1.0) + 0.5).astype(np.uint8)
    pgm.write_bytes(f"P5\n{L} {L}\n255\n".encode("ascii") + pixels.tobytes())
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in m.tolist():
            w.writerow([f"{v:.9g}" for v in row])
    return pgm, csv_path


def read_heatmap_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ShapeError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
