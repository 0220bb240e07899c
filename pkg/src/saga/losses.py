"""Classification and metric-learning objectives over pooled video embeddings.

Mining runs on detached squared distances; the batch losses then recompute
the selected anchor/positive/negative distances differentiably, so gradients
flow only through the chosen pairs. Every argmin/argmax breaks ties by the
lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import MiningError, ParameterError, ShapeError, StatsError
from .tensor import Tensor
from .tensor import ops as F
from .tensor.ops import _emit

NONE = -1
HARD = "HARD"
SEMI_HARD = "SEMI_HARD"

DEFAULT_ALPHA = 0.2
DEFAULT_LAMBDA = 0.5


def _check_alpha(alpha: float) -> None:
    if not alpha > 0:
        raise ParameterError(f"margin alpha must be > 0, got {alpha}")


def cross_entropy(logits: Tensor, label) -> Tensor:
    """``-log softmax(logits)[label]``; batched logits give the batch mean."""
    return F.cross_entropy(logits, label)


def pairwise_sq_dists(embeddings: Tensor) -> Tensor:
    """Differentiable ``[B, B]`` squared Euclidean distances via the Gram matrix.

    Negative round-off is clamped to zero and the diagonal is exactly zero.
    """
    e = embeddings.data
    if e.ndim != 2 or e.shape[0] < 2:
        raise ShapeError(f"pairwise_sq_dists needs [B >= 2, d] embeddings, got {e.shape}")
    sq = (e * e).sum(axis=1)
    raw = sq[:, None] + sq[None, :] - 2.0 * (e @ e.T)
    active = raw > 0
    np.fill_diagonal(active, False)
    out = np.where(active, raw, 0).astype(e.dtype)

    def backward(g):
        s = np.where(active, g, 0)
        s = s + s.T
        return (2.0 * (s.sum(axis=1, keepdims=True) * e - s @ e),)

    return _emit("pairwise_sq_dists", out, (embeddings,), backward)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise unit-norm rescaling of ``[B, d]``."""
    v = x.data
    norm = np.sqrt((v * v).sum(axis=-1, keepdims=True) + eps)
    y = v / norm

    def backward(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return _emit("l2_normalize", y.astype(v.dtype, copy=False), (x,), backward)


def _sq_dist(a: Tensor, b: Tensor) -> Tensor:
    diff = a - b
    return F.sum(diff * diff, axis=-1)


def triplet_loss(a: Tensor, p: Tensor, n: Tensor, alpha: float = DEFAULT_ALPHA) -> Tensor:
    """``max(0, |a - p|^2 - |a - n|^2 + alpha)`` for single vectors."""
    _check_alpha(alpha)
    return F.relu(_sq_dist(a, p) - _sq_dist(a, n) + alpha)


@dataclass
class MiningBatch:
    """Embeddings and labels of one batch, with cached squared distances."""

    embeddings: Tensor
    labels: np.ndarray
    _dists: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not isinstance(self.embeddings, Tensor):
            self.embeddings = Tensor(self.embeddings)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != self.labels.size:
            raise ShapeError(f"{self.labels.size} labels for embeddings of shape {self.embeddings.shape}")

    def __len__(self):
        return int(self.labels.size)

    @property
    def dists(self) -> np.ndarray:
        """Detached squared distances from direct differences (exact zero diagonal)."""
        if self._dists is None:
            e = self.embeddings.data.astype(np.float64)
            diff = e[:, None, :] - e[None, :, :]
            self._dists = (diff * diff).sum(axis=-1)
        return self._dists


@dataclass(frozen=True)
class TripletSelection:
    """Per-anchor positive/negative indices; ``NONE`` (-1) marks absence."""

    positives: np.ndarray
    negatives: np.ndarray
    kind: str

    @property
    def valid(self) -> np.ndarray:
        return (self.positives != NONE) & (self.negatives != NONE)

    @property
    def n_skipped(self) -> int:
        return int((~self.valid).sum())


def _hardest_positives(d: np.ndarray, labels: np.ndarray) -> np.ndarray:
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    masked = np.where(same, d, -np.inf)
    pos = np.argmax(masked, axis=1)  # first maximum, i.e. lowest index
    pos[~same.any(axis=1)] = NONE
    return pos.astype(np.int64)


def mine_hard(batch: MiningBatch) -> TripletSelection:
    """Hardest positive and globally nearest different-class negative per anchor."""
    labels = batch.labels
    if np.unique(labels).size < 2:
        raise MiningError("hard mining needs at least two classes in the batch")
    d = batch.dists
    diff = labels[:, None] != labels[None, :]
    neg = np.argmin(np.where(diff, d, np.inf), axis=1).astype(np.int64)
    return TripletSelection(_hardest_positives(d, labels), neg, HARD)


def mine_semi_hard(batch: MiningBatch, alpha: float = DEFAULT_ALPHA) -> TripletSelection:
    """Nearest negative with ``d_ap < d_an < d_ap + alpha``, or ``NONE``."""
    _check_alpha(alpha)
    labels = batch.labels
    d = batch.dists
    pos = _hardest_positives(d, labels)
    d_ap = np.where(pos != NONE, d[np.arange(labels.size), np.maximum(pos, 0)], np.nan)[:, None]
    diff = labels[:, None] != labels[None, :]
    with np.errstate(invalid="ignore"):
        ok = diff & (d > d_ap) & (d < d_ap + alpha)
    neg = np.argmin(np.where(ok, d, np.inf), axis=1).astype(np.int64)
    neg[~ok.any(axis=1)] = NONE
    return TripletSelection(pos, neg, SEMI_HARD)


def selection_loss(batch: MiningBatch, sel: TripletSelection, alpha: float,
                   valid_mean: bool = False) -> Tensor:
    """Mean hinge over anchors for a fixed selection.

    Anchors without a full triplet contribute zero. The mean divides by the
    batch size, or by the number of valid anchors when ``valid_mean``.
    """
    _check_alpha(alpha)
    e = batch.embeddings
    B = len(batch)
    valid = sel.valid
    anchors = np.arange(B)
    p = np.where(valid, sel.positives, anchors)
    n = np.where(valid, sel.negatives, anchors)
    ea = F.take(e, anchors)
    hinge = F.relu(_sq_dist(ea, F.take(e, p)) - _sq_dist(ea, F.take(e, n)) + alpha)
    hinge = hinge * Tensor(valid.astype(e.dtype), dtype=e.dtype)
    denom = max(int(valid.sum()), 1) if valid_mean else B
    return F.sum(hinge) * (1.0 / denom)


def _prepare(batch: MiningBatch, normalize: bool) -> MiningBatch:
    return MiningBatch(l2_normalize(batch.embeddings), batch.labels) if normalize else batch


def batch_hnm_loss(batch: MiningBatch, alpha: float = DEFAULT_ALPHA, normalize: bool = False) -> Tensor:
    """Hard-negative triplet loss averaged over all anchors of the batch."""
    batch = _prepare(batch, normalize)
    return selection_loss(batch, mine_hard(batch), alpha)


def batch_semi_hnm_loss(batch: MiningBatch, alpha: float = DEFAULT_ALPHA, normalize: bool = False,
                        valid_mean: bool = False) -> Tensor:
    """Semi-hard triplet loss; anchors without a semi-hard negative add zero."""
    batch = _prepare(batch, normalize)
    return selection_loss(batch, mine_semi_hard(batch, alpha), alpha, valid_mean)


def combined_loss(ce, hnm, lam: float = DEFAULT_LAMBDA):
    """``lam * ce + (1 - lam) * hnm``."""
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"lambda must lie in [0, 1], got {lam}")
    return ce * lam + hnm * (1.0 - lam)


@dataclass(frozen=True)
class ClusterStats:
    sigma_intra_sq: float
    sigma_inter_sq: float
    centroids: np.ndarray
    classes: tuple[int, ...]


def cluster_stats(embeddings, labels: Sequence[int]) -> ClusterStats:
    """Mean squared distance to own centroid, and mean squared centroid-pair distance."""
    e = np.asarray(getattr(embeddings, "data", embeddings), dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise StatsError(f"cluster statistics need >= 2 classes, got {classes.size}")
    if (counts < 2).any():
        raise StatsError(f"classes {classes[counts < 2].tolist()} have fewer than 2 items")
    cents = np.stack([e[y == c].mean(axis=0) for c in classes])
    own = cents[np.searchsorted(classes, y)]
    intra = float(((e - own) ** 2).sum(axis=1).mean())
    i, j = np.triu_indices(classes.size, k=1)
    inter = float(((cents[i] - cents[j]) ** 2).sum(axis=1).mean())
    return ClusterStats(intra, inter, cents, tuple(classes.tolist()))
