"""Brute-force reference implementations used as test oracles."""

import numpy as np

from saga.losses import NONE, triplet_loss
from saga.tensor import Tensor


def sq_dist(a, b):
    return float(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def dist_matrix(e):
    n = len(e)
    return [[sq_dist(e[i], e[j]) for j in range(n)] for i in range(n)]


def hardest_positive(d, y, i):
    best, best_d = NONE, -1.0
    for j in range(len(y)):
        if j != i and y[j] == y[i] and d[i][j] > best_d:
            best, best_d = j, d[i][j]
    return best


def mine_hard_oracle(e, y):
    d = dist_matrix(e)
    pos, neg = [], []
    for i in range(len(y)):
        pos.append(hardest_positive(d, y, i))
        best, best_d = NONE, float("inf")
        for j in range(len(y)):
            if y[j] != y[i] and d[i][j] < best_d:
                best, best_d = j, d[i][j]
        neg.append(best)
    return pos, neg


def mine_semi_hard_oracle(e, y, alpha):
    d = dist_matrix(e)
    pos, neg = [], []
    for i in range(len(y)):
        p = hardest_positive(d, y, i)
        pos.append(p)
        best, best_d = NONE, float("inf")
        if p != NONE:
            d_ap = d[i][p]
            for j in range(len(y)):
                if y[j] != y[i] and d_ap < d[i][j] < d_ap + alpha and d[i][j] < best_d:
                    best, best_d = j, d[i][j]
        neg.append(best)
    return pos, neg


def batch_loss_oracle(e, pos, neg, alpha, valid_mean=False):
    """Per-anchor loop over triplet_loss on a fixed selection."""
    total, valid = 0.0, 0
    for i, (p, n) in enumerate(zip(pos, neg)):
        if p == NONE or n == NONE:
            continue
        valid += 1
        a, pp, nn = (Tensor(e[k], dtype=np.float64) for k in (i, p, n))
        total += triplet_loss(a, pp, nn, alpha).item()
    denom = max(valid, 1) if valid_mean else len(pos)
    return total / denom


def random_batch(rng, grid=False):
    """Random labelled batch (B <= 32, d <= 8, 2 to 5 classes); ``grid`` forces exact distance ties."""
    n_classes = int(rng.integers(2, 6))
    B = int(rng.integers(n_classes, 33))
    d = int(rng.integers(1, 9))
    y = np.concatenate([np.arange(n_classes), rng.integers(0, n_classes, B - n_classes)])
    rng.shuffle(y)
    e = rng.integers(-2, 3, size=(B, d)).astype(np.float64) if grid else rng.normal(size=(B, d))
    return e, y
