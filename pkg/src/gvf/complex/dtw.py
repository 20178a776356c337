"""Classic dynamic time warping with absolute-difference cost."""

import numpy as np


def dtw_distance(x, y):
    """Unconstrained DTW between two 1-D sequences.

    Cost of a path is the sum of ``|x[i] - y[j]|`` over its cells; steps are
    (1,0), (0,1) and (1,1). No normalization by path length.
    """
    return float(dtw_batch(np.asarray(x, float)[None, :], np.asarray(y, float)[None, :])[0])


def dtw_batch(X, Y):
    """Row-wise DTW for two stacks of equal-length sequences, shape (P, n)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    P, n = X.shape
    _, m = Y.shape
    if P == 0:
        return np.zeros(0)
    prev = np.full((P, m + 1), np.inf)
    prev[:, 0] = 0.0
    for i in range(n):
        cost = np.abs(X[:, i : i + 1] - Y)
        cur = np.empty((P, m + 1))
        cur[:, 0] = np.inf
        diag_up = np.minimum(prev[:, :-1], prev[:, 1:])
        for j in range(m):
            cur[:, j + 1] = cost[:, j] + np.minimum(diag_up[:, j], cur[:, j])
        prev = cur
    return prev[:, m].copy()


def dtw_lower_bound(X, Y):
    """Cheap lower bound on DTW, shape (P,).

    Every row of the cost matrix and every column is visited at least once,
    and both corner cells are always on the path.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    cost = np.abs(X[:, :, None] - Y[:, None, :])
    rows = cost.min(axis=2).sum(axis=1)
    cols = cost.min(axis=1).sum(axis=1)
    return np.maximum(rows, cols)


def within_threshold(X, Y, tau, chunk=2048):
    """Boolean mask of pairs whose DTW distance is ``<= tau``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    out = np.zeros(len(X), dtype=bool)
    for s in range(0, len(X), chunk):
        xs, ys = X[s : s + chunk], Y[s : s + chunk]
        cand = np.flatnonzero(dtw_lower_bound(xs, ys) <= tau)
        if cand.size:
            out[s + cand] = dtw_batch(xs[cand], ys[cand]) <= tau
    return out


def znormalize(x):
    x = np.asarray(x, dtype=float)
    sd = x.std()
    if sd < 1e-12:
        return np.zeros_like(x)
    return (x - x.mean()) / sd
