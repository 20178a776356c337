"""Betti numbers and persistence-plateau threshold selection."""

import logging
from dataclasses import dataclass
from math import gcd

import numpy as np
import scipy.sparse as sp

from ..errors import ValidationError
from .build import build_complex

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TopologySummary:
    beta0: int
    beta1: int
    d_max: int

    def to_dict(self):
        return {"beta0": self.beta0, "beta1": self.beta1, "d_max": self.d_max}


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))
        self.size = [1] * n
        self.count = n

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.count -= 1
        return True


def components(K):
    """Component label per vertex, labels numbered by first appearance."""
    uf = UnionFind(K.n_vertices)
    for a, b in K.edges:
        uf.union(int(a), int(b))
    labels, out = {}, []
    for v in range(K.n_vertices):
        out.append(labels.setdefault(uf.find(v), len(labels)))
    return np.array(out, dtype=np.int64)


def integer_rank(matrix):
    """Exact rank of an integer sparse matrix.

    Columns are reduced left to right against previously reduced pivots
    using fraction-free updates ``v <- p*v - a*w`` followed by division by
    the content gcd, so every intermediate stays an integer vector.
    """
    csc = sp.csc_matrix(matrix)
    pivots = {}
    rank = 0
    for c in range(csc.shape[1]):
        lo, hi = csc.indptr[c], csc.indptr[c + 1]
        col = {int(r): int(v) for r, v in zip(csc.indices[lo:hi], csc.data[lo:hi]) if v}
        while col:
            low = max(col)
            piv = pivots.get(low)
            if piv is None:
                pivots[low] = col
                rank += 1
                break
            a, p = col[low], piv[low]
            merged = {}
            for r in col.keys() | piv.keys():
                v = p * col.get(r, 0) - a * piv.get(r, 0)
                if v:
                    merged[r] = v
            g = 0
            for v in merged.values():
                g = gcd(g, v)
            if g > 1:
                merged = {r: v // g for r, v in merged.items()}
            col = merged
    return rank


def betti_numbers(K):
    """beta0 by union-find, beta1 = |E| - rank(B1) - rank(B2) computed exactly."""
    beta0 = int(len(set(components(K).tolist())))
    beta1 = K.n_edges - integer_rank(K.b1) - integer_rank(K.b2)
    if K.n_triangles:
        d_max = int(np.diff(K.b2.tocsr().indptr).max())
    else:
        d_max = 0
    return TopologySummary(beta0, beta1, d_max)


@dataclass(frozen=True)
class PlateauSelection:
    config: object
    index: int
    start: int
    length: int
    betti: tuple
    no_plateau: bool

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "index": self.index,
            "start": self.start,
            "length": self.length,
            "beta0": self.betti[0],
            "beta1": self.betti[1],
            "no_plateau": self.no_plateau,
        }


def sweep_thresholds(events, grid, t0=0.0):
    """Build the window complex at every grid point and record its Betti pair."""
    if not grid:
        raise ValidationError("threshold grid is empty")
    return [(cfg, betti_numbers(build_complex(events, t0, cfg))) for cfg in grid]


def select_plateau(results):
    """Midpoint of the longest run of constant ``(beta0, beta1)``.

    The first longest run wins ties. When every grid point has a distinct
    Betti pair (and there is more than one point) the first config is
    returned with ``no_plateau`` set.
    """
    if not results:
        raise ValidationError("no sweep results")
    pairs = [(s.beta0, s.beta1) for _, s in results]
    best_start, best_len = 0, 1
    start = 0
    for i in range(1, len(pairs) + 1):
        if i == len(pairs) or pairs[i] != pairs[start]:
            if i - start > best_len:
                best_start, best_len = start, i - start
            start = i
    if best_len == 1 and len(pairs) > 1:
        log.warning("threshold sweep found no plateau; using first grid point")
        return PlateauSelection(results[0][0], 0, 0, 1, pairs[0], True)
    mid = best_start + (best_len - 1) // 2
    return PlateauSelection(results[mid][0], mid, best_start, best_len, pairs[mid], False)
