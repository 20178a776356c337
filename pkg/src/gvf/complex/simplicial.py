"""Typed simplicial complex with signed incidence matrices."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from ..errors import ValidationError


class NodeKind(str, Enum):
    AGENT = "Agent"
    SPATIAL_CELL = "SpatialCell"
    ENV_SENSOR = "EnvSensor"
    EXTERNAL = "External"

    @property
    def rank(self):
        return _KIND_RANK[self]


_KIND_RANK = {
    NodeKind.AGENT: 0,
    NodeKind.SPATIAL_CELL: 1,
    NodeKind.ENV_SENSOR: 2,
    NodeKind.EXTERNAL: 3,
}


def canonical_vertex_order(vertices):
    """Sort ``(id, kind)`` pairs by kind then id."""
    return sorted(vertices, key=lambda v: (NodeKind(v[1]).rank, v[0]))


@dataclass(frozen=True, eq=False)
class SimplicialComplex:
    """A 2-dimensional simplicial complex over typed vertices.

    Edges are stored as index pairs ``i < j`` and triangles as ``i < j < k``,
    both in lexicographic order. ``b1`` (|V| x |E|) and ``b2`` (|E| x |T|) are
    integer CSR matrices derived from that orientation.
    """

    vertices: tuple
    edges: np.ndarray
    triangles: np.ndarray
    b1: sp.csr_matrix = field(repr=False)
    b2: sp.csr_matrix = field(repr=False)

    @classmethod
    def from_simplices(cls, vertices, edges=(), triangles=(), check_multimodal=True):
        """Build a complex from vertex ``(id, kind)`` pairs and index simplices.

        Edge and triangle indices refer to positions in ``vertices``; they
        are reoriented and sorted canonically. Vertices are kept in the
        order given.
        """
        verts = tuple((str(v), NodeKind(k)) for v, k in vertices)
        ids = [v for v, _ in verts]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate vertex ids")
        n = len(verts)

        e = np.array(sorted({tuple(sorted(map(int, p))) for p in edges}), dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ValidationError("edge references a missing vertex")
        if e.size and np.any(e[:, 0] == e[:, 1]):
            raise ValidationError("self-loop edge")
        t = np.array(sorted({tuple(sorted(map(int, p))) for p in triangles}), dtype=np.int64).reshape(-1, 3)
        if t.size and (len(set(map(tuple, t))) != len(t) or np.any(t[:, 0] == t[:, 1]) or np.any(t[:, 1] == t[:, 2])):
            raise ValidationError("degenerate triangle")

        edge_index = {(int(a), int(b)): i for i, (a, b) in enumerate(e)}
        kinds = [k for _, k in verts]
        for a, b, c in t:
            for pair in ((a, b), (b, c), (a, c)):
                if (int(pair[0]), int(pair[1])) not in edge_index:
                    raise ValidationError(f"triangle {(a, b, c)} is missing edge {pair}")
            if check_multimodal and len({kinds[a], kinds[b], kinds[c]}) < 2:
                raise ValidationError(f"triangle {(a, b, c)} has a single node kind")

        b1 = _incidence_b1(n, e)
        b2 = _incidence_b2(e, t, edge_index)
        return cls(verts, e, t, b1, b2)

    @classmethod
    def empty(cls):
        return cls.from_simplices([], [], [])

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def ids(self):
        return [v for v, _ in self.vertices]

    @property
    def kinds(self):
        return [k for _, k in self.vertices]

    def index_of(self, vid):
        return self._id_index[vid]

    @property
    def _id_index(self):
        cache = self.__dict__.get("_idx")
        if cache is None:
            cache = {v: i for i, (v, _) in enumerate(self.vertices)}
            object.__setattr__(self, "_idx", cache)
        return cache

    def edge_lookup(self):
        """Map ``(i, j)`` with ``i < j`` to the edge row index."""
        return {(int(a), int(b)): i for i, (a, b) in enumerate(self.edges)}

    def adjacency(self):
        """Symmetric 0/1 adjacency matrix of the 1-skeleton (CSR)."""
        n = self.n_vertices
        if self.n_edges == 0:
            return sp.csr_matrix((n, n))
        r = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        c = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        return sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))

    def same_as(self, other):
        return (
            self.vertices == other.vertices
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.triangles, other.triangles)
        )

    def to_dict(self):
        return {
            "vertices": [{"id": v, "kind": k.value} for v, k in self.vertices],
            "edges": self.edges.tolist(),
            "triangles": self.triangles.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            verts = [(v["id"], v["kind"]) for v in data["vertices"]]
            return cls.from_simplices(verts, data.get("edges", []), data.get("triangles", []))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed complex document: {exc}") from exc


def _incidence_b1(n, edges):
    m = len(edges)
    if m == 0:
        return sp.csr_matrix((n, 0), dtype=np.int64)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([np.arange(m), np.arange(m)])
    vals = np.concatenate([-np.ones(m, dtype=np.int64), np.ones(m, dtype=np.int64)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, m), dtype=np.int64)


def _incidence_b2(edges, triangles, edge_index):
    m, t = len(edges), len(triangles)
    if t == 0:
        return sp.csr_matrix((m, 0), dtype=np.int64)
    rows, cols, vals = [], [], []
    for col, (a, b, c) in enumerate(triangles):
        # boundary of [a,b,c] = [b,c] - [a,c] + [a,b]
        for pair, sign in (((a, b), 1), ((b, c), 1), ((a, c), -1)):
            rows.append(edge_index[(int(pair[0]), int(pair[1]))])
            cols.append(col)
            vals.append(sign)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, t), dtype=np.int64)
