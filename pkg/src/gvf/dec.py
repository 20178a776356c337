"""Discrete exterior calculus on a fixed complex.

All operators act channelwise on dense ``(n_simplices, m)`` value arrays;
the Kronecker factor with the identity on channels is never formed.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError

KERNEL_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class Cochain:
    degree: int
    values: np.ndarray

    def __post_init__(self):
        if self.degree not in (0, 1, 2):
            raise ValidationError(f"cochain degree must be 0, 1 or 2, got {self.degree}")
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValidationError(f"cochain values must be (rows, channels), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("cochain has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def channels(self):
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]

    def norm(self):
        return float(np.linalg.norm(self.values))

    def to_dict(self):
        return {"degree": self.degree, "channels": self.channels, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d, K=None):
        try:
            degree, channels = int(d["degree"]), int(d["channels"])
            values = np.asarray(d["values"], dtype=float).reshape(-1, channels)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed cochain document: {exc}") from exc
        c = cls(degree, values)
        if K is not None:
            _check_rows(K, c, degree)
        return c


def n_simplices(K, degree):
    return (K.n_vertices, K.n_edges, K.n_triangles)[degree]


def _check_rows(K, c, degree):
    if c.degree != degree:
        raise ValidationError(f"expected a degree-{degree} cochain, got degree {c.degree}")
    if len(c) != n_simplices(K, degree):
        raise ValidationError(
            f"degree-{degree} cochain has {len(c)} rows but the complex has {n_simplices(K, degree)} simplices"
        )


def grad(K, r):
    """Value on oriented edge (i, j) is r_j - r_i."""
    _check_rows(K, r, 0)
    return Cochain(1, K.b1.T @ r.values)


def div(K, F):
    """``B1 @ F``: head-positive net flux per node."""
    _check_rows(K, F, 1)
    return Cochain(0, K.b1 @ F.values)


def curl(K, F):
    """``B2.T @ F``: oriented circulation on each triangle."""
    _check_rows(K, F, 1)
    return Cochain(2, K.b2.T @ F.values if K.n_triangles else np.zeros((0, F.channels)))


def curl_adjoint(K, psi):
    _check_rows(K, psi, 2)
    if K.n_triangles == 0:
        return Cochain(1, np.zeros((K.n_edges, psi.channels)))
    return Cochain(1, K.b2 @ psi.values)


def hodge_laplacian(K, k):
    """Sparse integer Hodge Laplacian of degree ``k`` (CSR)."""
    b1 = K.b1.astype(np.int64)
    b2 = K.b2.astype(np.int64)
    if k == 0:
        L = b1 @ b1.T
    elif k == 1:
        L = b1.T @ b1 + b2 @ b2.T
    elif k == 2:
        L = b2.T @ b2
    else:
        raise ValidationError(f"Hodge Laplacian degree must be 0, 1 or 2, got {k}")
    return sp.csr_matrix(L)


def inner(a, b):
    """Combinatorial inner product: sum of elementwise products."""
    if a.degree != b.degree or a.values.shape != b.values.shape:
        raise ValidationError(
            f"inner product of incompatible cochains: degree {a.degree} {a.values.shape} vs {b.degree} {b.values.shape}"
        )
    return float(np.sum(a.values * b.values))


def spectrum(L):
    """Ascending eigenvalues of a symmetric sparse matrix (dense solve)."""
    if L.shape[0] == 0:
        return np.zeros(0)
    return np.linalg.eigvalsh(L.toarray().astype(float))


def kernel_dim(L, rtol=KERNEL_RTOL):
    """Eigenvalues at or below ``rtol * lambda_max`` counted as zero."""
    ev = spectrum(L)
    if ev.size == 0:
        return 0
    lam_max = max(ev[-1], 0.0)
    if lam_max == 0.0:
        return int(ev.size)
    return int(np.sum(ev <= rtol * lam_max))


def curl_norm_diagnostics(K):
    """Largest singular value of B2.T against two candidate bounds.

    ``sqrt(3 * d_max)`` always holds (Gershgorin on B2 B2.T); the tighter
    ``sqrt(d_max)`` is reported as measured, not assumed.
    """
    if K.n_triangles == 0:
        return {"norm": 0.0, "d_max": 0, "bound": 0.0, "tight_bound": 0.0, "tight_bound_holds": True}
    d_max = int(np.diff(K.b2.tocsr().indptr).max())
    norm = float(np.linalg.norm(K.b2.toarray().astype(float), 2))
    return {
        "norm": norm,
        "d_max": d_max,
        "bound": float(np.sqrt(3 * d_max)),
        "tight_bound": float(np.sqrt(d_max)),
        "tight_bound_holds": bool(norm <= np.sqrt(d_max) * (1 + 1e-12)),
    }
