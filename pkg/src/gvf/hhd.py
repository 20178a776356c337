"""Helmholtz-Hodge decomposition of edge flows via deflated CG."""

import logging
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import dec
from .complex.topology import components
from .dec import Cochain
from .errors import ConvergenceError, NumericalError, ValidationError

log = logging.getLogger(__name__)

# Dense null-space extraction for ker(Delta_2) is used up to this many triangles.
DENSE_KERNEL_LIMIT = 2000
INVARIANT_RTOL = 1e-8


def _checking():
    return os.environ.get("GVF_CHECK", "") not in ("", "0")


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int | None = None  # None -> 10 * problem size

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError("solver tol must be > 0")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValidationError("solver max_iter must be >= 1")


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


def _project(Z, v):
    if Z is None or Z.shape[1] == 0:
        return v
    return v - Z @ (Z.T @ v)


def cg_solve(A, b, basis=None, cfg=SolverConfig()):
    """Jacobi-preconditioned CG restricted to the complement of ``basis``.

    ``basis`` holds orthonormal kernel vectors of the symmetric PSD matrix
    ``A`` as columns. The right-hand side is projected onto their orthogonal
    complement, the preconditioned residual is re-projected every step, and
    the returned ``x`` is orthogonal to the basis. Convergence is judged on
    the true residual ``||A x - b_proj|| <= tol * ||b_proj||``.
    """
    A = A.tocsr().astype(float)
    n = A.shape[0]
    b = np.asarray(b, dtype=float)
    if b.shape != (n,):
        raise ValidationError(f"right-hand side has shape {b.shape}, expected ({n},)")
    Z = None if basis is None or np.size(basis) == 0 else np.asarray(basis, dtype=float).reshape(n, -1)
    max_iter = cfg.max_iter if cfg.max_iter is not None else max(10 * n, 1)

    b = _project(Z, b)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0.0:
        return CGResult(x, 0, 0.0)
    target = cfg.tol * bnorm

    diag = A.diagonal()
    minv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)

    r = b.copy()
    z = _project(Z, minv * r)
    p = z.copy()
    rz = r @ z
    it = 0
    while it < max_iter:
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            # search direction fell into the kernel; restart from the true residual
            r = b - A @ x
            z = _project(Z, minv * r)
            p, rz = z.copy(), r @ z
            if np.linalg.norm(r) <= target:
                break
            it += 1
            continue
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if np.linalg.norm(r) <= target:
            r = b - A @ x
            if np.linalg.norm(r) <= target:
                break
            z = _project(Z, minv * r)
            p, rz = z.copy(), r @ z
            continue
        z = _project(Z, minv * r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new

    x = _project(Z, x)
    res = float(np.linalg.norm(A @ x - b) / bnorm)
    if res > cfg.tol:
        raise ConvergenceError("conjugate gradient did not converge", res, it)
    return CGResult(x, it, res)


def vertex_kernel_basis(K):
    """Orthonormal indicator vectors of the connected components."""
    labels = components(K)
    n_comp = int(labels.max()) + 1 if labels.size else 0
    Z = np.zeros((K.n_vertices, n_comp))
    for c in range(n_comp):
        mask = labels == c
        Z[mask, c] = 1.0 / np.sqrt(mask.sum())
    return Z


def face_kernel_basis(K):
    """Orthonormal basis of ker(B2); assumed trivial above DENSE_KERNEL_LIMIT."""
    t = K.n_triangles
    if t == 0 or t > DENSE_KERNEL_LIMIT:
        return np.zeros((t, 0))
    return scipy.linalg.null_space(K.b2.toarray().astype(float))


@dataclass(frozen=True, eq=False)
class HodgeDecomposition:
    potential: Cochain
    stream: Cochain
    gradient: Cochain
    curl: Cochain
    harmonic: Cochain
    diagnostics: dict = field(default_factory=dict)

    @property
    def parts(self):
        return {"gradient": self.gradient, "curl": self.curl, "harmonic": self.harmonic}

    def total(self):
        return self.gradient.values + self.curl.values + self.harmonic.values

    def energy_fractions(self):
        """``||part||^2 / ||F||^2`` per component; all zero for a zero flow."""
        energies = {k: float(np.sum(v.values**2)) for k, v in self.parts.items()}
        total = float(np.sum(self.total() ** 2))
        if total == 0.0:
            return {k: 0.0 for k in energies}
        return {k: e / total for k, e in energies.items()}

    def to_report(self, include_values=True):
        report = {
            "energy_fractions": self.energy_fractions(),
            "flow_norm": float(np.linalg.norm(self.total())),
            "diagnostics": self.diagnostics,
        }
        if include_values:
            report["components"] = {k: v.to_dict() for k, v in self.parts.items()}
            report["potential"] = self.potential.to_dict()
            report["stream"] = self.stream.to_dict()
        return report


def decompose(K, F, cfg=SolverConfig()):
    """Orthogonal split ``F = grad(phi) + B2 psi + h`` channel by channel.

    ``phi`` solves ``Delta_0 phi = div F`` and ``psi`` solves
    ``Delta_2 psi = curl F``, both with deflated CG; ``h`` is the residual.
    """
    dec._check_rows(K, F, 1)
    m = F.channels
    L0 = dec.hodge_laplacian(K, 0)
    L2 = dec.hodge_laplacian(K, 2)
    Z0 = vertex_kernel_basis(K)
    Z2 = face_kernel_basis(K)
    rhs0 = dec.div(K, F).values
    rhs2 = dec.curl(K, F).values

    phi = np.zeros((K.n_vertices, m))
    psi = np.zeros((K.n_triangles, m))
    diag = {"potential": [], "stream": [], "face_kernel_dim": int(Z2.shape[1])}
    for c in range(m):
        if K.n_vertices:
            res = cg_solve(L0, rhs0[:, c], Z0, cfg)
            phi[:, c] = res.x
            diag["potential"].append({"iterations": res.iterations, "residual": res.residual})
        if K.n_triangles:
            res = cg_solve(L2, rhs2[:, c], Z2, cfg)
            psi[:, c] = res.x
            diag["stream"].append({"iterations": res.iterations, "residual": res.residual})

    potential = Cochain(0, phi)
    stream = Cochain(2, psi)
    g = dec.grad(K, potential).values if K.n_vertices else np.zeros((K.n_edges, m))
    cpart = dec.curl_adjoint(K, stream).values
    h = F.values - g - cpart
    out = HodgeDecomposition(potential, stream, Cochain(1, g), Cochain(1, cpart), Cochain(1, h), diag)
    if _checking():
        check_invariants(K, F, out)
    return out


def check_invariants(K, F, d, rtol=INVARIANT_RTOL):
    """Raise :class:`NumericalError` if reconstruction, orthogonality or harmonicity fail."""
    fn = F.norm()
    scale = fn if fn > 0 else 1.0
    errors = {}
    errors["reconstruction"] = np.linalg.norm(d.total() - F.values) / scale
    parts = list(d.parts.values())
    for i in range(3):
        for j in range(i + 1, 3):
            errors[f"inner_{i}{j}"] = abs(dec.inner(parts[i], parts[j])) / scale**2
    errors["div_h"] = dec.div(K, d.harmonic).norm() / scale if K.n_vertices else 0.0
    errors["curl_h"] = dec.curl(K, d.harmonic).norm() / scale
    L1 = dec.hodge_laplacian(K, 1).astype(float)
    errors["laplacian_h"] = np.linalg.norm(L1 @ d.harmonic.values) / scale if K.n_edges else 0.0
    bad = {k: v for k, v in errors.items() if v > rtol}
    if fn > 0 and bad:
        raise NumericalError(f"decomposition invariants violated: {bad}")
    return errors
