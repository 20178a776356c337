"""Monitoring scores derived from a flow and its decomposition."""

import logging
from dataclasses import dataclass

import numpy as np

from . import dec
from .complex.simplicial import NodeKind
from .errors import NumericalError, ValidationError

log = logging.getLogger(__name__)

INTERVENTIONS = {
    "gradient": "Reduce source",
    "curl": "Break cycle",
    "harmonic": "Restructure network",
    "none": "none",
}
SPECTRUM_REPORT_LIMIT = 128


@dataclass(frozen=True, eq=False)
class ScoreConfig:
    """Unit risk axis and positive weight per modality fiber."""

    axes: tuple
    weights: tuple
    fiber_slices: tuple

    def __post_init__(self):
        axes = tuple(np.asarray(u, dtype=float) for u in self.axes)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "weights", tuple(w.tolist()))
        if not (len(axes) == len(w) == len(self.fiber_slices)):
            raise ValidationError("axes, weights and fibers must have equal length")
        for u, s in zip(axes, self.fiber_slices):
            if u.shape != (s.stop - s.start,):
                raise ValidationError(f"risk axis of length {u.shape[0]} does not match fiber width {s.stop - s.start}")
            if abs(np.linalg.norm(u) - 1.0) > 1e-10:
                raise ValidationError("risk axes must be unit vectors")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValidationError("modality weights must be positive and sum to one")

    @classmethod
    def uniform(cls, bundle, axes=None):
        n = bundle.n_modalities
        if axes is None:
            axes = [np.full(mod.fiber_dim, 1.0 / np.sqrt(mod.fiber_dim)) for mod in bundle.modalities]
        return cls(tuple(axes), tuple([1.0 / n] * n), tuple(bundle.fiber_slices))

    @classmethod
    def single(cls, m):
        return cls((np.full(m, 1.0 / np.sqrt(m)),), (1.0,), (slice(0, m),))


def dps(K, F, cfg):
    """Signed progression score per vertex; positive marks a net source.

    Uses the outflow of each fiber, ``-(B1 F)``, projected on its risk axis.
    """
    dec._check_rows(K, F, 1)
    if cfg.fiber_slices[-1].stop != F.channels:
        raise ValidationError(f"flow has {F.channels} channels, score config expects {cfg.fiber_slices[-1].stop}")
    outflow = -(K.b1 @ F.values) if K.n_edges else np.zeros((K.n_vertices, F.channels))
    score = np.zeros(K.n_vertices)
    for u, w, s in zip(cfg.axes, cfg.weights, cfg.fiber_slices):
        score += w * (outflow[:, s] @ u)
    return score


def cri(K, F):
    """Mean circulation magnitude over the triangles containing each vertex."""
    dec._check_rows(K, F, 1)
    out = np.zeros(K.n_vertices)
    if K.n_triangles == 0:
        return out
    mag = np.linalg.norm(dec.curl(K, F).values, axis=1)
    count = np.zeros(K.n_vertices)
    for col in range(3):
        np.add.at(out, K.triangles[:, col], mag)
        np.add.at(count, K.triangles[:, col], 1)
    return out / np.maximum(count, 1)


def local_energies(K, decomposition):
    """Per-vertex energy of each component, summed over incident edges."""
    out = {}
    for name, part in decomposition.parts.items():
        e = np.sum(part.values**2, axis=1)
        acc = np.zeros(K.n_vertices)
        if K.n_edges:
            np.add.at(acc, K.edges[:, 0], e)
            np.add.at(acc, K.edges[:, 1], e)
        out[name] = acc
    return out


def dominant_components(K, decomposition, rtol=1e-12):
    """Largest local-energy component per vertex, ``"none"`` where all vanish."""
    energies = local_energies(K, decomposition)
    names = list(energies)
    stack = np.vstack([energies[k] for k in names])
    scale = max(float(stack.max()) if stack.size else 0.0, 0.0)
    labels = []
    for v in range(K.n_vertices):
        col = stack[:, v]
        if scale == 0.0 or col.max() <= rtol * scale:
            labels.append("none")
        else:
            labels.append(names[int(np.argmax(col))])
    return labels


def annotate(K, F, decomposition, cfg, agents_only=True):
    """Per-agent DPS, CRI and dominant component with its intervention."""
    d = dps(K, F, cfg)
    c = cri(K, F)
    dom = dominant_components(K, decomposition)
    fractions = decomposition.energy_fractions()
    agents = []
    for i, (vid, kind) in enumerate(K.vertices):
        if agents_only and kind != NodeKind.AGENT:
            continue
        agents.append({
            "id": vid,
            "dps": float(d[i]),
            "cri": float(c[i]),
            "dominant_component": dom[i],
            "intervention": INTERVENTIONS[dom[i]],
        })
    if any(fractions.values()):
        overall = max(fractions, key=fractions.get)
    else:
        overall = "none"
    return {
        "energy_fractions": fractions,
        "dominant_component": overall,
        "intervention": INTERVENTIONS[overall],
        "agents": agents,
    }


@dataclass(frozen=True, eq=False)
class SpectrumSummary:
    spectrum0: np.ndarray
    spectrum1: np.ndarray
    d_spec: float = 0.0
    threshold: float = 0.0
    decision: str = "fine_tune"

    def to_dict(self, limit=SPECTRUM_REPORT_LIMIT):
        out = {"d_spec": self.d_spec, "threshold": self.threshold, "decision": self.decision}
        for name, ev in (("delta0", self.spectrum0), ("delta1", self.spectrum1)):
            if len(ev) > limit:
                log.info("truncating %s spectrum from %d to %d eigenvalues", name, len(ev), limit)
            out[f"{name}_eigenvalues"] = ev[:limit].tolist()
            out[f"{name}_size"] = int(len(ev))
        return out


def laplacian_spectra(K):
    try:
        return dec.spectrum(dec.hodge_laplacian(K, 0)), dec.spectrum(dec.hodge_laplacian(K, 1))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigen-solver failed: {exc}") from exc


def _pad_front(a, n):
    return np.concatenate([np.zeros(n - len(a)), a])


def spectral_distance(spec_a, spec_b):
    """Euclidean distance of front-zero-padded sorted spectra, Delta_0 and Delta_1 concatenated."""
    parts = []
    for a, b in zip(spec_a, spec_b):
        n = max(len(a), len(b))
        parts.append(_pad_front(np.sort(a), n) - _pad_front(np.sort(b), n))
    return float(np.linalg.norm(np.concatenate(parts))) if parts else 0.0


def spectral_shift(K, K_prev, threshold=None):
    """Spectral shift between two windows and the recalibration decision.

    The default threshold is ``0.1 * ||lambda(K_prev)||``.
    """
    if K.n_vertices == 0 or K_prev.n_vertices == 0:
        raise ValidationError("spectral shift needs two nonempty complexes")
    cur = laplacian_spectra(K)
    prev = laplacian_spectra(K_prev)
    d = spectral_distance(cur, prev)
    if threshold is None:
        threshold = 0.1 * float(np.linalg.norm(np.concatenate(prev)))
    if threshold <= 0:
        raise ValidationError("shift threshold must be positive")
    decision = "fine_tune" if d <= threshold else "retrain"
    return SpectrumSummary(cur[0], cur[1], d, float(threshold), decision)
