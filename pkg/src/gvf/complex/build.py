"""Windowed two-phase construction of the multimodal complex."""

import dataclasses
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .dtw import within_threshold, znormalize
from .simplicial import NodeKind, SimplicialComplex, canonical_vertex_order

RESAMPLE_LENGTH = 64


@dataclass(frozen=True)
class ThresholdConfig:
    """Adjacency thresholds for one window.

    ``tau_prox`` is an RSSI level in dB (higher means closer) and may be
    negative; the other fields must be strictly positive. ``tau_dwell`` is in
    minutes, ``window`` in seconds.
    """

    tau_prox: float
    tau_sync: float
    tau_dwell: float
    window: float
    sync_channel: str = "hrv"

    def __post_init__(self):
        if not math.isfinite(self.tau_prox):
            raise ValidationError("tau_prox must be finite")
        for name in ("tau_sync", "tau_dwell", "window"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be strictly positive, got {v}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise ValidationError(f"unknown threshold fields {sorted(unknown)}")
        try:
            return cls(**{k: (v if k == "sync_channel" else float(v)) for k, v in d.items()})
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc


def _in_window(t, t0, t1):
    return t0 <= t < t1


def build_complex(events, t0, cfg):
    """Construct the complex for the window ``[t0, t0 + cfg.window)``.

    Phase 1 forms agent-agent edges (median RSSI >= tau_prox, or DTW of the
    z-normalized sync channel <= tau_sync), agent-sensor edges (total dwell
    >= tau_dwell) and static agent-external links. Phase 2 closes every
    triangle whose three edges exist and whose vertices carry at least two
    distinct kinds. A window with no timed records yields the empty complex.
    """
    kinds = events.validate()
    t1 = t0 + cfg.window

    prox = [r for r in events.proximity if _in_window(r.t, t0, t1)]
    phys = [r for r in events.physio if _in_window(r.t, t0, t1)]
    dwell = [r for r in events.dwell if _in_window(r.t, t0, t1)]
    if not (prox or phys or dwell):
        return SimplicialComplex.empty()

    active = set()
    for r in prox:
        active.update((r.agent_i, r.agent_j))
    for r in phys:
        active.add(r.agent)
    for r in dwell:
        active.update((r.agent, r.sensor))
    static = {v for v, k in kinds.items() if k in (NodeKind.SPATIAL_CELL, NodeKind.EXTERNAL)}
    verts = canonical_vertex_order([(v, kinds[v]) for v in active | static])
    index = {v: i for i, (v, _) in enumerate(verts)}

    edges = set()

    rssi = defaultdict(list)
    for r in prox:
        a, b = sorted((index[r.agent_i], index[r.agent_j]))
        rssi[(a, b)].append(r.rssi)
    for pair, vals in rssi.items():
        if np.median(vals) >= cfg.tau_prox:
            edges.add(pair)

    edges |= _sync_edges(phys, index, t0, cfg)

    dwell_total = defaultdict(float)
    for r in dwell:
        dwell_total[(index[r.agent], index[r.sensor])] += r.duration
    for (a, s), total in dwell_total.items():
        if total >= cfg.tau_dwell:
            edges.add(tuple(sorted((a, s))))

    for r in events.links:
        if r.agent in index and r.external in index:
            edges.add(tuple(sorted((index[r.agent], index[r.external]))))

    triangles = close_triangles(len(verts), edges, [k for _, k in verts])
    return SimplicialComplex.from_simplices(verts, edges, triangles)


def close_triangles(n, edges, kinds):
    """Triads with all three edges present and at least two node kinds.

    Only neighbourhoods of existing edges are scanned.
    """
    edges = sorted({(int(a), int(b)) for a, b in edges})
    nbrs = [set() for _ in range(n)]
    for a, b in edges:
        nbrs[a].add(b)
        nbrs[b].add(a)
    tris = []
    for a, b in edges:
        for c in sorted(nbrs[a] & nbrs[b]):
            if c > b and len({kinds[a], kinds[b], kinds[c]}) >= 2:
                tris.append((a, b, c))
    return tris


def resample_series(times, values, t0, window, length=RESAMPLE_LENGTH):
    """Linear interpolation onto ``length`` bin midpoints of the window."""
    order = np.argsort(times, kind="stable")
    ts = np.asarray(times, float)[order]
    vs = np.asarray(values, float)[order]
    grid = t0 + (np.arange(length) + 0.5) * (window / length)
    return np.interp(grid, ts, vs)


def _sync_edges(phys, index, t0, cfg):
    series = defaultdict(lambda: ([], []))
    for r in phys:
        if r.channel == cfg.sync_channel:
            ts, vs = series[index[r.agent]]
            ts.append(r.t)
            vs.append(r.value)
    agents = sorted(series)
    if len(agents) < 2:
        return set()
    sig = np.array([znormalize(resample_series(*series[a], t0, cfg.window)) for a in agents])
    ii, jj = np.triu_indices(len(agents), k=1)
    hit = within_threshold(sig[ii], sig[jj], cfg.tau_sync)
    return {(agents[i], agents[j]) for i, j in zip(ii[hit], jj[hit])}
