"""Seeded synthetic cohorts with planted topology, flows and labels."""

import dataclasses
import itertools
from dataclasses import dataclass, field

import numpy as np

from .complex.build import RESAMPLE_LENGTH, ThresholdConfig, resample_series
from .complex.dtw import within_threshold, znormalize
from .complex.events import Dwell, EventStream, Link, Physio, Proximity
from .complex.simplicial import NodeKind, SimplicialComplex, canonical_vertex_order
from .dec import Cochain
from .errors import ValidationError

SCENARIOS = ("gradient_dominant", "curl_dominant", "harmonic_dominant", "mixed")

DEFAULT_THRESHOLDS = ThresholdConfig(tau_prox=-70.0, tau_sync=4.0, tau_dwell=5.0, window=300.0)

# channel -> (modality, baseline, scale)
CHANNELS = {
    "hr": ("phys", 70.0, 8.0),
    "hrv": ("phys", 50.0, 10.0),
    "activity": ("beh", 40.0, 10.0),
    "sleep": ("beh", 7.0, 1.5),
    "pm25": ("env", 25.0, 6.0),
    "noise": ("env", 55.0, 8.0),
}
MODALITIES = ("phys", "beh", "env")
SYNC_CHANNEL = "hrv"
SYNC_SAMPLES = 32
LEVEL_SAMPLES = 8
PROX_SAMPLES = 5
NEAR_RSSI, FAR_RSSI = -55.0, -85.0
DWELL_CHUNK = 2.0  # minutes
NUISANCE = 0.2
# a non-planted pair must sit at least this far above tau_sync
SYNC_MARGIN = 2.0


@dataclass(frozen=True)
class CohortConfig:
    n_agents: int = 24
    n_sensors: int = 4
    n_external: int = 2
    scenario: str = "mixed"
    noise: float = 0.0
    seed: int = 0
    beta1: int = 2
    n_windows: int = 1
    window: float = 300.0
    mean_degree: float = 3.0
    margin: float = 0.5
    flow_channels: int = 1
    emit_sync: bool = True

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}")
        if self.n_agents < 1 or self.n_sensors < 0 or self.n_external < 0:
            raise ValidationError("cohort counts must be non-negative with at least one agent")
        if self.noise < 0 or self.window <= 0 or self.n_windows < 1 or self.flow_channels < 1:
            raise ValidationError("noise >= 0, window > 0, n_windows >= 1, flow_channels >= 1 required")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc


@dataclass
class GroundTruth:
    vertices: list
    edges: list  # (id, id) pairs, canonical
    triangles: list  # (id, id, id)
    beta1: int
    sources: list
    sinks: list
    cycles: list  # each a list of oriented (id, id) edges
    labels: dict
    features: dict  # agent -> planted latent vector per modality
    flow: np.ndarray  # rows follow the canonical edges of the planted complex
    thresholds: dict = field(default_factory=dict)

    def complex(self):
        index = {v: i for i, (v, _) in enumerate(self.vertices)}
        return SimplicialComplex.from_simplices(
            self.vertices,
            [(index[a], index[b]) for a, b in self.edges],
            [tuple(index[x] for x in t) for t in self.triangles],
        )

    def flow_cochain(self):
        return Cochain(1, self.flow)

    def to_dict(self):
        return {
            "vertices": [{"id": v, "kind": NodeKind(k).value} for v, k in self.vertices],
            "edges": [list(e) for e in self.edges],
            "triangles": [list(t) for t in self.triangles],
            "beta1": self.beta1,
            "sources": self.sources,
            "sinks": self.sinks,
            "cycles": [[list(e) for e in c] for c in self.cycles],
            "labels": self.labels,
            "features": self.features,
            "flow": Cochain(1, self.flow).to_dict(),
            "thresholds": self.thresholds,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            [(v["id"], NodeKind(v["kind"])) for v in d["vertices"]],
            [tuple(e) for e in d["edges"]],
            [tuple(t) for t in d["triangles"]],
            int(d["beta1"]),
            list(d["sources"]),
            list(d["sinks"]),
            [[tuple(e) for e in c] for c in d["cycles"]],
            {k: int(v) for k, v in d["labels"].items()},
            {k: list(v) for k, v in d["features"].items()},
            Cochain.from_dict(d["flow"]).values,
            dict(d.get("thresholds", {})),
        )


def _ids(prefix, n):
    width = max(3, len(str(max(n - 1, 0))))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def _plant_structure(cfg, rng, agents, sensors, externals):
    """Planted prox/sync/dwell/link pairs plus scenario annotations."""
    A, S, X = len(agents), len(sensors), len(externals)
    prox, dwell, link = set(), set(), set()
    sync_groups = []
    info = {"sources": [], "sinks": [], "cycles": []}

    def add_prox(i, j):
        prox.add(tuple(sorted((i, j))))

    if cfg.scenario == "gradient_dominant":
        if A < 2:
            raise ValidationError("gradient_dominant needs at least two agents")
        for i in range(1, A):
            add_prox((i - 1) // 3, i)
        if S:
            dwell.update({(0, 0), (1, 0)})
            for k in range(1, S):
                dwell.add((A - 1 - (k % (A - 1)), k))
        link.update((0, x) for x in range(X))
        info["sources"] = [agents[0]]
    elif cfg.scenario == "curl_dominant":
        if A < 2 or S < 1:
            raise ValidationError("curl_dominant needs at least two agents and one sensor")
        for k in range(A // 2):
            a, b = 2 * k, 2 * k + 1
            add_prox(a, b)
            dwell.update({(a, k % S), (b, k % S)})
            if b + 1 < A:
                add_prox(b, b + 1)
        if A % 2:
            add_prox(A - 2, A - 1)
        link.update((x % A, x) for x in range(X))
    elif cfg.scenario == "harmonic_dominant":
        nb = cfg.beta1
        if nb < 0 or A < 3 * nb or S < nb or (nb == 0 and A < 2):
            raise ValidationError(f"harmonic_dominant with beta1={nb} needs {3 * nb} agents and {nb} sensors")
        for r in range(nb):
            p, q, w = 3 * r, 3 * r + 1, 3 * r + 2
            add_prox(p, q)
            add_prox(q, w)
            dwell.update({(w, r), (p, r)})
            if r:
                add_prox(3 * (r - 1), p)
            # oriented cycle p -> q -> w -> s_r -> p
            ids = [agents[p], agents[q], agents[w], sensors[r], agents[p]]
            info["cycles"].append(list(zip(ids, ids[1:])))
        core = max(3 * nb, 1)
        for i in range(core, A):
            add_prox(i % core, i)
        for k in range(nb, S):
            dwell.add((A - 1 - (k % A), k))
        link.update((0, x) for x in range(X))
    else:
        p_edge = min(1.0, cfg.mean_degree / max(A - 1, 1))
        for i, j in itertools.combinations(range(A), 2):
            if rng.random() < p_edge:
                add_prox(i, j)
        if S:
            for i in range(A):
                if rng.random() < 0.5:
                    dwell.add((i, int(rng.integers(S))))
        link.update((int(rng.integers(A)), x) for x in range(X))
        if cfg.emit_sync and A >= 4:
            perm = rng.permutation(A)
            for k in range(A // 6):
                sync_groups.append([int(perm[2 * k]), int(perm[2 * k + 1])])
    return prox, dwell, link, sync_groups, info


def _sync_signals(cfg, rng, A, sync_groups, tau_sync):
    """Per-agent wave samples: planted groups share a wave, all other pairs sit far apart in DTW.

    Each wave is a random mixture of three sinusoids with integer cycle
    counts, sampled at ``SYNC_SAMPLES`` bin midpoints of the window.
    """
    u = (np.arange(SYNC_SAMPLES) + 0.5) / SYNC_SAMPLES
    grid = (np.arange(RESAMPLE_LENGTH) + 0.5) / RESAMPLE_LENGTH

    def draw():
        f = rng.integers(1, 8, size=3)
        ph = rng.uniform(0, 2 * np.pi, size=3)
        amp = rng.uniform(0.3, 1.0, size=3)
        return (amp[:, None] * np.sin(2 * np.pi * f[:, None] * u + ph[:, None])).sum(axis=0)

    waves = np.array([draw() for _ in range(A)])
    root = list(range(A))
    for g in sync_groups:
        for a in g[1:]:
            waves[a] = waves[g[0]]
            root[a] = g[0]
    planted = {tuple(sorted((a, b))) for g in sync_groups for a, b in itertools.combinations(g, 2)}
    ii, jj = np.triu_indices(A, k=1)
    keep = np.array([(i, j) not in planted for i, j in zip(ii, jj)], dtype=bool)
    ii, jj = ii[keep], jj[keep]
    for _ in range(100):
        sig = np.array([znormalize(np.interp(grid, u, w)) for w in waves])
        close = within_threshold(sig[ii], sig[jj], tau_sync + SYNC_MARGIN)
        if not close.any():
            return waves
        for b in sorted(set(jj[close].tolist())):
            w = draw()
            for a in range(A):
                if root[a] == root[b]:
                    waves[a] = w
    raise ValidationError("could not separate physiological signals for the requested cohort")


def _latents(cfg, rng, A):
    n_mod = len(MODALITIES)
    z = np.zeros((A, n_mod))
    for i in range(A):
        while True:
            v = rng.standard_normal(n_mod)
            if abs(v.sum()) / np.sqrt(n_mod) >= cfg.margin:
                z[i] = v
                break
    labels = (z.sum(axis=1) > 0).astype(int)
    return z, labels


def _brute_triangles(n, edges, kinds):
    es = set(edges)
    out = []
    # every edge against every later vertex: independent of the builder's neighbour intersection
    for a, b in sorted(es):
        for c in range(b + 1, n):
            if (a, c) in es and (b, c) in es and len({kinds[a], kinds[b], kinds[c]}) >= 2:
                out.append((a, b, c))
    return out


def _planted_flow(cfg, rng, K, info, agents):
    m = cfg.flow_channels
    E = K.n_edges
    idx = {v: i for i, v in enumerate(K.ids)}
    lookup = K.edge_lookup()
    if cfg.scenario == "gradient_dominant":
        # potential = hop distance from the source, so flow leaves the source
        n = K.n_vertices
        dist = np.full(n, np.nan)
        start = idx[info["sources"][0]]
        dist[start] = 0.0
        frontier = [start]
        adj = K.adjacency().tolil().rows
        while frontier:
            nxt = []
            for v in frontier:
                for w in adj[v]:
                    if np.isnan(dist[w]):
                        dist[w] = dist[v] + 1
                        nxt.append(w)
            frontier = nxt
        dist = np.nan_to_num(dist, nan=0.0)
        # sinks are the strict local maxima of the potential
        info["sinks"] = [K.ids[v] for v in range(n)
                         if adj[v] and all(dist[w] < dist[v] for w in adj[v])]
        F = (K.b1.T @ dist)[:, None] * rng.uniform(0.8, 1.2, size=(1, m))
    elif cfg.scenario == "curl_dominant":
        psi = rng.uniform(1.0, 2.0, size=(K.n_triangles, m)) * rng.choice([-1.0, 1.0], size=(K.n_triangles, m))
        pot = rng.standard_normal((K.n_vertices, m))
        F = K.b2 @ psi + 0.2 * (K.b1.T @ pot)
    elif cfg.scenario == "harmonic_dominant":
        F = 0.2 * (K.b1.T @ rng.standard_normal((K.n_vertices, m)))
        for cyc in info["cycles"]:
            amp = rng.uniform(1.0, 2.0, size=m) * rng.choice([-1.0, 1.0], size=m)
            for a, b in cyc:
                i, j = idx[a], idx[b]
                sign = 1.0 if i < j else -1.0
                F[lookup[(min(i, j), max(i, j))]] += sign * amp
    else:
        F = rng.standard_normal((E, m))
    F = np.asarray(F, dtype=float).reshape(E, m)
    if cfg.noise:
        F = F + cfg.noise * 0.1 * rng.standard_normal(F.shape)
    return F


def generate(cfg, thresholds=DEFAULT_THRESHOLDS):
    """Emit an event stream and the ground truth it was planted from.

    Windows are ``[k * window, (k + 1) * window)`` for ``k < n_windows``; the
    planted structure is the same in every window, measurement noise is
    drawn fresh. At ``noise == 0`` building the complex of any window with
    ``thresholds`` reproduces the planted complex exactly.
    """
    if thresholds.window != cfg.window:
        thresholds = thresholds.replace(window=cfg.window)
    rng = np.random.default_rng(cfg.seed)
    agents = _ids("a", cfg.n_agents)
    sensors = _ids("s", cfg.n_sensors)
    externals = _ids("x", cfg.n_external)
    A, S = len(agents), len(sensors)
    prox, dwell, link, sync_groups, info = _plant_structure(cfg, rng, agents, sensors, externals)
    if not cfg.emit_sync:
        sync_groups = []
    waves = (_sync_signals(cfg, rng, A, sync_groups, thresholds.tau_sync) if cfg.emit_sync
             else np.zeros((A, LEVEL_SAMPLES)))
    z, labels = _latents(cfg, rng, A)
    nuisance = rng.standard_normal((A, len(CHANNELS)))

    # decoy records that must stay below threshold
    decoy_prox = set()
    for i in range(A):
        for _ in range(2):
            j = int(rng.integers(A))
            pair = tuple(sorted((i, j)))
            if i != j and pair not in prox:
                decoy_prox.add(pair)
    decoy_dwell = {(int(rng.integers(A)), k) for k in range(S)} - dwell
    dwelled = {k for _, k in dwell | decoy_dwell}
    decoy_dwell |= {(0, k) for k in range(S) if k not in dwelled}

    stream = EventStream()
    stream.nodes.update({a: NodeKind.AGENT for a in agents})
    stream.nodes.update({s: NodeKind.ENV_SENSOR for s in sensors})
    stream.nodes.update({x: NodeKind.EXTERNAL for x in externals})
    sig = cfg.noise
    W = cfg.window
    for w in range(cfg.n_windows):
        t0 = w * W
        for (i, j) in sorted(prox | decoy_prox):
            level = NEAR_RSSI if (i, j) in prox else FAR_RSSI
            for k in range(PROX_SAMPLES):
                t = t0 + (k + 0.5) * W / PROX_SAMPLES
                stream.proximity.append(Proximity(t, agents[i], agents[j], level + sig * 5.0 * rng.standard_normal()))
        for (i, s) in sorted(dwell | decoy_dwell):
            chunks = 3 if (i, s) in dwell else 1
            for k in range(chunks):
                t = t0 + (k + 0.5) * W / 4
                dur = DWELL_CHUNK * max(0.0, 1.0 + 0.2 * sig * rng.standard_normal())
                stream.dwell.append(Dwell(t, agents[i], sensors[s], dur))
        for a in range(A):
            for c, (ch, (mod, base, scale)) in enumerate(CHANNELS.items()):
                if ch == SYNC_CHANNEL and not cfg.emit_sync:
                    n_s = LEVEL_SAMPLES
                else:
                    n_s = SYNC_SAMPLES if ch == SYNC_CHANNEL else LEVEL_SAMPLES
                level = base + scale * (z[a, MODALITIES.index(mod)] + NUISANCE * nuisance[a, c])
                u = (np.arange(n_s) + 0.5) / n_s
                wave = waves[a] if ch == SYNC_CHANNEL else np.zeros(n_s)
                vals = level + 0.3 * scale * wave + sig * 0.3 * scale * rng.standard_normal(n_s)
                for uk, v in zip(u, vals):
                    stream.physio.append(Physio(t0 + uk * W, agents[a], ch, float(v)))
    for stream_list in (stream.proximity, stream.physio, stream.dwell):
        stream_list.sort(key=lambda r: r.t)
    stream.links.extend(Link(agents[i], externals[x]) for i, x in sorted(link))

    # planted complex from the planted pairs, triangles by brute force
    verts = canonical_vertex_order(
        [(a, NodeKind.AGENT) for a in agents]
        + [(s, NodeKind.ENV_SENSOR) for s in sensors]
        + [(x, NodeKind.EXTERNAL) for x in externals]
    )
    index = {v: i for i, (v, _) in enumerate(verts)}
    kinds = [k for _, k in verts]
    edge_ids = set()
    for i, j in prox:
        edge_ids.add((agents[i], agents[j]))
    for g in sync_groups:
        for a, b in itertools.combinations(sorted(g), 2):
            edge_ids.add((agents[a], agents[b]))
    for i, s in dwell:
        edge_ids.add((agents[i], sensors[s]))
    for i, x in link:
        edge_ids.add((agents[i], externals[x]))
    idx_edges = sorted({tuple(sorted((index[a], index[b]))) for a, b in edge_ids})
    tris = _brute_triangles(len(verts), idx_edges, kinds)
    K = SimplicialComplex.from_simplices(verts, idx_edges, tris)
    if cfg.scenario != "harmonic_dominant":
        dense_rank = lambda M: int(np.linalg.matrix_rank(M.toarray())) if min(M.shape) else 0  # noqa: E731
        beta1 = K.n_edges - dense_rank(K.b1) - dense_rank(K.b2)
    else:
        beta1 = cfg.beta1
    flow = _planted_flow(cfg, rng, K, info, agents)
    ids = K.ids
    truth = GroundTruth(
        vertices=list(K.vertices),
        edges=[(ids[a], ids[b]) for a, b in K.edges],
        triangles=[tuple(ids[x] for x in t) for t in K.triangles],
        beta1=int(beta1),
        sources=info["sources"],
        sinks=info["sinks"],
        cycles=info["cycles"],
        labels={a: int(labels[i]) for i, a in enumerate(agents)},
        features={a: z[i].tolist() for i, a in enumerate(agents)},
        flow=flow,
        thresholds=thresholds.to_dict(),
    )
    return stream, truth


def two_cluster_stream(n_per_cluster=5, seed=0):
    """Proximity-only stream with two internally close, mutually far clusters.

    Intra-cluster medians lie in [-60, -50] dB, inter-cluster medians in
    [-95, -85] dB. Returns the stream and the two agent-id clusters.
    """
    rng = np.random.default_rng(seed)
    agents = _ids("a", 2 * n_per_cluster)
    clusters = [agents[:n_per_cluster], agents[n_per_cluster:]]
    stream = EventStream()
    for i, j in itertools.combinations(range(len(agents)), 2):
        same = (i < n_per_cluster) == (j < n_per_cluster)
        lo, hi = (-60.0, -50.0) if same else (-95.0, -85.0)
        for k in range(3):
            stream.proximity.append(Proximity(10.0 * (k + 1), agents[i], agents[j], float(rng.uniform(lo, hi))))
    stream.proximity.sort(key=lambda r: r.t)
    return stream, clusters


def planted_thresholds(truth):
    return ThresholdConfig.from_dict(truth.thresholds)


def training_windows(stream, truth, thresholds, bundle, n_windows=None):
    """Build the complex, node inputs, edge features and labels of every window."""
    from .complex.build import build_complex
    from .complex.features import edge_features, node_features
    from .training import Window

    rng_t = stream.time_range()
    if rng_t is None:
        return []
    W = thresholds.window
    count = n_windows if n_windows is not None else int(np.floor(rng_t[1] / W)) + 1
    out = []
    for k in range(count):
        t0 = k * W
        K = build_complex(stream, t0, thresholds)
        if K.n_vertices == 0:
            continue
        X = node_features(stream, K, t0, W, bundle.channels)
        E = edge_features(stream, K, t0, W)
        labels = np.array([truth.labels.get(v, -1) for v in K.ids], dtype=np.int64)
        out.append(Window(K, X, E, labels))
    return out


def resampled_sync_signal(times, values, t0, window):
    return znormalize(resample_series(times, values, t0, window))
