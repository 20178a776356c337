"""Per-window node and edge feature extraction."""

from collections import defaultdict

import numpy as np

from .simplicial import NodeKind

EDGE_FEATURES = ("proximity", "dwell", "link")


def node_features(events, K, t0, window, channels):
    """Window mean of each listed physio channel per agent.

    ``channels`` is the flat, ordered list of input channels. Rows follow
    the vertex order of ``K``; non-agent rows and channels with no samples
    in the window are zero.
    """
    col = {c: i for i, c in enumerate(channels)}
    sums = defaultdict(float)
    counts = defaultdict(int)
    t1 = t0 + window
    for r in events.physio:
        if t0 <= r.t < t1 and r.channel in col:
            sums[(r.agent, r.channel)] += r.value
            counts[(r.agent, r.channel)] += 1
    X = np.zeros((K.n_vertices, len(channels)))
    for (agent, ch), total in sums.items():
        try:
            i = K.index_of(agent)
        except KeyError:
            continue
        X[i, col[ch]] = total / counts[(agent, ch)]
    return X


def edge_features(events, K, t0, window):
    """Symmetric per-edge features in canonical edge order.

    Columns: median RSSI mapped to ``(rssi + 100) / 50`` (0 when no
    proximity record), total dwell in tens of minutes, static-link flag.
    """
    t1 = t0 + window
    lookup = K.edge_lookup()
    E = np.zeros((K.n_edges, len(EDGE_FEATURES)))
    idx = K._id_index

    rssi = defaultdict(list)
    for r in events.proximity:
        if t0 <= r.t < t1 and r.agent_i in idx and r.agent_j in idx:
            rssi[tuple(sorted((idx[r.agent_i], idx[r.agent_j])))].append(r.rssi)
    for pair, vals in rssi.items():
        if pair in lookup:
            E[lookup[pair], 0] = (np.median(vals) + 100.0) / 50.0

    for r in events.dwell:
        if t0 <= r.t < t1 and r.agent in idx and r.sensor in idx:
            pair = tuple(sorted((idx[r.agent], idx[r.sensor])))
            if pair in lookup:
                E[lookup[pair], 1] += r.duration / 10.0

    for r in events.links:
        if r.agent in idx and r.external in idx:
            pair = tuple(sorted((idx[r.agent], idx[r.external])))
            if pair in lookup:
                E[lookup[pair], 2] = 1.0
    return E


def agent_mask(K):
    return np.array([k == NodeKind.AGENT for k in K.kinds], dtype=bool)
