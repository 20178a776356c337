"""Modality experts, softmax gating and the antisymmetric flow constructor."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..dec import Cochain
from ..errors import ValidationError
from .bundle import BundleConfig
from .whitening import WhiteningTransform

FORMAT_VERSION = 1


def mixing_operator(K):
    """Symmetrically normalized closed-neighbourhood mean ``D^-1/2 (A + I) D^-1/2``.

    Its eigenvalues lie in (-1, 1], so mixing never increases a norm.
    """
    n = K.n_vertices
    A = K.adjacency() + sp.identity(n, format="csr")
    d = np.asarray(A.sum(axis=1)).ravel()
    s = sp.diags(1.0 / np.sqrt(d)) if n else sp.csr_matrix((0, 0))
    return sp.csr_matrix(s @ A @ s)


def spectral_normalize(W, n_iter=30, tol=1e-13, max_iter=2000):
    """Divide ``W`` by ``max(1, sigma)`` with sigma from power iteration.

    At least ``n_iter`` steps run; iteration continues until the estimate
    stabilizes to ``tol`` (relative) or ``max_iter`` is reached.
    """
    W = np.asarray(W, dtype=float)
    if not np.any(W):
        return W.copy()
    if not np.all(np.isfinite(W)):
        raise ValidationError("cannot normalize a layer with non-finite weights")
    # iterate on a rescaled copy so W.T @ W cannot overflow
    scale = float(np.abs(W).max())
    Ws = W / scale
    v = np.random.default_rng(0).standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for k in range(max_iter):
        u = Ws @ v
        w = Ws.T @ u
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
        new = np.sqrt(nw)
        if k + 1 >= n_iter and abs(new - sigma) <= tol * new:
            sigma = new
            break
        sigma = new
    sigma = scale * max(sigma, float(np.linalg.norm(Ws @ v)))
    return W / max(1.0, sigma)


def _glorot(rng, fan_in, fan_out, shape=None):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))


@dataclass
class GvfModel:
    """All learned tensors in one flat ``{name: ndarray}`` mapping.

    Parameter names:
      ``expert{n}.W1 (d_n,H) .b1 (H) .W2 (H,m) .b2 (m)``
      ``gate.W1 (D,Hg) .b1 .W2 (Hg,N) .b2``
      ``flow.W1 (2m+p,Hf) .b1 .W2 (Hf,m) .S (2m+p,m)``
      ``readout.W (C,m) .b (C)`` and ``axis{n} (m_n)``.
    With ``confine`` set, expert output weights are masked to their fiber.
    """

    bundle: BundleConfig
    whitening: WhiteningTransform
    params: dict
    edge_dim: int
    n_classes: int
    confine: bool = True
    spectral_norm: bool = True
    hidden: dict = field(default_factory=dict)

    @classmethod
    def init(cls, bundle, edge_dim, n_classes=2, hidden=32, gate_hidden=16, flow_hidden=32,
             seed=0, whitening=None, confine=True, spectral_norm=True):
        rng = np.random.default_rng(seed)
        m, D, N = bundle.m, bundle.input_dim, bundle.n_modalities
        p = {}
        for n, (mod, fs) in enumerate(zip(bundle.modalities, bundle.fiber_slices)):
            d_n = len(mod.channels)
            p[f"expert{n}.W1"] = _glorot(rng, d_n, hidden)
            p[f"expert{n}.b1"] = np.zeros(hidden)
            W2 = np.zeros((hidden, m))
            W2[:, fs] = _glorot(rng, hidden, mod.fiber_dim)
            if not confine:
                off = np.ones(m, bool)
                off[fs] = False
                W2[:, off] = 0.01 * _glorot(rng, hidden, int(off.sum()))
            p[f"expert{n}.W2"] = W2
            p[f"expert{n}.b2"] = np.zeros(m)
        p["gate.W1"] = _glorot(rng, D, gate_hidden)
        p["gate.b1"] = np.zeros(gate_hidden)
        p["gate.W2"] = _glorot(rng, gate_hidden, N)
        p["gate.b2"] = np.zeros(N)
        fin = 2 * m + edge_dim
        p["flow.W1"] = _glorot(rng, fin, flow_hidden)
        p["flow.b1"] = 0.1 * rng.standard_normal(flow_hidden)
        p["flow.W2"] = _glorot(rng, flow_hidden, m)
        p["flow.S"] = _glorot(rng, fin, m)
        p["readout.W"] = _glorot(rng, m, n_classes).T.copy()
        p["readout.b"] = np.zeros(n_classes)
        for n, mod in enumerate(bundle.modalities):
            p[f"axis{n}"] = np.full(mod.fiber_dim, 1.0 / np.sqrt(mod.fiber_dim))
        model = cls(
            bundle,
            whitening if whitening is not None else WhiteningTransform.identity(bundle),
            p,
            edge_dim,
            n_classes,
            confine,
            spectral_norm,
            {"expert": hidden, "gate": gate_hidden, "flow": flow_hidden},
        )
        model.project()
        return model

    def copy(self):
        return GvfModel(self.bundle, self.whitening, {k: v.copy() for k, v in self.params.items()},
                        self.edge_dim, self.n_classes, self.confine, self.spectral_norm, dict(self.hidden))

    def project(self):
        """Restore structural constraints after a parameter update.

        Masks off-fiber expert outputs (when confined), spectrally
        normalizes expert layers (when enabled) and rescales risk axes to
        unit length.
        """
        for n in range(self.bundle.n_modalities):
            if self.confine:
                mask = self.bundle.fiber_mask(n)
                self.params[f"expert{n}.W2"] *= mask
                self.params[f"expert{n}.b2"] *= mask
            if self.spectral_norm:
                for name in ("W1", "W2"):
                    key = f"expert{n}.{name}"
                    self.params[key] = spectral_normalize(self.params[key])
            u = self.params[f"axis{n}"]
            nu = np.linalg.norm(u)
            if nu > 0:
                self.params[f"axis{n}"] = u / nu

    def axes(self):
        return [self.params[f"axis{n}"] for n in range(self.bundle.n_modalities)]

    # forward pieces ---------------------------------------------------

    def expert_output(self, n, Xw, M):
        """Expert ``n`` on whitened inputs; returns (output (V,m), hidden cache)."""
        p = self.params
        xn = Xw[:, self.bundle.input_slices[n]]
        z1 = np.tanh(xn @ p[f"expert{n}.W1"] + p[f"expert{n}.b1"])
        y1 = M @ z1
        W2, b2 = p[f"expert{n}.W2"], p[f"expert{n}.b2"]
        if self.confine:
            mask = self.bundle.fiber_mask(n)
            W2, b2 = W2 * mask, b2 * mask
        return y1 @ W2 + b2, (xn, z1, y1)

    def gates(self, Xw):
        p = self.params
        h = np.tanh(Xw @ p["gate.W1"] + p["gate.b1"])
        logits = h @ p["gate.W2"] + p["gate.b2"]
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True), h

    def flow_mlp(self, z):
        p = self.params
        t = np.tanh(z @ p["flow.W1"] + p["flow.b1"])
        return t @ p["flow.W2"] + z @ p["flow.S"], t

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "bundle": self.bundle.to_dict(),
            "whitening": self.whitening.to_dict(),
            "edge_dim": self.edge_dim,
            "n_classes": self.n_classes,
            "confine": self.confine,
            "spectral_norm": self.spectral_norm,
            "hidden": self.hidden,
            "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()} for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"unsupported checkpoint format {d.get('format_version')!r}")
        params = {k: np.asarray(v["values"], float).reshape(v["shape"]) for k, v in d["params"].items()}
        return cls(BundleConfig.from_dict(d["bundle"]), WhiteningTransform.from_dict(d["whitening"]), params,
                   int(d["edge_dim"]), int(d["n_classes"]), bool(d["confine"]), bool(d["spectral_norm"]),
                   dict(d.get("hidden", {})))


def moe_forward(K, Xw, model, M=None):
    """Node risk section: ``r_i = sum_n g_n(x_i) * expert_n(K, x)_i``.

    ``Xw`` is the whitened node feature matrix. Returns the degree-0
    cochain with ``m`` channels.
    """
    Xw = np.asarray(Xw, dtype=float)
    if Xw.shape != (K.n_vertices, model.bundle.input_dim):
        raise ValidationError(f"node features must have shape {(K.n_vertices, model.bundle.input_dim)}, got {Xw.shape}")
    M = mixing_operator(K) if M is None else M
    g, _ = model.gates(Xw)
    r = np.zeros((K.n_vertices, model.bundle.m))
    for n in range(model.bundle.n_modalities):
        out, _ = model.expert_output(n, Xw, M)
        r += g[:, n : n + 1] * out
    return Cochain(0, r)


def flow_inputs(r, edges, E):
    i, j = edges[:, 0], edges[:, 1]
    fwd = np.hstack([r[i], r[j], E])
    bwd = np.hstack([r[j], r[i], -E])
    return fwd, bwd


def flow_values(model, r, edges, E):
    """Antisymmetrized flow ``0.5 * (MLP(r_i, r_j, e) - MLP(r_j, r_i, -e))`` per edge."""
    r = np.asarray(r, dtype=float)
    E = np.asarray(E, dtype=float).reshape(len(edges), -1)
    if E.shape[1] != model.edge_dim:
        raise ValidationError(f"edge features must have {model.edge_dim} columns, got {E.shape[1]}")
    if r.ndim != 2 or r.shape[1] != model.bundle.m:
        raise ValidationError(f"risk section must have {model.bundle.m} channels")
    if len(edges) == 0:
        return np.zeros((0, model.bundle.m))
    fwd, bwd = flow_inputs(r, np.asarray(edges), E)
    a, _ = model.flow_mlp(fwd)
    b, _ = model.flow_mlp(bwd)
    return 0.5 * (a - b)


def flow_field(K, r, E, model):
    """Risk flow 1-cochain on the canonical edges of ``K``."""
    if len(r) != K.n_vertices:
        raise ValidationError("risk section does not match the complex")
    return Cochain(1, flow_values(model, r.values, K.edges, E))


def set_gradient_flow(model):
    """Configure the flow MLP so that it returns ``r_j - r_i`` and ignores edge features."""
    m = model.bundle.m
    for key in ("flow.W1", "flow.b1", "flow.W2"):
        model.params[key] = np.zeros_like(model.params[key])
    S = np.zeros_like(model.params["flow.S"])
    S[:m] = -np.eye(m)
    S[m : 2 * m] = np.eye(m)
    model.params["flow.S"] = S
    return model


def permute_fiber(model, n, perm):
    """Relabel the coordinates of fiber ``n`` by ``perm``; returns a new model.

    Expert output layers, readout columns, flow input rows and flow output
    columns are permuted together with the risk axis, so the permuted model
    computes the same objective with the risk section's coordinates
    reordered within the fiber.
    """
    fs = model.bundle.fiber_slices[n]
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(fs.stop - fs.start)):
        raise ValidationError("perm must be a permutation of the fiber coordinates")
    m = model.bundle.m
    pi = np.arange(m)
    pi[fs] = fs.start + perm
    out = model.copy()
    p = out.params
    for k in range(model.bundle.n_modalities):
        p[f"expert{k}.W2"] = p[f"expert{k}.W2"][:, pi]
        p[f"expert{k}.b2"] = p[f"expert{k}.b2"][pi]
    p["readout.W"] = p["readout.W"][:, pi]
    p[f"axis{n}"] = p[f"axis{n}"][perm]
    rows = np.concatenate([pi, m + pi, np.arange(2 * m, p["flow.W1"].shape[0])])
    p["flow.W1"] = p["flow.W1"][rows]
    p["flow.S"] = p["flow.S"][rows][:, pi]
    p["flow.W2"] = p["flow.W2"][:, pi]
    return out
