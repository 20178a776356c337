"""Multi-task objective, manual reverse-mode gradients and SGD training."""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import TrainingDiverged, ValidationError
from .model.network import flow_inputs, mixing_operator

log = logging.getLogger(__name__)

LAMBDA1_GRID = (0.01, 0.1, 0.5)
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.1
    lambda2: float = 0.1
    eps: float = 1e-8
    num_classes: int = 2
    p_drop: float = 0.2
    step: float = 1e-2

    def __post_init__(self):
        # 0 is accepted as the ablation setting alongside the search grid
        if self.lambda1 != 0 and not any(math.isclose(self.lambda1, g) for g in LAMBDA1_GRID):
            raise ValidationError(f"lambda1 must be 0 or one of {LAMBDA1_GRID}, got {self.lambda1}")
        if self.lambda2 < 0 or self.eps <= 0 or self.step <= 0:
            raise ValidationError("lambda2 >= 0, eps > 0 and step > 0 required")
        if not 0 <= self.p_drop < 1:
            raise ValidationError("p_drop must lie in [0, 1)")
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc


@dataclass(eq=False)
class Window:
    """One observation window: complex, raw node inputs, edge features, labels.

    ``labels`` holds a class per vertex, ``-1`` for unlabeled vertices.
    """

    K: object
    X: np.ndarray
    E: np.ndarray
    labels: np.ndarray
    M: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.M is None:
            self.M = mixing_operator(self.K)
        self.X = np.asarray(self.X, float)
        self.E = np.asarray(self.E, float).reshape(self.K.n_edges, -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def labeled(self):
        return np.flatnonzero(self.labels >= 0)


def modality_dropout(X, bundle, p_drop, rng, rows=None):
    """Zero each (row, modality) input block independently with probability ``p_drop``.

    Rows where every block would be dropped are redrawn. ``rows`` restricts
    dropout to a subset (default: all rows). Returns the new matrix and the
    boolean drop mask of shape (len(X), n_modalities).
    """
    X = np.array(X, dtype=float, copy=True)
    N = bundle.n_modalities
    dropped = np.zeros((len(X), N), dtype=bool)
    if p_drop == 0:
        return X, dropped
    idx = np.arange(len(X)) if rows is None else np.asarray(rows)
    mask = rng.random((len(idx), N)) < p_drop
    if N > 1:
        bad = mask.all(axis=1)
        while bad.any():
            mask[bad] = rng.random((int(bad.sum()), N)) < p_drop
            bad = mask.all(axis=1)
    else:
        mask[:] = False
    dropped[idx] = mask
    for n, s in enumerate(bundle.input_slices):
        X[dropped[:, n], s] = 0.0
    return X, dropped


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(model, window, cfg, X=None):
    """Evaluate the objective; returns ``(loss, parts, cache)``."""
    p = model.params
    bundle = model.bundle
    K = window.K
    X = window.X if X is None else X
    Xw = model.whitening.apply(X)
    M = window.M
    idx = window.labeled
    if idx.size == 0:
        raise ValidationError("batch has no labeled samples")
    if np.any(window.labels[idx] >= model.n_classes):
        raise ValidationError("label outside [0, num_classes)")

    g, gh = model.gates(Xw)
    outs, ecache = [], []
    r = np.zeros((K.n_vertices, bundle.m))
    for n in range(bundle.n_modalities):
        out, c = model.expert_output(n, Xw, M)
        outs.append(out)
        ecache.append(c)
        r += g[:, n : n + 1] * out

    logits = r[idx] @ p["readout.W"].T + p["readout.b"]
    probs = _softmax(logits)
    y = window.labels[idx]
    cls = float(-np.mean(np.log(probs[np.arange(len(idx)), y] + 1e-300)))

    if K.n_edges:
        fwd, bwd = flow_inputs(r, K.edges, window.E)
        a, ta = model.flow_mlp(fwd)
        b, tb = model.flow_mlp(bwd)
        F = 0.5 * (a - b)
    else:
        fwd = bwd = ta = tb = None
        F = np.zeros((0, bundle.m))
    C = K.b2.T @ F if K.n_triangles else np.zeros((0, bundle.m))
    f2 = float(np.sum(F * F))
    c2 = float(np.sum(C * C))
    rho = c2 / (f2 + cfg.eps)
    clipped = rho > 1.0
    geo = -math.log1p(min(rho, 1.0))

    orth = 0.0
    for n, out in enumerate(outs):
        off = 1.0 - bundle.fiber_mask(n)
        orth += float(np.sum((out * off) ** 2))

    loss = cls + cfg.lambda1 * geo + cfg.lambda2 * orth
    parts = {"cls": cls, "geo": geo, "orth": orth, "rho": rho}
    cache = dict(Xw=Xw, g=g, gh=gh, outs=outs, ecache=ecache, r=r, idx=idx, probs=probs, y=y,
                 fwd=fwd, bwd=bwd, ta=ta, tb=tb, F=F, C=C, f2=f2, c2=c2, rho=rho, clipped=clipped)
    return loss, parts, cache


def loss_total(model, window, cfg, X=None):
    loss, parts, _ = forward(model, window, cfg, X)
    return loss, parts


def _mlp_backward(p, z, t, dout, grads):
    grads["flow.W2"] += t.T @ dout
    grads["flow.S"] += z.T @ dout
    da = (dout @ p["flow.W2"].T) * (1.0 - t * t)
    grads["flow.W1"] += z.T @ da
    grads["flow.b1"] += da.sum(axis=0)
    return da @ p["flow.W1"].T + dout @ p["flow.S"].T


def backward(model, window, cfg, X=None):
    """Gradients of the total objective for every parameter.

    Returns ``(loss, parts, grads)``. The clip on the curl ratio acts as a
    stop-gradient: when active the geometric term contributes nothing. The
    risk axes do not enter the objective and receive zero gradient.
    """
    loss, parts, c = forward(model, window, cfg, X)
    p = model.params
    bundle = model.bundle
    K = window.K
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    m = bundle.m

    # classification
    B = len(c["idx"])
    dlog = c["probs"].copy()
    dlog[np.arange(B), c["y"]] -= 1.0
    dlog /= B
    grads["readout.W"] += dlog.T @ c["r"][c["idx"]]
    grads["readout.b"] += dlog.sum(axis=0)
    dr = np.zeros_like(c["r"])
    dr[c["idx"]] += dlog @ p["readout.W"]

    # geometric term through the flow
    if K.n_edges and cfg.lambda1 != 0 and not c["clipped"]:
        F, C = c["F"], c["C"]
        denom = c["f2"] + cfg.eps
        dgeo = -1.0 / (1.0 + c["rho"])
        dF = cfg.lambda1 * dgeo * (2.0 * (K.b2 @ C) / denom - 2.0 * c["c2"] * F / denom**2) if K.n_triangles \
            else cfg.lambda1 * dgeo * (-2.0 * c["c2"] * F / denom**2)
        dfwd = _mlp_backward(p, c["fwd"], c["ta"], 0.5 * dF, grads)
        dbwd = _mlp_backward(p, c["bwd"], c["tb"], -0.5 * dF, grads)
        i, j = K.edges[:, 0], K.edges[:, 1]
        np.add.at(dr, i, dfwd[:, :m] + dbwd[:, m : 2 * m])
        np.add.at(dr, j, dfwd[:, m : 2 * m] + dbwd[:, :m])

    # mixture and experts
    g = c["g"]
    dg = np.zeros_like(g)
    Xw = c["Xw"]
    for n, out in enumerate(c["outs"]):
        dg[:, n] = np.sum(dr * out, axis=1)
        dout = g[:, n : n + 1] * dr
        off = 1.0 - bundle.fiber_mask(n)
        if cfg.lambda2 != 0:
            dout = dout + cfg.lambda2 * 2.0 * out * off
        xn, z1, y1 = c["ecache"][n]
        W2 = p[f"expert{n}.W2"]
        if model.confine:
            mask = bundle.fiber_mask(n)
            W2 = W2 * mask
            grads[f"expert{n}.W2"] += (y1.T @ dout) * mask
            grads[f"expert{n}.b2"] += dout.sum(axis=0) * mask
        else:
            grads[f"expert{n}.W2"] += y1.T @ dout
            grads[f"expert{n}.b2"] += dout.sum(axis=0)
        dz1 = window.M.T @ (dout @ W2.T)
        da1 = dz1 * (1.0 - z1 * z1)
        grads[f"expert{n}.W1"] += xn.T @ da1
        grads[f"expert{n}.b1"] += da1.sum(axis=0)

    # gating softmax
    dlg = g * (dg - np.sum(dg * g, axis=1, keepdims=True))
    gh = c["gh"]
    grads["gate.W2"] += gh.T @ dlg
    grads["gate.b2"] += dlg.sum(axis=0)
    dgh = (dlg @ p["gate.W2"].T) * (1.0 - gh * gh)
    grads["gate.W1"] += Xw.T @ dgh
    grads["gate.b1"] += dgh.sum(axis=0)
    return loss, parts, grads


def gate_entropy(model, X):
    g, _ = model.gates(model.whitening.apply(X))
    return float(np.mean(-np.sum(g * np.log(np.clip(g, 1e-300, None)), axis=1)))


def accuracy(model, windows):
    from .model.network import moe_forward

    hits = total = 0
    for w in windows:
        r = moe_forward(w.K, model.whitening.apply(w.X), model, w.M).values
        idx = w.labeled
        pred = np.argmax(r[idx] @ model.params["readout.W"].T + model.params["readout.b"], axis=1)
        hits += int(np.sum(pred == w.labels[idx]))
        total += len(idx)
    return hits / total if total else float("nan")


HISTORY_COLUMNS = ("epoch", "loss", "cls", "geo", "orth", "rho", "gate_entropy")


def train(model, windows, cfg, epochs=200, seed=0, agent_rows=None, callback=None):
    """Plain SGD, one step per window per epoch, with modality dropout.

    After every update the model's structural projection runs (fiber
    masking, spectral normalization, unit risk axes). Returns the trained
    model (updated in place) and the per-epoch history.
    """
    if not windows:
        raise ValidationError("training set is empty")
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(1, epochs + 1):
        sums = dict.fromkeys(("loss", "cls", "geo", "orth", "rho", "curl_ratio", "gate_entropy"), 0.0)
        for w in windows:
            rows = w.labeled if agent_rows is None else agent_rows(w)
            X, _ = modality_dropout(w.X, model.bundle, cfg.p_drop, rng, rows=rows)
            with np.errstate(over="ignore", invalid="ignore"):
                loss, parts, grads = backward(model, w, cfg, X)
            finite = all(np.all(np.isfinite(gk)) for gk in grads.values())
            if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT or not finite:
                raise TrainingDiverged(f"loss {loss} at epoch {epoch}", history)
            for k, gk in grads.items():
                model.params[k] = model.params[k] - cfg.step * gk
            model.project()
            sums["loss"] += loss
            for k in ("cls", "geo", "orth", "rho"):
                sums[k] += parts[k]
            sums["curl_ratio"] += math.sqrt(parts["rho"])
            sums["gate_entropy"] += gate_entropy(model, w.X[w.labeled])
        row = {"epoch": epoch, **{k: v / len(windows) for k, v in sums.items()}}
        history.append(row)
        if callback is not None:
            callback(row)
    return model, history


def write_history_csv(history, path):
    from .jsonio import _fmt_float

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            vals = [str(row["epoch"])] + [_fmt_float(float(row[k])) for k in HISTORY_COLUMNS[1:]]
            fh.write(",".join(vals) + "\n")
