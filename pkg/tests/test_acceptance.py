"""Acceptance checks, one test per criterion; each prints a PASS/FAIL line."""

import filecmp
import math
import shutil
import time

import numpy as np
import scipy.linalg
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from _helpers import (dense_hodge_oracle, filled_triangle, hollow_triangle, path, random_complex, small_model, star,
                      ten_node_window)
from gvf import dec, jsonio
from gvf.cli import flow_from_dict, flow_to_dict, main
from gvf.complex import betti_numbers, build_complex
from gvf.dec import Cochain
from gvf.hhd import SolverConfig, decompose
from gvf.model import (BundleConfig, GvfModel, Modality, cross_block_residual, default_bundle, flow_field,
                       flow_values, permute_fiber, set_gradient_flow, whiten_fit)
from gvf.monitor import ScoreConfig, annotate, cri, dps
from gvf.synth import DEFAULT_THRESHOLDS, SCENARIOS, CohortConfig, generate, training_windows
from gvf.training import LossConfig, Window, accuracy, backward, forward, loss_total, train

BUNDLE = default_bundle()


def _planted_complexes():
    out = []
    for sc in SCENARIOS:
        for seed in range(3):
            stream, _ = generate(CohortConfig(scenario=sc, seed=seed, noise=0.2))
            out.append(build_complex(stream, 0.0, DEFAULT_THRESHOLDS))
    return out


# 1 ---------------------------------------------------------------------------


def test_hhd_matches_dense_oracle(criterion):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = worst_inv = 0.0
    for _ in range(20):
        K = random_complex(rng, int(rng.integers(6, 11)), 0.5, max_edges=30)
        F = rng.standard_normal((K.n_edges, 3))
        d = decompose(K, Cochain(1, F))
        fn = np.linalg.norm(F)
        for got, want in zip((d.gradient, d.curl, d.harmonic), dense_hodge_oracle(K, F)):
            worst = max(worst, np.abs(got.values - want).max() / fn)
        parts = [d.gradient.values, d.curl.values, d.harmonic.values]
        recon = np.linalg.norm(sum(parts) - F)
        ortho = max(abs(np.sum(a * b)) for a, b in [(parts[0], parts[1]), (parts[0], parts[2]), (parts[1], parts[2])])
        worst_inv = max(worst_inv, recon / fn, ortho / fn**2)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and worst_inv <= 1e-8 and elapsed < 10
    assert criterion(1, ok, f"HHD vs dense oracle: max rel diff {worst:.1e}, invariants {worst_inv:.1e}, "
                            f"{elapsed:.2f}s")


# 2 ---------------------------------------------------------------------------


def test_harmonic_dimension_equals_beta1(criterion):
    mismatches = []
    for beta1 in range(4):
        for seed in range(5):
            stream, truth = generate(CohortConfig(scenario="harmonic_dominant", beta1=beta1, seed=seed))
            K = build_complex(stream, 0.0, DEFAULT_THRESHOLDS)
            ev = np.linalg.eigvalsh(dec.hodge_laplacian(K, 1).toarray())
            kernel = int(np.sum(ev <= 1e-9 * ev.max()))
            b = betti_numbers(K).beta1
            if not kernel == b == beta1 == truth.beta1:
                mismatches.append((beta1, seed, kernel, b))
    assert criterion(2, not mismatches, f"dim ker L1 == beta1 on 20 planted complexes, mismatches {mismatches}")


# 3 ---------------------------------------------------------------------------


def test_exactness_chain(criterion):
    rng = np.random.default_rng(3)
    complexes = _planted_complexes() + [random_complex(rng, 12, 0.5) for _ in range(10)]
    complexes += [filled_triangle(), hollow_triangle(), ten_node_window(0).K]
    nonzero, worst = 0, 0.0
    for K in complexes:
        nonzero += int((K.b1 @ K.b2).count_nonzero()) if K.n_triangles else 0
        r = Cochain(0, rng.standard_normal((K.n_vertices, 3)))
        if K.n_triangles:
            worst = max(worst, np.abs(dec.curl(K, dec.grad(K, r)).values).max())
    ok = nonzero == 0 and worst <= 1e-12
    assert criterion(3, ok, f"B1 B2 nonzeros {nonzero}, max |curl grad r| {worst:.1e} over {len(complexes)} "
                            "complexes")


# 4 ---------------------------------------------------------------------------


def test_cg_iterations_at_scale(criterion):
    rows = []
    ok = True
    for degree in (4.0, 6.0):
        cfg = CohortConfig(n_agents=900, n_sensors=80, n_external=20, emit_sync=False, mean_degree=degree, seed=0)
        _, truth = generate(cfg)
        K = truth.complex()
        start = time.perf_counter()
        d = decompose(K, truth.flow_cochain(), SolverConfig(tol=1e-10))
        elapsed = time.perf_counter() - start
        its = [s["iterations"] for s in d.diagnostics["potential"] + d.diagnostics["stream"]]
        ok &= K.n_vertices == 1000 and max(its) < 50 and elapsed < 5
        rows.append(f"deg {degree:g}: |V|={K.n_vertices} |E|={K.n_edges} |T|={K.n_triangles} "
                    f"iterations {its} {elapsed:.2f}s")
    assert criterion(4, ok, "CG at scale: " + "; ".join(rows))


# 5 ---------------------------------------------------------------------------


def test_flow_field_contracts(criterion):
    rng = np.random.default_rng(5)
    model = small_model(seed=5)
    r = rng.standard_normal((2000, BUNDLE.m))
    edges = rng.integers(0, 2000, size=(10000, 2))
    E = rng.standard_normal((10000, 3))
    fwd = flow_values(model, r, edges, E)
    bwd = flow_values(model, r, edges[:, ::-1], -E)
    anti = np.abs(fwd + bwd).max() / np.abs(fwd).max()

    gmodel = set_gradient_flow(small_model(seed=6))
    K = random_complex(rng, 15, 0.4)
    rc = Cochain(0, rng.standard_normal((K.n_vertices, BUNDLE.m)))
    F = flow_field(K, rc, rng.standard_normal((K.n_edges, 3)), gmodel)
    grad_err = np.abs(F.values - dec.grad(K, rc).values).max()
    _, parts, _ = forward(gmodel, ten_node_window(2), LossConfig(lambda1=0.5))

    hits = 0
    T = filled_triangle()
    for seed in range(20):
        srng = np.random.default_rng(seed)
        rs = Cochain(0, srng.standard_normal((3, BUNDLE.m)))
        Fs = flow_field(T, rs, srng.standard_normal((3, 3)), small_model(seed=seed))
        hits += dec.curl(T, Fs).norm() > 1e-8
    # rho and geo vanish up to roundoff: |curl F| / |F| at the 1e-12 level of the exactness chain
    exact = parts["rho"] <= 1e-24 and abs(parts["geo"]) <= 1e-24
    ok = anti <= 1e-12 and grad_err <= 1e-14 and exact and hits >= 18
    assert criterion(5, ok, f"antisymmetry {anti:.1e} on 1e4 edges, gradient case err {grad_err:.1e} "
                            f"rho {parts['rho']:.1e} geo {parts['geo']:.1e}, non-exact {hits}/20")


# 6 ---------------------------------------------------------------------------


def _finite_difference(model, window, cfg, key, h=1e-5):
    v = model.params[key]
    fd = np.zeros_like(v)
    for ix in np.ndindex(v.shape):
        old = v[ix]
        v[ix] = old + h
        lp, _ = loss_total(model, window, cfg)
        v[ix] = old - h
        lm, _ = loss_total(model, window, cfg)
        v[ix] = old
        fd[ix] = (lp - lm) / (2 * h)
    return fd


def test_loss_bounds_and_gradients(criterion):
    cfg = LossConfig(lambda1=0.5, lambda2=0.1)
    rng = np.random.default_rng(6)
    lo, hi = math.inf, -math.inf
    for seed in range(30):
        model = small_model(seed=seed)
        for key in ("flow.W2", "flow.S"):
            model.params[key] *= 10 ** rng.uniform(-3, 3)
        _, parts, _ = forward(model, ten_node_window(seed), cfg)
        lo, hi = min(lo, parts["geo"]), max(hi, parts["geo"])
    # clipping: a pure circulation on a filled triangle has rho = 3
    model = small_model(seed=0)
    for key in ("flow.W1", "flow.b1", "flow.W2", "flow.S"):
        model.params[key][:] = 0.0
    model.params["flow.S"][2 * BUNDLE.m] = 1.0
    E = np.zeros((3, 3))
    E[:, 0] = [1.0, -1.0, 1.0]
    _, clip, grads = backward(model, Window(filled_triangle(), np.zeros((3, 6)), E, [0, 1, 0]), cfg)
    lo, hi = min(lo, clip["geo"]), max(hi, clip["geo"])
    bounded = -math.log(2.0) <= lo and hi <= 0.0 and clip["rho"] > 1 and clip["geo"] == -math.log(2.0)

    w = ten_node_window(1)
    worst = 0.0
    for confine in (True, False):
        model = small_model(seed=3, confine=confine)
        _, parts, grads = backward(model, w, cfg)
        for key in model.params:
            fd = _finite_difference(model, w, cfg, key)
            den = max(np.linalg.norm(fd), np.linalg.norm(grads[key]), 1e-12)
            worst = max(worst, np.linalg.norm(fd - grads[key]) / den)
    ok = bounded and parts["rho"] < 1 and worst <= 1e-4
    assert criterion(6, ok, f"geo range [{lo:.4f}, {hi:.4f}] (clip rho {clip['rho']:.2f}), "
                            f"finite-difference rel err {worst:.1e}")


# 7 ---------------------------------------------------------------------------


def _off_block(slices, D):
    mask = np.ones((D, D), bool)
    for s in slices:
        mask[s, s] = False
    return mask


def test_identifiability_surface(criterion):
    rng = np.random.default_rng(7)
    w = ten_node_window(3)
    model = small_model(seed=7)
    Xw = model.whitening.apply(w.X)
    leak = 0.0
    for n in range(BUNDLE.n_modalities):
        out, _ = model.expert_output(n, Xw, w.M)
        leak = max(leak, np.abs(out * (1.0 - BUNDLE.fiber_mask(n))).max())

    cfg = LossConfig(lambda1=0.5, lambda2=0.1)
    perm_gap = 0.0
    for confine in (True, False):
        m = small_model(seed=8, confine=confine)
        base, _ = loss_total(m, w, cfg)
        for n in range(BUNDLE.n_modalities):
            perm_gap = max(perm_gap, abs(loss_total(permute_fiber(m, n, [1, 0]), w, cfg)[0] - base))

    z = rng.standard_normal((2000, 2))
    X = np.hstack([z, rng.standard_normal((2000, 2)), z + 1e-3 * rng.standard_normal((2000, 2))])
    C = np.corrcoef(whiten_fit(X, BUNDLE, holdout=0.0).apply(X).T)
    collinear = np.abs(C[_off_block(BUNDLE.input_slices, 6)]).max()

    # inject a cross-block covariance of Frobenius norm delta into exactly white inputs
    win = training_windows(*generate(CohortConfig(n_agents=200, seed=7, emit_sync=False)), DEFAULT_THRESHOLDS,
                           BUNDLE)[0]
    Xc = whiten_fit(win.X, BUNDLE, holdout=0.0).apply(win.X)
    Xc -= Xc.mean(axis=0)
    Q = rng.standard_normal((6, 6))
    Q = (Q + Q.T) * _off_block(BUNDLE.input_slices, 6)
    Q /= np.linalg.norm(Q)
    probe = GvfModel.init(BUNDLE, 3, seed=7)
    base = [probe.expert_output(n, Xc, win.M)[0] for n in range(BUNDLE.n_modalities)]
    slopes, within = [], True
    for delta in (0.01, 0.05, 0.1):
        T = np.real(scipy.linalg.sqrtm(np.eye(6) + delta * Q))
        Xd = Xc @ T
        injected = cross_block_residual(Xd, BUNDLE.input_slices)
        dev = math.sqrt(sum(np.sum((probe.expert_output(n, Xd, win.M)[0] - b) ** 2) for n, b in enumerate(base)))
        # experts are 1-Lipschitz, so the deviation is at most ||Xc (T - I)||_F
        bound = np.linalg.norm(Xc @ (T - np.eye(6)))
        within &= dev <= bound * (1 + 1e-12) and abs(injected - delta) <= 1e-6
        slopes.append(dev / delta)
    linear = max(slopes) <= 2 * min(slopes)
    ok = leak == 0.0 and perm_gap <= 1e-10 and collinear < 1e-6 and within and linear
    assert criterion(7, ok, f"leak {leak:g}, permutation gap {perm_gap:.1e}, collinear corr {collinear:.1e}, "
                            f"delta slopes {[round(s, 3) for s in slopes]}")


# 8 ---------------------------------------------------------------------------


def _train_cohort(seed):
    stream, truth = generate(CohortConfig(n_agents=40, n_windows=3, noise=0.1, seed=seed))
    windows = training_windows(stream, truth, DEFAULT_THRESHOLDS, BUNDLE)
    X = np.vstack([w.X[w.labeled] for w in windows])
    y = np.concatenate([w.labels[w.labeled] for w in windows])
    whitening = whiten_fit(X, BUNDLE)
    model = GvfModel.init(BUNDLE, windows[0].E.shape[1], seed=seed, whitening=whitening)
    start = time.perf_counter()
    model, _ = train(model, windows, LossConfig(step=0.05), epochs=200, seed=seed)
    return model, windows, X, y, time.perf_counter() - start


def test_desk_scale_training(criterion):
    pooled_lower, cells, details = 0, 0, []
    ok = True
    for seed in range(5):
        model, windows, X, y, elapsed = _train_cohort(seed)
        if seed == 0:
            oracle = make_pipeline(StandardScaler(), LogisticRegression(C=100.0)).fit(X, y).score(X, y)
            acc = accuracy(model, windows)
            ok &= oracle >= 0.95 and acc >= 0.9 and elapsed < 60
            details.append(f"oracle {oracle:.3f}, accuracy {acc:.3f} in {elapsed:.1f}s")
        Xw = model.whitening.apply(X)
        intact = model.gates(Xw)[0]
        zeroed = []
        for n, s in enumerate(BUNDLE.input_slices):
            Z = X.copy()
            Z[:, s] = 0.0
            zeroed.append(model.gates(model.whitening.apply(Z))[0][:, n].mean())
            cells += zeroed[-1] < intact[:, n].mean()
        # pooled over modalities: mean weight of a zeroed modality against that of an intact one
        pooled_lower += np.mean(zeroed) < intact.mean(axis=0).mean()
    ok &= pooled_lower == 5
    details.append(f"zeroed gate lower on {pooled_lower}/5 seeds (per modality {cells}/15)")
    assert criterion(8, ok, "training: " + ", ".join(details))


# 9 ---------------------------------------------------------------------------


def _built_decomposition(cfg):
    stream, truth = generate(cfg)
    K = build_complex(stream, 0.0, DEFAULT_THRESHOLDS)
    P = truth.complex()
    F = flow_from_dict(flow_to_dict(P, truth.flow_cochain()), K)
    return K, F, decompose(K, F)


def test_scenario_discrimination(criterion):
    paired = 0
    for seed in range(5):
        curl = _built_decomposition(CohortConfig(scenario="curl_dominant", seed=seed, noise=0.1))[2]
        grad = _built_decomposition(CohortConfig(scenario="gradient_dominant", seed=seed, noise=0.1))[2]
        paired += curl.energy_fractions()["curl"] > grad.energy_fractions()["curl"]
    fracs, labels = [], []
    for seed in range(5):
        K, F, d = _built_decomposition(CohortConfig(scenario="harmonic_dominant", beta1=2, seed=seed, noise=0.1))
        rep = annotate(K, F, d, ScoreConfig.single(F.channels))
        fracs.append(rep["energy_fractions"]["harmonic"])
        labels.append(rep["intervention"])
    ok = paired == 5 and min(fracs) > 0.5 and set(labels) == {"Restructure network"}
    assert criterion(9, ok, f"curl beats gradient {paired}/5, harmonic fractions min {min(fracs):.3f}, "
                            f"annotations {sorted(set(labels))}")


# 10 --------------------------------------------------------------------------


def test_monitoring_scores(criterion):
    rng = np.random.default_rng(10)
    worst_cri = 0.0
    for K in (hollow_triangle(), star(5), path(6)):
        worst_cri = max(worst_cri, np.abs(cri(K, Cochain(1, rng.standard_normal((K.n_edges, 2))))).max())
    for _ in range(10):
        K = random_complex(rng, 12, 0.5)
        F = dec.grad(K, Cochain(0, rng.standard_normal((K.n_vertices, 2))))
        worst_cri = max(worst_cri, np.abs(cri(K, F)).max(initial=0.0))

    score = dps(star(4), Cochain(1, np.ones(4)), ScoreConfig.single(1))
    signs = score[0] > 0 and np.all(score[1:] < 0)

    bundle = BundleConfig((Modality("a", 3, ("x",)), Modality("b", 4, ("y",))))
    worst_rot = 0.0
    for seed in range(20):
        srng = np.random.default_rng(seed)
        axes = [u / np.linalg.norm(u) for u in (srng.standard_normal(3), srng.standard_normal(4))]
        cfg = ScoreConfig(tuple(axes), (0.3, 0.7), tuple(bundle.fiber_slices))
        K = random_complex(srng, 10, 0.5)
        F = srng.standard_normal((K.n_edges, 7))
        G = F.copy()
        for u, s in zip(axes, bundle.fiber_slices):
            Q = np.eye(len(u))
            for _ in range(2):
                v = srng.standard_normal(len(u))
                v -= (v @ u) * u
                v /= np.linalg.norm(v)
                Q = (np.eye(len(u)) - 2 * np.outer(v, v)) @ Q
            G[:, s] = F[:, s] @ Q.T
        worst_rot = max(worst_rot, np.abs(dps(K, Cochain(1, G), cfg) - dps(K, Cochain(1, F), cfg)).max())
    ok = worst_cri <= 1e-12 and signs and worst_rot <= 1e-10
    assert criterion(10, ok, f"CRI on triangle-free/exact {worst_cri:.1e}, star signs {'ok' if signs else 'wrong'}, "
                             f"rotation gap {worst_rot:.1e}")


# 11 --------------------------------------------------------------------------


def _pipeline(root):
    def cfg(name, payload):
        path = root / f"{name}.json"
        jsonio.dump(payload, path)
        return str(path)

    root.mkdir()
    sim, k, prev = root / "sim", root / "k", root / "prev"
    steps = [
        ["simulate", "--out", str(sim), "--config", cfg("sim", {"scenario": "mixed", "n_agents": 20, "n_windows": 2,
                                                                "noise": 0.0}), "--seed", "4"],
        ["build-complex", "--events", str(sim / "events.jsonl"), "--out", str(k)],
        ["build-complex", "--events", str(sim / "events.jsonl"), "--t0", "300", "--out", str(prev)],
        ["sweep-thresholds", "--events", str(sim / "events.jsonl"), "--out", str(root / "sweep"), "--config",
         cfg("grid", {"tau_prox": [-80, -70], "tau_sync": [3.0, 4.0], "tau_dwell": [5.0], "window": 300.0})],
        ["decompose", "--complex", str(k / "complex.json"), "--flow", str(sim / "flow.json"), "--out",
         str(root / "hhd")],
        ["scores", "--complex", str(k / "complex.json"), "--flow", str(sim / "flow.json"), "--out",
         str(root / "scores")],
        ["shift-detect", "--complex", str(k / "complex.json"), "--previous", str(prev / "complex.json"), "--out",
         str(root / "shift")],
        ["train", "--events", str(sim / "events.jsonl"), "--truth", str(sim / "ground_truth.json"), "--out",
         str(root / "train"), "--config", cfg("train", {"epochs": 10, "loss": {"step": 0.05}})],
    ]
    return [main(argv) for argv in steps]


def test_cli_determinism(criterion, tmp_path):
    root = tmp_path / "run"
    snapshot = tmp_path / "first"
    codes = _pipeline(root)
    shutil.copytree(root, snapshot)
    shutil.rmtree(root)
    codes += _pipeline(root)
    differing = []
    for item in sorted(snapshot.rglob("*")):
        if item.is_dir():
            continue
        other = root / item.relative_to(snapshot)
        if item.name == "manifest.json":
            a, b = jsonio.load(item), jsonio.load(other)
            a.pop("wall_clock_seconds"), b.pop("wall_clock_seconds")
            same = a == b
        else:
            same = filecmp.cmp(item, other, shallow=False)
        if not same:
            differing.append(str(item.relative_to(snapshot)))
    n_files = sum(1 for p in snapshot.rglob("*") if p.is_file())
    ok = set(codes) == {0} and not differing
    assert criterion(11, ok, f"CLI reruns: exit codes {sorted(set(codes))}, {n_files} files, differing {differing}")
