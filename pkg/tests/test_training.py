import math

import numpy as np
import pytest

from _helpers import filled_triangle, hollow_triangle, small_model, ten_node_window
from gvf.errors import TrainingDiverged, ValidationError
from gvf.model import default_bundle, permute_fiber, set_gradient_flow
from gvf.training import (HISTORY_COLUMNS, LossConfig, Window, backward, forward, loss_total, modality_dropout,
                          train, write_history_csv)

BUNDLE = default_bundle()


def finite_difference(model, window, cfg, key, h=1e-5):
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


def rel_err(a, b):
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / den


@pytest.mark.parametrize("confine", [True, False])
def test_gradients_match_finite_differences(confine):
    w = ten_node_window(1)
    model = small_model(seed=3, confine=confine)
    cfg = LossConfig(lambda1=0.5, lambda2=0.1)
    _, parts, grads = backward(model, w, cfg)
    assert parts["rho"] < 1.0  # the geometric term is active
    for key in model.params:
        assert rel_err(finite_difference(model, w, cfg, key), grads[key]) <= 1e-4, key


def test_zero_weights_give_classification_gradient():
    w = ten_node_window(1)
    model = small_model(seed=1, confine=False)
    _, _, g0 = backward(model, w, LossConfig(lambda1=0.0, lambda2=0.0))
    for key in ("flow.W1", "flow.S", "flow.b1", "axis0"):
        assert not np.any(g0[key])
    _, _, g1 = backward(model, w, LossConfig(lambda1=0.5, lambda2=0.1))
    np.testing.assert_array_equal(g0["readout.W"], g1["readout.W"])


def test_geometric_term_bounds():
    w = ten_node_window(2)
    cfg = LossConfig(lambda1=0.5)
    # exact flow: zero curl ratio and zero penalty
    model = set_gradient_flow(small_model(seed=2))
    _, parts, _ = forward(model, w, cfg)
    assert parts["rho"] == pytest.approx(0.0, abs=1e-28) and parts["geo"] == pytest.approx(0.0, abs=1e-28)
    # adversarial: pure circulation on a filled triangle has rho = 3 > 1
    K = filled_triangle()
    win = Window(K, np.zeros((3, 6)), np.zeros((3, 3)), [0, 1, 0])
    model = small_model(seed=0)
    for key in ("flow.W1", "flow.b1", "flow.W2", "flow.S"):
        model.params[key][:] = 0.0
    model.params["flow.S"][2 * BUNDLE.m] = 1.0  # flow equals the first edge feature
    win.E[:, 0] = [1.0, -1.0, 1.0]
    loss, parts, grads = backward(model, win, cfg)
    assert parts["rho"] > 1.0
    assert parts["geo"] == -math.log(2.0)
    assert not np.any(grads["flow.S"])  # clipped: stop-gradient


def test_geometric_term_always_in_range(rng):
    cfg = LossConfig(lambda1=0.1)
    for seed in range(30):
        w = ten_node_window(seed)
        model = small_model(seed=seed)
        for key in ("flow.W2", "flow.S"):
            model.params[key] *= 10 ** rng.uniform(-3, 3)
        _, parts, _ = forward(model, w, cfg)
        assert -math.log(2.0) <= parts["geo"] <= 0.0


def test_confined_orthogonality_penalty_is_zero():
    w = ten_node_window(4)
    _, parts, _ = forward(small_model(seed=4), w, LossConfig())
    assert parts["orth"] == 0.0
    _, parts, _ = forward(small_model(seed=4, confine=False), w, LossConfig())
    assert parts["orth"] > 0.0


def test_objective_invariant_to_fiber_permutation():
    w = ten_node_window(5)
    cfg = LossConfig(lambda1=0.5, lambda2=0.1)
    for confine in (True, False):
        model = small_model(seed=5, confine=confine)
        base, _ = loss_total(model, w, cfg)
        for n in range(3):
            perm = np.array([1, 0])
            assert abs(loss_total(permute_fiber(model, n, perm), w, cfg)[0] - base) <= 1e-10


def test_no_edges_and_no_triangles():
    K = hollow_triangle()
    w = Window(K, np.ones((3, 6)), np.ones((3, 3)), [0, 1, -1])
    _, parts, grads = backward(small_model(), w, LossConfig())
    assert parts["rho"] == 0.0 and parts["geo"] == 0.0
    assert all(np.all(np.isfinite(g)) for g in grads.values())


def test_loss_config_validation():
    LossConfig(lambda1=0.0)
    LossConfig(lambda1=0.01)
    with pytest.raises(ValidationError):
        LossConfig(lambda1=0.2)
    with pytest.raises(ValidationError):
        LossConfig(p_drop=1.0)
    with pytest.raises(ValidationError):
        LossConfig(lambda2=-1.0)


def test_labels_validated():
    w = ten_node_window(0)
    w.labels[:] = -1
    with pytest.raises(ValidationError):
        forward(small_model(), w, LossConfig())


# --- modality dropout --------------------------------------------------------


def test_dropout_zero_rate_is_identity(rng):
    X = rng.standard_normal((20, 6))
    Y, mask = modality_dropout(X, BUNDLE, 0.0, rng)
    np.testing.assert_array_equal(X, Y)
    assert not mask.any()


def test_dropout_rate_and_blocks(rng):
    from gvf.model import BundleConfig, Modality

    # with four modalities the redraw of all-dropped rows barely moves the rate
    b4 = BundleConfig(tuple(Modality(f"m{k}", 1, (f"c{k}",)) for k in range(4)))
    _, mask = modality_dropout(np.ones((10000, 4)), b4, 0.2, rng)
    expected = 0.2 * (1 - 0.2**3) / (1 - 0.2**4)
    assert abs(mask.mean() - 0.2) <= 0.01
    assert abs(mask.mean() - expected) <= 0.01
    X = rng.standard_normal((50, 6)) + 10
    Y, mask = modality_dropout(X, BUNDLE, 0.5, rng)
    for n, s in enumerate(BUNDLE.input_slices):
        assert np.all(Y[mask[:, n], s] == 0.0)
        np.testing.assert_array_equal(Y[~mask[:, n], s], X[~mask[:, n], s])
    assert not mask.all(axis=1).any()


def test_dropout_is_seeded():
    X = np.ones((30, 6))
    a = modality_dropout(X, BUNDLE, 0.3, np.random.default_rng(7))[1]
    b = modality_dropout(X, BUNDLE, 0.3, np.random.default_rng(7))[1]
    np.testing.assert_array_equal(a, b)


# --- training loop -----------------------------------------------------------


def test_training_is_deterministic_and_reduces_loss(tmp_path):
    windows = [ten_node_window(s) for s in range(3)]
    runs = []
    for _ in range(2):
        model = small_model(seed=0)
        _, hist = train(model, windows, LossConfig(step=0.05), epochs=30, seed=4)
        runs.append(hist)
    assert runs[0] == runs[1]
    assert runs[0][-1]["loss"] < runs[0][0]["loss"]
    write_history_csv(runs[0], tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == ",".join(HISTORY_COLUMNS) and len(lines) == 31


def test_training_divergence_raises():
    w = ten_node_window(0)
    model = small_model(seed=0)
    with pytest.raises(TrainingDiverged) as err:
        train(model, [w], LossConfig(step=1e9), epochs=20)
    assert isinstance(err.value.history, list)


def test_empty_training_set():
    with pytest.raises(ValidationError):
        train(small_model(), [], LossConfig())
