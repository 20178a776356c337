import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import A, filled_triangle, hollow_triangle, make_complex, path, random_complex
from gvf import dec
from gvf.dec import Cochain
from gvf.errors import ValidationError


def test_grad_of_constant_vanishes(rng):
    K = random_complex(rng, 10, 0.4)
    assert dec.grad(K, Cochain(0, np.full(10, 2.5))).norm() == 0.0


def test_grad_on_path():
    K = path(3)
    np.testing.assert_array_equal(dec.grad(K, Cochain(0, [0.0, 1.0, 3.0])).values.ravel(), [1.0, 2.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_operators_match_dense_products(seed, m):
    rng = np.random.default_rng(seed)
    K = random_complex(rng, int(rng.integers(3, 12)), 0.5)
    B1, B2 = K.b1.toarray().astype(float), K.b2.toarray().astype(float)
    r = Cochain(0, rng.standard_normal((K.n_vertices, m)))
    F = Cochain(1, rng.standard_normal((K.n_edges, m)))
    np.testing.assert_allclose(dec.grad(K, r).values, B1.T @ r.values, atol=1e-12)
    np.testing.assert_allclose(dec.div(K, F).values, B1 @ F.values, atol=1e-12)
    np.testing.assert_allclose(dec.curl(K, F).values, B2.T @ F.values, atol=1e-12)
    # adjointness and curl of a gradient
    assert dec.inner(dec.grad(K, r), F) == pytest.approx(dec.inner(r, dec.div(K, F)), rel=1e-12, abs=1e-12)
    assert np.abs(dec.curl(K, dec.grad(K, r)).values).max(initial=0.0) <= 1e-12
    # Delta_0 r = div grad r
    L0 = dec.hodge_laplacian(K, 0)
    np.testing.assert_allclose(dec.div(K, dec.grad(K, r)).values, L0 @ r.values, atol=1e-10)


def test_circulation_is_divergence_free():
    K = filled_triangle()
    # edges (0,1), (0,2), (1,2); loop 0->1->2->0 has signs (+, -, +)
    F = Cochain(1, [1.0, -1.0, 1.0])
    assert dec.div(K, F).norm() == 0.0
    assert abs(dec.curl(K, F).values[0, 0]) == 3.0


def test_single_edge_divergence_sign():
    K = path(2)
    np.testing.assert_array_equal(dec.div(K, Cochain(1, [1.0])).values.ravel(), [-1.0, 1.0])
    np.testing.assert_array_equal(K.b1.toarray()[:, 0], [-1, 1])


def test_curl_without_triangles_has_no_rows():
    K = hollow_triangle()
    assert dec.curl(K, Cochain(1, np.ones((3, 2)))).values.shape == (0, 2)


def test_laplacians():
    K = path(4)
    L0 = dec.hodge_laplacian(K, 0).toarray()
    A_ = np.diag(np.ones(3), 1) + np.diag(np.ones(3), -1)
    np.testing.assert_array_equal(L0, np.diag(A_.sum(1)) - A_)
    assert dec.kernel_dim(dec.hodge_laplacian(hollow_triangle(), 1)) == 1
    assert dec.kernel_dim(dec.hodge_laplacian(filled_triangle(), 1)) == 0
    np.testing.assert_array_equal(dec.hodge_laplacian(filled_triangle(), 2).toarray(), [[3]])
    with pytest.raises(ValidationError):
        dec.hodge_laplacian(K, 3)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_laplacians_symmetric_psd(seed):
    K = random_complex(np.random.default_rng(seed), 9, 0.6)
    for k in range(3):
        L = dec.hodge_laplacian(K, k)
        assert (L != L.T).nnz == 0
        ev = dec.spectrum(L)
        assert ev.size == 0 or ev.min() >= -1e-10 * max(ev.max(), 1.0)


def test_inner_product_properties(rng):
    a = Cochain(1, rng.standard_normal((5, 2)))
    assert dec.inner(a, a) > 0
    assert dec.inner(Cochain(1, np.zeros((5, 2))), Cochain(1, np.zeros((5, 2)))) == 0.0
    basis = np.eye(4)
    gram = [[dec.inner(Cochain(0, basis[i]), Cochain(0, basis[j])) for j in range(4)] for i in range(4)]
    np.testing.assert_array_equal(gram, np.eye(4))
    with pytest.raises(ValidationError):
        dec.inner(a, Cochain(1, np.zeros((5, 1))))


def test_shape_checks():
    K = path(3)
    with pytest.raises(ValidationError):
        dec.grad(K, Cochain(0, np.zeros(4)))
    with pytest.raises(ValidationError):
        dec.div(K, Cochain(0, np.zeros(3)))
    with pytest.raises(ValidationError):
        Cochain(1, [np.nan])


def test_cochain_round_trip(rng):
    c = Cochain(2, rng.standard_normal((4, 3)))
    back = Cochain.from_dict(c.to_dict())
    np.testing.assert_array_equal(back.values, c.values)


def test_curl_norm_bounds():
    # one triangle: ||B2|| = sqrt(3) > sqrt(d_max) = 1, the sqrt(3 d_max) bound holds
    d = dec.curl_norm_diagnostics(filled_triangle())
    assert d["norm"] == pytest.approx(np.sqrt(3))
    assert d["norm"] <= d["bound"] + 1e-12
    assert not d["tight_bound_holds"]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_curl_norm_bound_random(seed):
    K = random_complex(np.random.default_rng(seed), 10, 0.7)
    d = dec.curl_norm_diagnostics(K)
    assert d["norm"] <= d["bound"] * (1 + 1e-12)


def test_isolated_vertices_allowed():
    K = make_complex([A, A, A], [(0, 1)])
    assert dec.div(K, Cochain(1, [2.0])).values.ravel().tolist() == [-2.0, 2.0, 0.0]
