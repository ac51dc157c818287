import numpy as np
import pytest
from numpy.testing import assert_allclose

from vcwald.basis import BasisSpec, build_psi
from vcwald.design import (DesignBundle, DesignError, build_instruments, build_np_design,
                           build_sar_design, build_vc_design, distance_power_matrix,
                           selector)
from vcwald.estimator import projector_apply
from vcwald.weights import build_circulant


@pytest.fixture
def small():
    rng = np.random.default_rng(3)
    n = 12
    y = rng.standard_normal(n)
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    z = rng.random(n)
    psi = build_psi(rng.standard_normal(n), z, [BasisSpec("polynomial", 2)])
    Ws = [build_circulant(n, 1), build_circulant(n, 2)]
    return y, X, z, psi, Ws


def test_sar_design_columns(small):
    y, X, z, psi, Ws = small
    b = build_sar_design(y, Ws, X, psi)
    assert b.blocks == (("spatial", 2), ("exogenous", 2), ("varying", 2))
    assert_allclose(b.regressors[:, 0], Ws[0].dense() @ y)
    assert_allclose(b.regressors[:, 1], Ws[1].dense() @ y)
    assert_allclose(b.regressors[:, 2:4], X)
    assert_allclose(b.regressors[:, 4:], psi.values)


def test_sar_design_dimension_mismatch(small):
    y, X, z, psi, Ws = small
    with pytest.raises(DesignError):
        build_sar_design(y[:-1], Ws, X[:-1], None)


def test_np_design_hand_case():
    D = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0.0]])
    y = np.array([1.0, 2.0, 3.0])
    b = build_np_design(y, D, 2.5, 2, np.ones(3), None)
    # inside the cutoff: pairs (0,1) at 1 and (0,2) at 2
    expected_c1 = [1 * 2 + 2 * 3, 1 * 1, 2 * 1]
    expected_c2 = [1 * 2 + 4 * 3, 1 * 1, 4 * 1]
    assert_allclose(b.regressors[:, 0], expected_c1)
    assert_allclose(b.regressors[:, 1], expected_c2)


def test_np_design_and_k2_share_distance_powers():
    rng = np.random.default_rng(4)
    n = 9
    D = rng.random((n, n))
    D = D + D.T
    np.fill_diagonal(D, 0)
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = rng.standard_normal(n)
    b = build_np_design(y, D, 1.0, 2, X, None)
    K = build_instruments("k2", X, None, dstar=D, cutoff=1.0, d_tau=2)
    for l in (1, 2):
        E = distance_power_matrix(D, 1.0, l)
        assert_allclose(b.regressors[:, l - 1], E @ y)
        assert_allclose(K[:, 2 * l:2 * l + 2], E @ X)


def test_vc_design_constant_phi_recovers_sar(small):
    y, X, z, psi, Ws = small
    sar = build_sar_design(y, Ws, X, psi)
    vc = build_vc_design(y, Ws, z, BasisSpec("constant", 1), X, psi)
    assert_allclose(vc.regressors, sar.regressors, rtol=0, atol=1e-14)


def test_vc_design_zero_index_gives_zero_row(small):
    y, X, z, psi, Ws = small
    z = z.copy()
    z[0] = 0.0
    vc = build_vc_design(y, Ws, z, BasisSpec("lambda-polynomial", 2), X, psi)
    assert_allclose(vc.regressors[0, :4], 0.0)


def test_vc_design_entrywise():
    n = 3
    W = np.array([[0, 0.5, 0.5], [1, 0, 0], [0, 1, 0.0]])
    y = np.array([1.0, 2.0, 4.0])
    z = np.array([0.2, 0.5, 0.9])
    spec = BasisSpec("lambda-polynomial", 2)
    b = build_vc_design(y, [W], z, spec, np.ones(n), None)
    for i in range(n):
        wy = W[i] @ y
        t = (2 / np.pi) * np.tanh(z[i])
        assert_allclose(b.regressors[i, :2], [wy * t / 2, wy * t ** 2 / 2])


def test_instrument_column_counts(small):
    y, X, z, psi, Ws = small
    K = build_instruments("k1", X, psi, Ws[:1])
    assert K.shape[1] == 6
    Kmc = build_instruments("k1-mc", X, psi, Ws)
    assert_allclose(Kmc[:, 2:4], Ws[0].dense() @ X)
    assert_allclose(Kmc[:, -2:], psi.values)
    D = np.abs(np.subtract.outer(np.arange(12.0), np.arange(12.0)))
    K2 = build_instruments("k2", X, psi, dstar=D, cutoff=3.0, d_tau=2)
    assert K2.shape[1] == 2 + 2 + 2 * 2


def test_instrument_orderings_span_the_same_space(small):
    y, X, z, psi, Ws = small
    K1 = build_instruments("k1", X, psi, Ws)
    K1mc = build_instruments("k1-mc", X, psi, Ws)
    V = np.random.default_rng(0).standard_normal((12, 3))
    assert_allclose(projector_apply(K1, V), projector_apply(K1mc, V), atol=1e-10)


def test_under_identified_bundle_rejected(small):
    y, X, z, psi, Ws = small
    b = build_sar_design(y, Ws, X, psi)
    with pytest.raises(DesignError, match="under-identified"):
        b.with_instruments(X)


def test_selector_offsets(small):
    y, X, z, psi, Ws = small
    rng = np.random.default_rng(0)
    psi4 = build_psi(rng.standard_normal(12), z, [BasisSpec("polynomial", 4)])
    b = build_sar_design(y, Ws, X, psi4)
    s = selector(b, "varying")
    assert (s.offset, s.width) == (4, 4)
    vc = build_vc_design(y, Ws, z, BasisSpec("lambda-polynomial", 3), X, psi4)
    s = selector(vc, "spatial")
    assert (s.offset, s.width) == (0, 6)
    R = s.matrix()
    mask = R.T @ R
    assert_allclose(mask, np.diag(np.r_[np.ones(6), np.zeros(vc.d - 6)]))
    with pytest.raises(DesignError):
        selector(build_sar_design(y, [], X, psi4), "spatial")


def test_selector_component(small):
    y, X, z, psi, Ws = small
    psi2 = build_psi(np.ones((12, 2)), z, [BasisSpec("polynomial", 2), BasisSpec("polynomial", 3)])
    b = build_sar_design(y, Ws, X, psi2)
    s = selector(b, "varying", component=1)
    assert (s.offset, s.width) == (6, 3)


def test_bundle_block_widths_checked():
    with pytest.raises(DesignError):
        DesignBundle(np.ones((4, 3)), (("exogenous", 2),))
