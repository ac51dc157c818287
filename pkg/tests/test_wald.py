import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from vcwald.basis import BasisSpec
from vcwald.design import Selector
from vcwald.dgp import DgpConfig, generate
from vcwald.errors import ConfigError, DataError, NumericalError
from vcwald.estimator import TslsFit, factor_instruments, tsls
from vcwald.wald import (TestSpec, block_covariance, dmat_plain, dmat_shac, estimate_curve,
                         fit_model, p_values, run_test, wald_statistic)


def fit_with_t(T, n):
    """A TslsFit carrying a prescribed T, for variance-matrix examples."""
    d = T.shape[0]
    K = np.eye(n, d)
    return TslsFit(np.zeros(d), np.zeros(n), np.asarray(T, float), d,
                   factor_instruments(K), K, 1.0)


@pytest.fixture(scope="module")
def h0_data():
    return generate(DgpConfig(n=200, M=2, error_structure="sar-dependent", seed=5))


def test_dmat_plain_examples():
    D = dmat_plain(fit_with_t(np.eye(3), 4), Selector(0, 2, 3))
    assert_allclose(D, np.eye(2) / 4)
    n = 10
    D = dmat_plain(fit_with_t(np.diag([2.0, 4.0]), n), Selector(0, 2, 2))
    assert_allclose(D, np.diag([1 / (2 * n), 1 / (4 * n)]))


def test_dmat_plain_explicit_inverse_oracle():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 5))
    T = A @ A.T + np.eye(5)
    R = rng.standard_normal((2, 5))
    assert_allclose(dmat_plain(fit_with_t(T, 7), R), R @ np.linalg.inv(T) @ R.T / 7, rtol=1e-10)


def test_dmat_plain_estimated_scales_by_residual_variance():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((40, 2))
    y = M @ [1.0, 2.0] + 3 * rng.standard_normal(40)
    fit = tsls(M, M, y)
    s2 = fit.residuals @ fit.residuals / 40
    assert_allclose(dmat_plain(fit, Selector(0, 2, 2), "estimated"),
                    s2 * dmat_plain(fit, Selector(0, 2, 2)))
    with pytest.raises(ConfigError):
        dmat_plain(fit, Selector(0, 2, 2), "robust")


def test_dmat_shac_collapses_to_plain():
    rng = np.random.default_rng(2)
    n = 50
    M = rng.standard_normal((n, 4))
    fit = tsls(M, M, rng.standard_normal(n))
    sel = Selector(1, 2, 4)
    assert_allclose(dmat_shac(fit, M, M.T @ M / n, sel), dmat_plain(fit, sel), rtol=1e-10)


def test_dmat_shac_overidentified_oracle():
    rng = np.random.default_rng(3)
    n = 40
    K = rng.standard_normal((n, 5))
    M = K[:, :3] + 0.3 * rng.standard_normal((n, 3))
    fit = tsls(M, K, rng.standard_normal(n))
    B = rng.standard_normal((5, 5))
    Xi = B @ B.T
    T = fit.t_matrix
    A = np.linalg.inv(K.T @ K) @ K.T @ M
    U = np.linalg.inv(T) @ A.T @ Xi @ A @ np.linalg.inv(T)
    R = Selector(0, 3, 3).matrix()
    assert_allclose(dmat_shac(fit, K, Xi, R), R @ U @ R.T / n, rtol=1e-9)
    zero = dmat_shac(fit, K, np.zeros((5, 5)), R)
    assert not zero.any()
    with pytest.raises(NumericalError):
        wald_statistic(np.ones(3), zero, n)


def test_dmat_shac_scalar_hand_case():
    # n=2, M=K=(1,2)': T = 5/2, A = 1, U = Xi / T^2
    M = np.array([[1.0], [2.0]])
    fit = tsls(M, M, np.array([1.0, 1.0]))
    assert_allclose(dmat_shac(fit, M, np.array([[3.0]]), Selector(0, 1, 1)),
                    [[3.0 / 2.5 ** 2 / 2]])


def test_wald_statistic_examples():
    stat, quad = wald_statistic(np.zeros(2), np.eye(2), 10)
    assert quad == 0 and stat == pytest.approx(-1.0)
    stat, quad = wald_statistic(np.array([0.1]), np.array([[0.5]]), 100)
    assert quad == pytest.approx(2.0)
    assert stat == pytest.approx(1 / math.sqrt(2))
    assert stat == pytest.approx(0.7071, abs=1e-4)
    theta = np.array([1.0, 0.0, 0.0])
    assert wald_statistic(theta, np.eye(3) / 3, 1)[0] == pytest.approx(0.0)


def test_wald_statistic_errors():
    with pytest.raises(NumericalError) as info:
        wald_statistic(np.ones(2), np.diag([1.0, 0.0]), 5)
    assert info.value.eigenvalue == 0.0
    with pytest.raises(DataError):
        wald_statistic(np.ones(2), np.eye(3), 5)


def test_wald_quadratic_form_invariance():
    rng = np.random.default_rng(4)
    for _ in range(10):
        theta = rng.standard_normal(4)
        B = rng.standard_normal((4, 4))
        D = B @ B.T + 0.1 * np.eye(4)
        A = rng.standard_normal((4, 4)) + 2 * np.eye(4)
        a = wald_statistic(theta, D, 30)[1]
        b = wald_statistic(A @ theta, A @ D @ A.T, 30)[1]
        assert_allclose(b, a, rtol=1e-9)


def test_p_value_examples():
    assert p_values(0.0, 2)[1] == pytest.approx(math.exp(-1), abs=1e-6)
    assert p_values(1.6449, 7)[0] == pytest.approx(0.05, abs=1e-4)
    assert p_values(-math.sqrt(3 / 2), 3)[1] == pytest.approx(1.0)
    with pytest.raises(DataError):
        p_values(0.0, 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 3), st.integers(1, 2000))
def test_p_values_bounds_and_large_d_agreement(stat, d):
    asy, chi = p_values(stat, d)
    assert 0 <= asy <= 1 and 0 <= chi <= 1
    # the skewness gap at statistic 0 is about 0.013 at d=200 and falls
    # below 0.01 only past d of roughly 360
    if d >= 400:
        assert abs(asy - chi) < 0.01


def test_w0_matches_manual_ols(h0_data):
    rep = run_test("W0", h0_data)
    mf = fit_model(h0_data, TestSpec("W0"))
    M = mf.bundle.regressors
    coef = np.linalg.lstsq(M, h0_data.y, rcond=None)[0]
    assert_allclose(mf.fit.coefficients, coef, atol=1e-9)
    T = M.T @ M / M.shape[0]
    R = np.zeros((2, M.shape[1]))
    R[:, -2:] = np.eye(2)
    D = R @ np.linalg.inv(T) @ R.T / M.shape[0]
    alpha = coef[-2:]
    quad = M.shape[0] * alpha @ np.linalg.solve(M.shape[0] * D, alpha)
    assert_allclose(rep.quad_form, quad, rtol=1e-8)
    assert_allclose(rep.statistic, (rep.quad_form - 2) / 2, rtol=1e-12)


def test_w0_equals_w1_without_spatial_block(h0_data):
    from dataclasses import replace
    bare = replace(h0_data, weights=())
    w0 = run_test("W0", bare)
    w1 = run_test("W1", bare, TestSpec("W1", instruments="regressors"))
    assert_allclose(w1.statistic, w0.statistic, rtol=1e-10)


def test_w4_constant_phi_equals_w2(h0_data):
    w2 = run_test("W2", h0_data)
    w4 = run_test("W4-alpha", h0_data, TestSpec("W4-alpha", phi=BasisSpec("constant", 1)))
    assert_allclose(w4.statistic, w2.statistic, rtol=1e-8)
    assert w4.block_dim == w2.block_dim == 2


@pytest.mark.parametrize("tid", ["W1", "W2"])
def test_statistic_invariant_to_instrument_transformation(h0_data, tid):
    spec = TestSpec(tid)
    mf = fit_model(h0_data, spec)
    K = mf.instruments
    A = np.random.default_rng(6).standard_normal((K.shape[1],) * 2) + 3 * np.eye(K.shape[1])
    from vcwald.wald import report_from_fit, selector
    from vcwald.wald import ModelFit
    fit2 = tsls(mf.bundle.regressors, K @ A, h0_data.y,
                groups=[(0, 2), (2, 2), (4, 2)])
    mf2 = ModelFit(mf.bundle, fit2, K @ A, spec)
    a = report_from_fit(mf, h0_data)
    b = report_from_fit(mf2, h0_data)
    assert_allclose(b.statistic, a.statistic, rtol=1e-8, atol=1e-8)


def test_report_invariants(h0_data):
    for tid in ("W1", "W2", "W4-mu"):
        spec = TestSpec(tid, phi=BasisSpec("lambda-polynomial", 2)) if tid == "W4-mu" else None
        rep = run_test(tid, h0_data, spec)
        assert rep.statistic == pytest.approx((rep.quad_form - rep.block_dim)
                                              / math.sqrt(2 * rep.block_dim), abs=1e-12)
        assert 0 <= rep.asy_p <= 1 and 0 <= rep.chi_p <= 1
        assert json.loads(rep.to_json())["test_id"] == tid
    assert run_test("W4-mu", h0_data, TestSpec("W4-mu", phi=BasisSpec("lambda-polynomial", 2))).block_dim == 4


def test_alternative_is_detected():
    data = generate(DgpConfig(n=400, alternative=True, seed=9))
    rep = run_test("W1", data)
    assert rep.statistic > 5 and rep.chi_p < 1e-4


def test_w3_on_nonparametric_data():
    data = generate(DgpConfig(n=200, M=1, spatial="nonparametric",
                              error_structure="sar-dependent", seed=2))
    rep = run_test("W3", data)
    assert np.isfinite(rep.statistic) and rep.variance_mode == "shac"


def test_stage_annotation():
    data = generate(DgpConfig(n=50, seed=1))
    with pytest.raises(DataError, match=r"^\[shac\]") as info:
        run_test("W2", data)
    assert "distance" in str(info.value)


def test_spec_validation():
    with pytest.raises(ConfigError):
        TestSpec("W5")
    with pytest.raises(ConfigError):
        TestSpec("W4-alpha")
    assert TestSpec("W4-mu", phi=BasisSpec("constant", 1)).target == "spatial"


def test_estimate_curve_examples(h0_data):
    mf = fit_model(h0_data, TestSpec("W1"))
    sel_offset = 4
    coef = mf.fit.coefficients.copy()
    coef[sel_offset:] = [1.0, -1.0]
    from dataclasses import replace
    fit = replace(mf.fit, coefficients=coef)
    c = estimate_curve(fit, mf.bundle, 0, [0.5], sample_z=[0.0, 1.0])
    assert_allclose(c.values, [0.25])
    assert c.sample_mean == pytest.approx(0.0)
    coef[sel_offset:] = 0.0
    flat = estimate_curve(replace(mf.fit, coefficients=coef), mf.bundle, 0, np.linspace(0, 1, 5))
    assert not flat.values.any()
    with pytest.raises(DataError):
        estimate_curve(mf.fit, mf.bundle, 3, [0.5])


def test_estimate_curve_bands(h0_data):
    mf = fit_model(h0_data, TestSpec("W1"))
    sel = Selector(4, 2, mf.fit.d)
    cov = block_covariance(mf, sel)
    grid = np.linspace(0, 1, 11)
    c = estimate_curve(mf.fit, mf.bundle, 0, grid, cov=cov)
    B = np.column_stack([grid, grid ** 2])
    se = np.sqrt(np.einsum("ij,jk,ik->i", B, cov, B))
    assert_allclose(c.hi - c.values, stats.norm.ppf(0.975) * se, rtol=1e-10)
    assert np.all(c.lo <= c.values) and np.all(c.values <= c.hi)
