"""Variance matrices, normalized Wald statistics and fitted curves.

A normalized Wald statistic for a d-dimensional block theta is

    W = (n theta' D^{-1} theta - d) / sqrt(2 d),

referred either to the standard normal (``asy_p``) or to the standardized
chi-square with d degrees of freedom (``chi_p``).  Both tests reject for
large values.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, stats

from .basis import BasisSpec, build_psi, eval_regression_basis
from .design import (DesignBundle, Selector, build_instruments, build_np_design,
                     build_sar_design, build_vc_design, selector)
from .errors import ConfigError, DataError, NumericalError, VcwaldError
from .estimator import TslsFit, tsls
from .shac import DistanceSet, KernelSpec, shac_xi

TEST_IDS = ("W0", "W1", "W2", "W3", "W4-alpha", "W4-mu")
VARIANCE_MODES = ("unit", "estimated")
SINGULAR_RTOL = 1e-12


@dataclass(frozen=True)
class WaldReport:
    statistic: float
    block_dim: int
    quad_form: float
    asy_p: float
    chi_p: float
    variance_mode: str
    test_id: str
    n: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _sel_matrix(sel) -> np.ndarray:
    return sel.matrix() if isinstance(sel, Selector) else np.atleast_2d(np.asarray(sel, float))


def dmat_plain(fit: TslsFit, sel, variance: str = "unit") -> np.ndarray:
    """R T^{-1} R' / n, optionally scaled by the residual variance u'u/n."""
    if variance not in VARIANCE_MODES:
        raise ConfigError(f"variance must be one of {VARIANCE_MODES}, got {variance!r}")
    R = _sel_matrix(sel)
    D = R @ fit.t_solve(R.T) / fit.n
    if variance == "estimated":
        D = D * float(fit.residuals @ fit.residuals) / fit.n
    return (D + D.T) / 2.0


def dmat_shac(fit: TslsFit, K, xi, sel) -> np.ndarray:
    """R U R' / n with U = T^{-1} A' Xi A T^{-1} and A = (K'K)^{-1} K'M.

    ``xi`` is a :class:`ShacEstimate` or a bare J x J matrix computed from the
    same columns of K.
    """
    K = np.asarray(K, dtype=float)
    Xi = xi.xi_hat if hasattr(xi, "xi_hat") else np.asarray(xi, dtype=float)
    if Xi.shape != (K.shape[1], K.shape[1]):
        raise DataError(f"Xi is {Xi.shape} but K has {K.shape[1]} columns")
    q, r = linalg.qr(K, mode="economic")
    rd = np.abs(np.diag(r))
    if rd.size == 0 or rd.min() <= SINGULAR_RTOL * rd.max():
        raise NumericalError("K'K is singular", stage="dmat_shac")
    A = linalg.solve_triangular(r, q.T @ fit.regressors)
    B = fit.t_solve(A.T)              # T^{-1} A'
    R = _sel_matrix(sel)
    RB = R @ B
    D = RB @ Xi @ RB.T / fit.n
    return (D + D.T) / 2.0


def wald_statistic(theta_sub, D, n: int) -> tuple[float, float]:
    """(statistic, quad_form) with quad_form = n theta' D^{-1} theta."""
    theta = np.atleast_1d(np.asarray(theta_sub, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    d = theta.size
    if D.shape != (d, d):
        raise DataError(f"D is {D.shape} but theta has {d} entries")
    evals = np.linalg.eigvalsh((D + D.T) / 2.0)
    scale = np.max(np.abs(evals))
    smallest = float(evals[np.argmin(np.abs(evals))])
    if scale == 0 or abs(smallest) <= SINGULAR_RTOL * scale:
        raise NumericalError(f"variance matrix is singular (eigenvalue {smallest:.3g})",
                             eigenvalue=smallest, stage="wald")
    quad = float(n * theta @ linalg.solve(D, theta, assume_a="sym"))
    return (quad - d) / math.sqrt(2.0 * d), quad


def p_values(statistic: float, d: int) -> tuple[float, float]:
    """(asy_p, chi_p): upper-tail normal and standardized chi-square p-values."""
    if d < 1:
        raise DataError("block dimension must be >= 1")
    asy = float(stats.norm.sf(statistic))
    chi = float(stats.chi2.sf(statistic * math.sqrt(2.0 * d) + d, d))
    return asy, chi


# -- test orchestration --------------------------------------------------------

@dataclass(frozen=True)
class TestSpec:
    """How to build and evaluate one Wald test.

    ``basis`` gives one spec per column of P.  ``instruments`` defaults to
    the Monte Carlo ordering for each test.  ``component`` restricts the
    alpha target to a single coefficient function.
    """

    __test__ = False

    test_id: str = "W1"
    basis: tuple = (BasisSpec("polynomial", 2),)
    phi: BasisSpec | None = None
    instruments: str | None = None
    variance: str = "unit"
    kernel: KernelSpec = KernelSpec()
    d_tau: int = 2
    component: int | None = None
    clip: bool = False

    def __post_init__(self):
        if self.test_id not in TEST_IDS:
            raise ConfigError(f"unknown test id {self.test_id!r}; expected one of {TEST_IDS}")
        if self.variance not in VARIANCE_MODES:
            raise ConfigError(f"variance must be one of {VARIANCE_MODES}")
        if self.test_id.startswith("W4") and self.phi is None:
            raise ConfigError("W4 tests need a phi basis")
        if self.test_id == "W4-mu" and self.component is not None:
            raise ConfigError("component selection applies only to alpha targets")
        object.__setattr__(self, "basis", tuple(self.basis))

    @property
    def target(self) -> str:
        return "spatial" if self.test_id == "W4-mu" else "varying"

    @property
    def uses_shac(self) -> bool:
        return self.test_id in ("W2", "W3", "W4-alpha", "W4-mu")

    @property
    def instrument_kind(self) -> str:
        if self.instruments is not None:
            return self.instruments
        return {"W0": "regressors", "W1": "k1-mc", "W2": "k1-mc", "W3": "k2-mc",
                "W4-alpha": "k3-interacted", "W4-mu": "k3-interacted"}[self.test_id]


@dataclass(frozen=True)
class ModelFit:
    bundle: DesignBundle
    fit: TslsFit
    instruments: np.ndarray
    spec: TestSpec


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except VcwaldError as exc:
        if not str(exc).startswith(f"[{name}]"):
            exc.args = (f"[{name}] {exc}",) + exc.args[1:]
        raise


def _distances(data) -> DistanceSet:
    dist = getattr(data, "distances", None)
    if dist is None or dist.M == 0:
        raise DataError("this test needs distance measures")
    return dist


def fit_model(data, spec: TestSpec) -> ModelFit:
    """Design, instruments and 2SLS fit for ``spec`` on ``data``.

    ``data`` needs attributes y, X, P, Z, weights and (for distance-based
    tests) distances.
    """
    tid = spec.test_id
    psi = _stage("basis", build_psi, data.P, data.Z, spec.basis)
    Ws = list(getattr(data, "weights", None) or [])
    if tid == "W0":
        bundle = _stage("design", build_sar_design, data.y, [], data.X, psi)
    elif tid in ("W1", "W2"):
        bundle = _stage("design", build_sar_design, data.y, Ws, data.X, psi)
    elif tid == "W3":
        dist = _stage("design", _distances, data)
        bundle = _stage("design", build_np_design, data.y, dist.measures[0],
                        dist.thresholds[0], spec.d_tau, data.X, psi)
    else:
        bundle = _stage("design", build_vc_design, data.y, Ws, data.Z, spec.phi, data.X, psi)

    kind = spec.instrument_kind
    kw = {}
    if kind in ("k2", "k2-mc"):
        dist = _stage("instruments", _distances, data)
        kw = dict(dstar=dist.measures[0], cutoff=dist.thresholds[0], d_tau=spec.d_tau)
    elif kind == "k3-interacted":
        kw = dict(Z=data.Z, phi_spec=spec.phi)
    K = _stage("instruments", build_instruments, kind, data.X, psi, Ws,
               regressors=bundle.regressors, **kw)
    bundle = _stage("design", bundle.with_instruments, K)
    fit = _stage("tsls", tsls, bundle.regressors, K, data.y, groups=column_groups(bundle))
    return ModelFit(bundle, fit, K[:, np.sort(fit.factor.kept)], spec)


def column_groups(bundle: DesignBundle) -> list:
    """Column groups that any selector target is a union of: the spatial and
    exogenous blocks, and each coefficient function of the varying block."""
    groups, offset = [], 0
    for name, width in bundle.blocks:
        if name == "varying" and bundle.basis is not None:
            groups.extend((offset + h.start, h.stop - h.start)
                          for h in (bundle.basis.block_slice(k)
                                    for k in range(len(bundle.basis.block_layout))))
        else:
            groups.append((offset, width))
        offset += width
    return groups


def block_covariance(mf: ModelFit, sel, data=None, *, working: bool = False) -> np.ndarray:
    """Covariance of the selected coefficient block under ``mf.spec``.

    With ``working`` the covariance refers to the orthonormalized-block
    coordinates of :meth:`TslsFit.working`.
    """
    fit = mf.fit.working() if working else mf.fit
    if mf.spec.uses_shac:
        dist = _stage("shac", _distances, data)
        xi = _stage("shac", shac_xi, mf.instruments, fit.residuals, dist,
                    mf.spec.kernel, clip=mf.spec.clip)
        return _stage("dmat", dmat_shac, fit, mf.instruments, xi, sel)
    return _stage("dmat", dmat_plain, fit, sel, mf.spec.variance)


def report_from_fit(mf: ModelFit, data) -> WaldReport:
    sel = selector(mf.bundle, mf.spec.target, mf.spec.component)
    # the statistic is invariant to reparameterizing within the target block,
    # so it is evaluated where that block is orthonormal
    D = block_covariance(mf, sel, data, working=True)
    theta = sel.vector(mf.fit.working().coefficients)
    # D is the covariance of theta-hat (it carries the 1/n), so the n in the
    # statistic's numerator is matched by rescaling D to the O(1) matrix n*D.
    stat, quad = _stage("wald", wald_statistic, theta, mf.fit.n * D, mf.fit.n)
    asy, chi = p_values(stat, sel.width)
    mode = "shac" if mf.spec.uses_shac else "plain"
    return WaldReport(stat, sel.width, quad, asy, chi, mode, mf.spec.test_id, mf.fit.n,
                      meta={"instrument_rank": mf.fit.rank_diag,
                            "variance": mf.spec.variance if mode == "plain" else "shac"})


def run_test(test_id: str, data, spec: TestSpec | None = None) -> WaldReport:
    """Design -> 2SLS -> (SHAC) -> variance -> statistic -> p-values."""
    spec = spec if spec is not None else TestSpec(test_id)
    if spec.test_id != test_id:
        spec = TestSpec(**{**spec.__dict__, "test_id": test_id})
    return report_from_fit(fit_model(data, spec), data)


# -- fitted curves ------------------------------------------------------------

@dataclass(frozen=True)
class CurveEstimate:
    z: np.ndarray
    values: np.ndarray
    lo: np.ndarray | None
    hi: np.ndarray | None
    sample_mean: float | None
    component: int


def estimate_curve(fit: TslsFit, bundle: DesignBundle, k: int, grid, *, cov=None,
                   sample_z=None, level: float = 0.95) -> CurveEstimate:
    """delta_k(z) = psi_k(z)' alpha_k on ``grid`` with optional pointwise bands.

    ``cov`` is the covariance of alpha_k (for example from
    :func:`block_covariance`); bands use the delta method with a two-sided
    normal quantile.  ``sample_z`` adds the average of delta_k over the sample.
    """
    if bundle.basis is None:
        raise DataError("design has no varying block")
    sel = selector(bundle, "varying", k)
    spec = bundle.basis.specs[k]
    alpha = sel.vector(fit.coefficients)
    grid = np.asarray(grid, dtype=float).ravel()
    B = eval_regression_basis(spec, grid)
    values = B @ alpha
    lo = hi = None
    if cov is not None:
        cov = np.asarray(cov, dtype=float)
        if cov.shape != (alpha.size, alpha.size):
            raise DataError(f"covariance is {cov.shape}, expected {(alpha.size, alpha.size)}")
        se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", B, cov, B), 0.0))
        q = stats.norm.ppf(0.5 + level / 2.0)
        lo, hi = values - q * se, values + q * se
    mean = None
    if sample_z is not None:
        mean = float(np.mean(eval_regression_basis(spec, np.asarray(sample_z, float).ravel()) @ alpha))
    return CurveEstimate(grid, values, lo, hi, mean, k)
