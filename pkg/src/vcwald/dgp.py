"""Synthetic data for the Monte Carlo experiments.

Every random draw goes through the ``numpy.random.Generator`` passed in, in
a fixed order, so a dataset is a pure function of its configuration and
generator state.  Quantities that do not depend on the draws (weight
matrices, LU factors of the SAR operator, the embedded base distances) are
cached per configuration.
"""

from __future__ import annotations

import functools
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy import linalg, stats
from scipy.linalg import lapack
from scipy.sparse.csgraph import shortest_path
from scipy.spatial.distance import pdist, squareform

from .errors import ConfigError, DataError, NumericalError
from .shac import DEFAULT_ETA, DistanceSet
from .weights import SpatialWeights, build_circulant, spectral_norm

ERROR_DISTS = ("V1", "V2", "V3")
V2_SCALES = ("unit-variance", "paper-literal")
LAMBDA_MODES = ("fixed", "varying-1", "varying-2", "none")
ERROR_STRUCTURES = ("iid", "sar-dependent")
SPATIAL_KINDS = ("circulant", "nonparametric")
BETA = (-1.0, 1.0)
COND_LIMIT = 1e12


@dataclass(frozen=True)
class DgpConfig:
    """Monte Carlo design.

    ``spatial="nonparametric"`` replaces the circulant outcome equation by the
    random sparse matrix G; distances are still synthesized from the
    circulant with ``d_lambda`` neighbours.  ``M`` is the number of noisy
    distance measures (0 skips them, which tests without SHAC do not need).
    """

    n: int
    d_lambda: int = 2
    lambda_mode: str = "fixed"
    error_dist: str = "V1"
    error_structure: str = "iid"
    alternative: bool = False
    M: int = 0
    eta: float = DEFAULT_ETA
    seed: int = 0
    v2_scale: str = "unit-variance"
    spatial: str = "circulant"

    def __post_init__(self):
        checks = ((self.lambda_mode, LAMBDA_MODES, "lambda_mode"),
                  (self.error_dist, ERROR_DISTS, "error_dist"),
                  (self.error_structure, ERROR_STRUCTURES, "error_structure"),
                  (self.v2_scale, V2_SCALES, "v2_scale"),
                  (self.spatial, SPATIAL_KINDS, "spatial"))
        for value, allowed, name in checks:
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        if self.d_lambda < 1:
            raise ConfigError("d_lambda must be >= 1")
        if self.n < 2 * self.d_lambda + 2:
            raise ConfigError(f"n={self.n} too small for d_lambda={self.d_lambda}")
        if self.lambda_mode == "varying-1" and self.d_lambda != 1:
            raise ConfigError("lambda_mode varying-1 needs d_lambda=1")
        if self.lambda_mode == "varying-2" and self.d_lambda != 2:
            raise ConfigError("lambda_mode varying-2 needs d_lambda=2")
        if self.M < 0:
            raise ConfigError("M must be >= 0")
        if not 0 < self.eta < 0.5:
            raise ConfigError("eta must lie in (0, 1/2)")


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    X: np.ndarray
    P: np.ndarray
    Z: np.ndarray
    weights: tuple = ()
    distances: DistanceSet | None = None
    truth: dict = field(default_factory=dict, compare=False)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = np.asarray(self.y).size
        for name in ("X", "P", "Z"):
            a = np.asarray(getattr(self, name))
            if a.shape[0] != n:
                raise DataError(f"{name} has {a.shape[0]} rows, y has {n}")
            if not np.all(np.isfinite(a)):
                raise DataError(f"{name} has non-finite values")
        if not np.all(np.isfinite(self.y)):
            raise DataError("y has non-finite values")
        for W in self.weights:
            if W.n != n:
                raise DataError(f"weight matrix is {W.n}x{W.n}, data have n={n}")

    @property
    def n(self) -> int:
        return np.asarray(self.y).size


def make_lambda(d_lambda: int) -> np.ndarray:
    """0.9 (d, d-1, ..., 1) / sum."""
    if d_lambda < 1:
        raise ConfigError("d_lambda must be >= 1")
    star = np.arange(d_lambda, 0, -1, dtype=float)
    return 0.9 * star / star.sum()


def draw_errors(dist: str, n: int, rng: np.random.Generator,
                v2_scale: str = "unit-variance") -> np.ndarray:
    """Zero-mean draws: V1 normal, V2 scaled t(10), V3 (chi2_8 - 8)/4.

    V2 is scaled by sqrt(8/10) for unit variance by default; ``paper-literal``
    uses sqrt(5/4), which has variance 25/16.
    """
    if dist == "V1":
        return rng.standard_normal(n)
    if dist == "V2":
        if v2_scale not in V2_SCALES:
            raise ConfigError(f"v2_scale must be one of {V2_SCALES}")
        scale = math.sqrt(0.8) if v2_scale == "unit-variance" else math.sqrt(1.25)
        return scale * rng.standard_t(10, n)
    if dist == "V3":
        return (rng.chisquare(8, n) - 8.0) / 4.0
    raise ConfigError(f"unknown error law {dist!r}")


def _dense(W):
    return W.dense() if isinstance(W, SpatialWeights) else np.asarray(W, dtype=float)


def sar_operator(lambdas, Ws) -> np.ndarray:
    """S = I - sum_j Lambda_j W_j.

    ``lambdas`` is either a length-d vector of constants or an n x d table of
    per-unit values lambda_j(z_i), which scale the rows of W_j.
    """
    lam = np.asarray(lambdas, dtype=float)
    Ws = list(Ws)
    if not Ws:
        raise DataError("need at least one weight matrix")
    n = _dense(Ws[0]).shape[0]
    S = np.eye(n)
    if lam.ndim == 1:
        if lam.size != len(Ws):
            raise DataError(f"{lam.size} lambdas for {len(Ws)} weight matrices")
        for l, W in zip(lam, Ws):
            S -= l * _dense(W)
    else:
        if lam.shape != (n, len(Ws)):
            raise DataError(f"lambda table has shape {lam.shape}, expected {(n, len(Ws))}")
        for j, W in enumerate(Ws):
            S -= lam[:, [j]] * _dense(W)
    return S


@dataclass(frozen=True)
class SarFactor:
    lu: tuple
    rcond: float

    def solve(self, rhs) -> np.ndarray:
        return linalg.lu_solve(self.lu, rhs)


def factor_operator(S) -> SarFactor:
    """LU of S with a LAPACK reciprocal condition estimate."""
    S = np.asarray(S, dtype=float)
    anorm = float(np.max(np.sum(np.abs(S), axis=0)))
    with warnings.catch_warnings():
        # singularity is reported below through the condition estimate
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu, piv = linalg.lu_factor(S, check_finite=True)
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not rcond > 1.0 / COND_LIMIT:
        raise NumericalError(f"SAR operator is singular or ill-conditioned "
                             f"(condition estimate {1.0 / max(rcond, 1e-300):.3g})",
                             condition=1.0 / max(rcond, 1e-300), stage="dgp")
    return SarFactor((lu, piv), float(rcond))


def solve_sar(lambdas, Ws, mean, eps) -> np.ndarray:
    """y = S^{-1} (mean + eps)."""
    rhs = np.asarray(mean, dtype=float) + np.asarray(eps, dtype=float)
    return factor_operator(sar_operator(lambdas, Ws)).solve(rhs)


def sar_error_filter(lambdas, Ws, innovations) -> np.ndarray:
    """(I - sum lambda_k W_k)^{-1} innovations."""
    return factor_operator(sar_operator(lambdas, Ws)).solve(np.asarray(innovations, dtype=float))


def synth_distances(W_base) -> np.ndarray:
    """Euclidean distances of a 2-D classical scaling of hop-count distances."""
    A = W_base.matrix if isinstance(W_base, SpatialWeights) else W_base
    graph = sp.csr_array(A) if not sp.issparse(A) else sp.csr_array(A)
    hops = shortest_path(graph, method="D", directed=False, unweighted=True)
    if not np.all(np.isfinite(hops)):
        raise DataError("weight matrix graph is disconnected")
    n = hops.shape[0]
    sq = hops ** 2
    Bm = -0.5 * (sq - sq.mean(axis=0)[None, :] - sq.mean(axis=1)[:, None] + sq.mean())
    evals, evecs = linalg.eigh(Bm, subset_by_index=[max(n - 2, 0), n - 1])
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals.size < 2 or evals[1] <= 1e-10 * max(evals[0], 1.0):
        raise NumericalError("classical scaling found fewer than 2 positive eigenvalues",
                             stage="dgp")
    idx = np.argmax(np.abs(evecs), axis=0)
    evecs = evecs * np.sign(evecs[idx, np.arange(2)])
    coords = evecs * np.sqrt(evals)
    return squareform(pdist(coords))


def perturb_distances(D, M: int, rng: np.random.Generator) -> tuple:
    """M copies of D plus symmetric U[0,1]-average noise, zero diagonal."""
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    out = []
    for _ in range(M):
        U = rng.random((n, n))
        Dm = D + 0.5 * (U + U.T)
        np.fill_diagonal(Dm, 0.0)
        out.append(Dm)
    return tuple(out)


def build_g_dgp(n: int, rng: np.random.Generator, *, retries: int = 1) -> SpatialWeights:
    """Sparse random G* = Phi(-b) 1(c < 0.1), scaled by 1/(1.2 ||G*||)."""
    for _ in range(retries + 1):
        b = rng.uniform(-3.0, 3.0, (n, n))
        c = rng.random((n, n))
        G = np.where(c < 0.1, stats.norm.cdf(-b), 0.0)
        np.fill_diagonal(G, 0.0)
        if np.any(G):
            norm = spectral_norm(sp.csr_array(G))
            return SpatialWeights(G / (1.2 * norm), kind="nonparametric-dgp",
                                  meta={"scale": 1.2 * norm})
    raise NumericalError("G* is all zero after redraw", stage="dgp")


# -- cached static parts ------------------------------------------------------

@functools.lru_cache(maxsize=16)
def circulants(n: int, d_lambda: int) -> tuple:
    return tuple(build_circulant(n, k) for k in range(1, d_lambda + 1))


@functools.lru_cache(maxsize=16)
def base_distances(n: int, k: int) -> np.ndarray:
    D = synth_distances(build_circulant(n, k))
    D.setflags(write=False)
    return D


@functools.lru_cache(maxsize=16)
def _fixed_factor(n: int, d_lambda: int) -> SarFactor:
    return factor_operator(sar_operator(make_lambda(d_lambda), circulants(n, d_lambda)))


def varying_lambda(mode: str, z) -> np.ndarray:
    """n x d table of lambda_j(z_i) for the varying presets."""
    s = np.sin(np.pi * np.asarray(z, dtype=float))[:, None]
    if mode == "varying-1":
        return 0.9 * s
    if mode == "varying-2":
        return s * np.array([0.6, 0.3])
    raise ConfigError(f"{mode!r} is not a varying lambda preset")


def delta_alternative(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return 1.0 - z ** 2


def generate(config: DgpConfig, rng: np.random.Generator | None = None) -> Dataset:
    """One dataset.  Draw order: z, p, x2, errors, G (nonparametric only),
    distance noise."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    n, dl = config.n, config.d_lambda
    z = rng.random(n)
    p = rng.uniform(-2.0, 2.0, n)
    x2 = 1.0 + math.sqrt(2.0) * rng.standard_normal(n)
    eps = draw_errors(config.error_dist, n, rng, config.v2_scale)
    X = np.column_stack([np.ones(n), x2])
    delta = delta_alternative(z) if config.alternative else np.zeros(n)
    mean = X @ np.asarray(BETA) + p * delta
    Ws = circulants(n, dl)
    truth = {"beta": list(BETA), "alternative": config.alternative,
             "lambda_mode": config.lambda_mode}

    if config.spatial == "nonparametric":
        G = build_g_dgp(n, rng)
        fG = factor_operator(np.eye(n) - G.dense())
        if config.error_structure == "sar-dependent":
            eps = fG.solve(eps)
        y = fG.solve(mean + eps)
        weights = (G,)
    else:
        if config.error_structure == "sar-dependent":
            eps = _fixed_factor(n, dl).solve(eps)
        if config.lambda_mode == "fixed":
            y = _fixed_factor(n, dl).solve(mean + eps)
            truth["lambda"] = make_lambda(dl).tolist()
        elif config.lambda_mode == "none":
            y = mean + eps
            truth["lambda"] = [0.0] * dl
        else:
            y = solve_sar(varying_lambda(config.lambda_mode, z), Ws, mean, eps)
        weights = Ws

    distances = None
    if config.M:
        measures = perturb_distances(base_distances(n, dl), config.M, rng)
        distances = DistanceSet.from_rule(measures, eta=config.eta)
    return Dataset(y=y, X=X, P=p[:, None], Z=z, weights=tuple(weights),
                   distances=distances, truth=truth)


# -- central limit probe --------------------------------------------------------

@dataclass(frozen=True)
class CltReport:
    J: int
    n: int
    reps: int
    law: str
    mean: float
    variance: float
    skew: float
    ks_distance: float


def clt_probe(J: int, n: int, reps: int, rng: np.random.Generator, law: str = "V1",
              chunk: int = 500) -> CltReport:
    """Moments of (v'Av - J)/sqrt(2J) for a random rank-J projector A."""
    if not 1 <= J <= n:
        raise ConfigError(f"need 1 <= J <= n, got J={J}, n={n}")
    if reps < 2:
        raise ConfigError("clt probe needs at least 2 replications")
    if J == n:
        Q = None
    else:
        Q = linalg.qr(rng.standard_normal((n, J)), mode="economic")[0]
    out = np.empty(reps)
    for start in range(0, reps, chunk):
        m = min(chunk, reps - start)
        V = draw_errors(law, m * n, rng).reshape(m, n)
        proj = V if Q is None else V @ Q
        out[start:start + m] = (np.einsum("ij,ij->i", proj, proj) - J) / math.sqrt(2.0 * J)
    ks = stats.kstest(out, "norm").statistic
    return CltReport(J, n, reps, law, float(out.mean()), float(out.var(ddof=1)),
                     float(stats.skew(out)), float(ks))


# -- export ------------------------------------------------------------------

def export_dataset(ds: Dataset, directory) -> Path:
    """Write one CSV per vector/matrix plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}

    def put(name, arr):
        path = d / f"{name}.csv"
        np.savetxt(path, np.atleast_1d(arr), delimiter=",", fmt="%.17g")
        files[name] = path.name

    put("y", ds.y)
    put("X", ds.X)
    put("P", ds.P)
    put("Z", ds.Z)
    for j, W in enumerate(ds.weights, start=1):
        put(f"W{j}", W.dense())
    thresholds = []
    if ds.distances is not None:
        for m, D in enumerate(ds.distances.measures, start=1):
            put(f"Dstar{m}", D)
        thresholds = list(ds.distances.thresholds)
    manifest = {"n": ds.n, "files": files, "thresholds": thresholds,
                "ell": None if ds.distances is None else ds.distances.ell,
                "truth": ds.truth}
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def config_dict(config: DgpConfig) -> dict:
    return asdict(config)
