"""Spatial HAC estimate of K' Sigma K / n from residuals and noisy distances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .weights import DENSE_THRESHOLD

SHAPES = ("epanechnikov-unnormalized", "bartlett", "custom-table")

DEFAULT_ETA = 3.0 / 7.0


@dataclass(frozen=True)
class KernelSpec:
    """Kernel with K(0) = 1, symmetric, supported on [-1, 1].

    ``custom-table`` interpolates linearly in |x| through ``table``, a pair of
    increasing abscissae in [0, 1] and ordinates; the first point must be (0, 1).
    """

    shape: str = "epanechnikov-unnormalized"
    smoothness_rho: float = 2.0
    table: tuple | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise DataError(f"unknown kernel shape {self.shape!r}")
        if self.smoothness_rho < 1:
            raise DataError("kernel smoothness rho must be >= 1")
        if self.shape == "custom-table":
            if self.table is None:
                raise DataError("custom-table kernel needs a table")
            xs, ys = (np.asarray(t, dtype=float) for t in self.table)
            if xs.shape != ys.shape or xs.size < 2 or xs[0] != 0.0 or ys[0] != 1.0:
                raise DataError("kernel table must start at (0, 1)")
            if np.any(np.diff(xs) <= 0) or xs[-1] > 1.0:
                raise DataError("kernel table abscissae must increase within [0, 1]")
            if np.any(np.abs(ys) > 1.0):
                raise DataError("kernel table values must lie in [-1, 1]")


def kernel_eval(spec: KernelSpec, x):
    """Evaluate the kernel elementwise."""
    a = np.abs(np.asarray(x, dtype=float))
    inside = a <= 1.0
    if spec.shape == "epanechnikov-unnormalized":
        out = np.where(inside, 1.0 - a * a, 0.0)
    elif spec.shape == "bartlett":
        out = np.where(inside, 1.0 - a, 0.0)
    else:
        xs, ys = spec.table
        out = np.where(inside & (a <= xs[-1]), np.interp(a, xs, ys), 0.0)
    return out if out.ndim else float(out)


def ell_from_eta(n: int, eta: float = DEFAULT_ETA) -> int:
    """Neighbour count floor(n^eta) + 1."""
    if not 0 < eta < 0.5:
        raise DataError(f"eta must lie in (0, 1/2), got {eta}")
    if n < 1:
        raise DataError("n must be positive")
    return math.floor(n ** eta) + 1


def nn_bandwidth(dstar, ell: int) -> float:
    """Largest over units of the distance to the ell-th nearest other unit."""
    D = np.asarray(dstar, dtype=float)
    n = D.shape[0]
    if D.ndim != 2 or D.shape[1] != n:
        raise DataError(f"distance matrix must be square, got {D.shape}")
    if not 1 <= ell <= n - 1:
        raise DataError(f"ell must be between 1 and n-1={n - 1}, got {ell}")
    off = D.copy()
    np.fill_diagonal(off, np.inf)
    kth = np.partition(off, ell - 1, axis=1)[:, ell - 1]
    return float(kth.max())


def _check_measure(D, n):
    D = np.asarray(D, dtype=float)
    if D.shape != (n, n):
        raise DataError(f"distance measure has shape {D.shape}, expected {(n, n)}")
    if not np.all(np.isfinite(D)) or np.any(D < 0):
        raise DataError("distance measures must be finite and nonnegative")
    if np.max(np.abs(D - D.T)) > 1e-12 * max(1.0, float(np.max(D))):
        raise DataError("distance measure is not symmetric")
    if np.any(np.diag(D) != 0):
        raise DataError("distance measure must have a zero diagonal")
    return D


@dataclass(frozen=True)
class DistanceSet:
    """Noisy distance measures D*_m with their kernel thresholds d_m."""

    measures: tuple
    thresholds: tuple
    ell: int | None = None
    eta: float | None = None

    def __post_init__(self):
        if len(self.measures) != len(self.thresholds):
            raise DataError("need one threshold per distance measure")
        if self.measures:
            n = np.asarray(self.measures[0]).shape[0]
            ms = tuple(_check_measure(D, n) for D in self.measures)
            object.__setattr__(self, "measures", ms)
        if any(not (t > 0) for t in self.thresholds):
            raise DataError("distance thresholds must be positive")
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))

    @property
    def n(self) -> int:
        return self.measures[0].shape[0] if self.measures else 0

    @property
    def M(self) -> int:
        return len(self.measures)

    @classmethod
    def from_rule(cls, measures, ell: int | None = None, eta: float = DEFAULT_ETA) -> "DistanceSet":
        """Thresholds by the nearest-neighbour rule; ``ell`` defaults to floor(n^eta)+1."""
        measures = tuple(np.asarray(D, dtype=float) for D in measures)
        if not measures:
            return cls((), (), ell, eta)
        n = measures[0].shape[0]
        ell = ell if ell is not None else min(ell_from_eta(n, eta), n - 1)
        return cls(measures, tuple(nn_bandwidth(D, ell) for D in measures), ell, eta)

    def ratio_rows(self, rows: slice) -> np.ndarray:
        """min_m D*_m[rows] / d_m."""
        out = self.measures[0][rows] / self.thresholds[0]
        for D, t in zip(self.measures[1:], self.thresholds[1:]):
            np.minimum(out, D[rows] / t, out=out)
        return out

    def omega(self, kernel: KernelSpec) -> np.ndarray:
        """Kernel weight matrix with unit diagonal."""
        W = kernel_eval(kernel, self.ratio_rows(slice(None)))
        np.fill_diagonal(W, 1.0)
        return W


@dataclass(frozen=True)
class ShacEstimate:
    xi_hat: np.ndarray
    kernel: KernelSpec
    effective_pairs: int
    min_eigenvalue: float
    clipped: bool = False
    distances: DistanceSet | None = field(default=None, repr=False, compare=False)


def shac_xi(K, u_hat, dist: DistanceSet, kernel: KernelSpec = KernelSpec(), *,
            clip: bool = False, dense_threshold: int = DENSE_THRESHOLD,
            chunk: int = 1024) -> ShacEstimate:
    """Xi = K' (Omega o u u') K / n with Omega_ij = kernel(min_m d*_ij,m / d_m).

    For n above ``dense_threshold`` Omega is built one block of rows at a
    time in a fixed order, so memory stays at chunk x n and the result does
    not depend on thread count.  ``clip`` raises eigenvalues below
    1e-10 * trace to that floor; leave it off when reproducing tables.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim == 1:
        K = K[:, None]
    u = np.asarray(u_hat, dtype=float).ravel()
    n = u.size
    if K.shape[0] != n:
        raise DataError(f"instruments have {K.shape[0]} rows but residuals {n}")
    if dist.M == 0:
        raise DataError("SHAC needs at least one distance measure")
    if dist.n != n:
        raise DataError(f"distance measures are {dist.n}x{dist.n} but n={n}")
    Ku = K * u[:, None]
    if n <= dense_threshold:
        omega = dist.omega(kernel)
        pairs = int(np.count_nonzero(omega))
        xi = Ku.T @ (omega @ Ku)
    else:
        xi = np.zeros((K.shape[1], K.shape[1]))
        pairs = 0
        for start in range(0, n, chunk):
            rows = slice(start, min(start + chunk, n))
            block = kernel_eval(kernel, dist.ratio_rows(rows))
            idx = np.arange(rows.start, rows.stop)
            block[idx - start, idx] = 1.0
            pairs += int(np.count_nonzero(block))
            xi += Ku[rows].T @ (block @ Ku)
    xi = (xi + xi.T) / (2.0 * n)
    evals, evecs = np.linalg.eigh(xi)
    min_eig = float(evals[0])
    clipped = False
    if clip:
        floor = 1e-10 * max(float(np.trace(xi)), 0.0)
        if min_eig < floor:
            xi = (evecs * np.maximum(evals, floor)) @ evecs.T
            clipped = True
    return ShacEstimate(xi, kernel, pairs, min_eig, clipped, dist)


def shac_xi_reference(K, u_hat, dist: DistanceSet, kernel: KernelSpec = KernelSpec()) -> np.ndarray:
    """Literal quadruple loop over (r, s, i, j); only for small test problems."""
    K = np.asarray(K, dtype=float)
    u = np.asarray(u_hat, dtype=float).ravel()
    n, J = K.shape
    xi = np.zeros((J, J))
    for r in range(J):
        for s in range(J):
            total = 0.0
            for i in range(n):
                for j in range(n):
                    if i == j:
                        w = 1.0
                    else:
                        w = kernel_eval(kernel, min(D[i, j] / t for D, t in
                                                    zip(dist.measures, dist.thresholds)))
                    total += K[i, r] * K[j, s] * u[i] * u[j] * w
            xi[r, s] = total / n
    return xi
