"""Projection onto the instrument space and two-stage least squares."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .errors import DataError, NumericalError

log = logging.getLogger(__name__)

PIVOT_RTOL = 1e-10
COND_LIMIT = 1e12


@dataclass(frozen=True)
class InstrumentFactor:
    """Orthonormal basis for span(K) from a column-pivoted QR.

    ``kept`` lists the original column indices retained after dropping
    numerically collinear columns; ``r`` is the triangular factor for those
    columns in pivot order, relative to the unit-norm rescaled columns.
    """

    q: np.ndarray
    r: np.ndarray
    kept: np.ndarray
    scale: np.ndarray
    n_columns: int

    @property
    def rank(self) -> int:
        return self.q.shape[1]

    def project(self, V) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        return self.q @ (self.q.T @ V)

    def coords(self, V) -> np.ndarray:
        """Q'V, the coordinates of the projection in the orthonormal basis."""
        return self.q.T @ np.asarray(V, dtype=float)


def factor_instruments(K) -> InstrumentFactor:
    """Rank-revealing QR of K with columns rescaled to unit norm first.

    Rescaling makes the pivot tolerance independent of the units of each
    instrument.  Columns whose pivot falls below ``PIVOT_RTOL`` times the
    leading pivot are dropped with a warning.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim == 1:
        K = K[:, None]
    if K.ndim != 2 or K.shape[1] == 0:
        raise DataError("instrument matrix has no columns")
    if not np.all(np.isfinite(K)):
        raise DataError("instrument matrix has non-finite entries")
    norms = np.linalg.norm(K, axis=0)
    if not np.any(norms > 0):
        raise DataError("instrument matrix is all zero")
    scale = np.where(norms > 0, norms, 1.0)
    q, r, piv = linalg.qr(K / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > PIVOT_RTOL * diag[0]))
    if rank < K.shape[1]:
        dropped = np.sort(piv[rank:])
        log.warning("dropping %d collinear instrument column(s): %s",
                    dropped.size, dropped.tolist())
    return InstrumentFactor(q=q[:, :rank], r=r[:rank, :rank], kept=piv[:rank],
                            scale=scale, n_columns=K.shape[1])


def projector_apply(K, V) -> np.ndarray:
    """P_K V without forming the n x n projector."""
    return factor_instruments(K).project(V)


@dataclass(frozen=True)
class TslsFit:
    """A 2SLS fit.

    Internally the regressors are reparameterized as M C, where C is block
    diagonal and orthonormalizes each column group of M; ``coefficients``,
    ``t_matrix`` and :meth:`t_solve` are always in the original coordinates.
    :meth:`working` returns the same fit in the reparameterized coordinates,
    in which block-restricted Wald statistics are identical and numerically
    better conditioned.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    t_matrix: np.ndarray
    rank_diag: int
    factor: InstrumentFactor
    regressors: np.ndarray
    condition: float
    transform: np.ndarray | None = None
    working_coefficients: np.ndarray | None = None
    working_t: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.residuals.size

    @property
    def d(self) -> int:
        return self.coefficients.size

    def _t_solve_raw(self, T, B):
        try:
            return linalg.cho_solve(linalg.cho_factor(T), B)
        except linalg.LinAlgError:
            return linalg.solve(T, B, assume_a="sym")

    def t_solve(self, B) -> np.ndarray:
        """T^{-1} B, computed as C Tw^{-1} C' B when a reparameterization exists."""
        if self.transform is None:
            return self._t_solve_raw(self.t_matrix, B)
        C = self.transform
        return C @ self._t_solve_raw(self.working_t, C.T @ B)

    def working(self) -> "TslsFit":
        """This fit expressed in the orthonormalized-block coordinates."""
        if self.transform is None:
            return self
        return replace(self, coefficients=self.working_coefficients,
                       t_matrix=self.working_t,
                       regressors=self.regressors @ self.transform,
                       transform=None, working_coefficients=None, working_t=None)


def block_transform(M, groups) -> np.ndarray:
    """Block-diagonal C with M[:, g] C_g orthonormal for every column group g.

    ``groups`` is a sequence of (offset, width) pairs covering the columns.
    """
    M = np.asarray(M, dtype=float)
    d = M.shape[1]
    C = np.zeros((d, d))
    covered = 0
    for off, width in groups:
        cols = slice(off, off + width)
        r = linalg.qr(M[:, cols], mode="r")[0][:width, :width]
        rd = np.abs(np.diag(r))
        if rd.size == 0 or rd.min() <= PIVOT_RTOL * rd.max():
            raise NumericalError(f"regressor columns {off}..{off + width - 1} are collinear",
                                 condition=np.inf, stage="tsls")
        sign = np.where(np.diag(r) < 0, -1.0, 1.0)
        C[cols, cols] = linalg.solve_triangular(r * sign[:, None], np.eye(width))
        covered += width
    if covered != d:
        raise DataError(f"column groups cover {covered} of {d} regressors")
    return C


def tsls(M, K, y, factor: InstrumentFactor | None = None, groups=None,
         cond_limit: float = COND_LIMIT) -> TslsFit:
    """Two-stage least squares of y on M using instruments K.

    ``groups`` lists (offset, width) column groups that are orthonormalized
    before solving; by default every column is its own group, which amounts
    to equilibrating column scales.  The identification check requires the
    condition number of the reparameterized T to stay below ``cond_limit``.
    A precomputed ``factor`` of K may be passed to reuse one factorization.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, d = M.shape
    if y.size != n:
        raise DataError(f"y has {y.size} entries but M has {n} rows")
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(y))):
        raise DataError("regressors or outcome contain non-finite values")
    f = factor if factor is not None else factor_instruments(K)
    if f.q.shape[0] != n:
        raise DataError(f"instruments have {f.q.shape[0]} rows but M has {n}")
    if f.rank < d:
        raise NumericalError(f"under-identified: instrument rank {f.rank} < {d} regressors",
                             stage="tsls")
    groups = tuple(groups) if groups is not None else tuple((j, 1) for j in range(d))
    C = block_transform(M, groups)
    QMw = f.coords(M @ C)
    Qy = f.coords(y)
    sv = np.linalg.svd(QMw, compute_uv=False)
    cond = float(np.inf if sv[-1] == 0 else (sv[0] / sv[-1]) ** 2)
    if cond > cond_limit:
        raise NumericalError(f"M'P_K M is numerically singular (condition {cond:.3g})",
                             condition=cond, stage="tsls")
    Tw = QMw.T @ QMw / n
    Tw = (Tw + Tw.T) / 2.0
    coef_w = linalg.lstsq(QMw, Qy, lapack_driver="gelsd")[0]
    coef = C @ coef_w
    resid = y - M @ coef
    QM = f.coords(M)
    T = QM.T @ QM / n
    T = (T + T.T) / 2.0
    return TslsFit(coefficients=coef, residuals=resid, t_matrix=T, rank_diag=f.rank,
                   factor=f, regressors=M, condition=cond, transform=C,
                   working_coefficients=coef_w, working_t=Tw)
