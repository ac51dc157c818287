"""Spatial weight matrices.

Builders return :class:`SpatialWeights`, a frozen container around an n x n
matrix.  Matrices up to ``DENSE_THRESHOLD`` units are stored as dense
``ndarray``; larger ones as ``scipy.sparse.csr_array``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import svds

from .errors import DataError

DENSE_THRESHOLD = 4096

KINDS = ("circulant", "group", "inverse-distance", "nonparametric-dgp", "custom")


class WeightsError(DataError):
    """Invalid input to a weight-matrix builder."""


def _freeze(a):
    if sp.issparse(a):
        return a
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _store(a: np.ndarray, dense_threshold: int):
    if a.shape[0] > dense_threshold:
        return sp.csr_array(a)
    return a


@dataclass(frozen=True)
class SpatialWeights:
    """An n x n interaction matrix plus how it was built."""

    matrix: np.ndarray | sp.csr_array
    kind: str = "custom"
    row_normalized: bool = False
    zero_diagonal: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise WeightsError(f"weight matrix must be square, got {m.shape}")
        if self.kind not in KINDS:
            raise WeightsError(f"unknown weights kind {self.kind!r}")
        data = m.data if sp.issparse(m) else m
        if not np.all(np.isfinite(data)):
            raise WeightsError("weight matrix has non-finite entries")
        object.__setattr__(self, "matrix", _freeze(m))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        if self.is_sparse:
            return self.matrix.toarray()
        return self.matrix

    def __matmul__(self, other):
        return self.matrix @ other


def build_circulant(n: int, k: int, dense_threshold: int = DENSE_THRESHOLD) -> SpatialWeights:
    """Symmetric circulant with ``k`` neighbours on either side, scaled by 1/(2k).

    The unscaled band matrix has largest eigenvalue 2k, so the result has
    spectral norm one and every row and column sums to one.
    """
    if k < 1:
        raise WeightsError("neighbour radius k must be >= 1")
    if n < 2 * k + 2:
        raise WeightsError(f"circulant needs n >= 2k+2, got n={n}, k={k}")
    if n > dense_threshold:
        offsets = np.r_[np.arange(1, k + 1), -np.arange(1, k + 1)]
        rows = np.repeat(np.arange(n), offsets.size)
        cols = (rows + np.tile(offsets, n)) % n
        W = sp.csr_array((np.full(rows.size, 1.0 / (2 * k)), (rows, cols)), shape=(n, n))
    else:
        first = np.zeros(n)
        first[1:k + 1] = 1.0
        first[n - k:] = 1.0
        idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
        W = first[idx] / (2.0 * k)
    return SpatialWeights(W, kind="circulant", row_normalized=True, meta={"k": k})


def build_group(labels, dense_threshold: int = DENSE_THRESHOLD) -> SpatialWeights:
    """Row-normalised same-group indicator (units never neighbour themselves)."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size < 1:
        raise WeightsError("labels must be a non-empty vector")
    W = (labels[:, None] == labels[None, :]).astype(float)
    np.fill_diagonal(W, 0.0)
    W = _row_normalize_dense(W)
    return SpatialWeights(_store(W, dense_threshold), kind="group", row_normalized=True)


def build_inverse_distance(dstar, cutoff: float,
                           dense_threshold: int = DENSE_THRESHOLD) -> SpatialWeights:
    """Row-normalised 1/d for pairs strictly inside ``cutoff``."""
    D = np.asarray(dstar, dtype=float)
    _check_distance_matrix(D)
    if cutoff <= 0:
        raise WeightsError("cutoff must be positive")
    inside = D < cutoff
    np.fill_diagonal(inside, False)
    if np.any(D[inside] == 0.0):
        i, j = np.argwhere(inside & (D == 0.0))[0]
        raise WeightsError(f"zero distance between distinct units {i} and {j} inside cutoff")
    W = np.zeros_like(D)
    W[inside] = 1.0 / D[inside]
    W = _row_normalize_dense(W)
    return SpatialWeights(_store(W, dense_threshold), kind="inverse-distance",
                          row_normalized=True, meta={"cutoff": float(cutoff)})


def _check_distance_matrix(D: np.ndarray, tol: float = 1e-12) -> None:
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise WeightsError(f"distance matrix must be square, got {D.shape}")
    if not np.all(np.isfinite(D)):
        raise WeightsError("distance matrix has non-finite entries")
    if np.any(D < 0):
        raise WeightsError("distances must be nonnegative")
    if np.max(np.abs(D - D.T), initial=0.0) > tol * max(1.0, np.max(np.abs(D), initial=0.0)):
        raise WeightsError("distance matrix is not symmetric")
    if np.any(np.diag(D) != 0):
        raise WeightsError("distance matrix must have a zero diagonal")


def _row_normalize_dense(W: np.ndarray) -> np.ndarray:
    s = W.sum(axis=1)
    nz = s != 0
    out = W.copy()
    out[nz] /= s[nz, None]
    return out


def row_normalize(W: SpatialWeights) -> SpatialWeights:
    """Scale every nonzero row to sum to one; all-zero rows stay zero."""
    if W.is_sparse:
        m = sp.csr_array(W.matrix, copy=True)
        s = np.asarray(m.sum(axis=1)).ravel()
        scale = np.where(s != 0, 1.0 / np.where(s != 0, s, 1.0), 1.0)
        m = sp.csr_array(sp.diags_array(scale) @ m)
    else:
        m = _row_normalize_dense(W.matrix)
    return SpatialWeights(m, kind=W.kind, row_normalized=True,
                          zero_diagonal=W.zero_diagonal, meta=dict(W.meta))


def spectral_norm(W) -> float:
    """Largest singular value (largest |eigenvalue| for symmetric input)."""
    A = W.matrix if isinstance(W, SpatialWeights) else W
    if sp.issparse(A):
        if A.shape[0] < 3:
            return spectral_norm(A.toarray())
        v0 = np.ones(min(A.shape)) / np.sqrt(min(A.shape))
        return float(svds(sp.csr_array(A, dtype=float), k=1, v0=v0,
                          return_singular_vectors=False)[0])
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    if np.max(np.abs(A - A.T)) <= 1e-12 * max(1.0, np.max(np.abs(A))):
        return float(np.max(np.abs(np.linalg.eigvalsh(A))))
    return float(np.linalg.norm(A, 2))


def bounded_norms(W) -> tuple[float, float]:
    """(max absolute row sum, max absolute column sum)."""
    A = W.matrix if isinstance(W, SpatialWeights) else W
    if sp.issparse(A):
        absA = abs(A)
        rows = np.asarray(absA.sum(axis=1)).ravel()
        cols = np.asarray(absA.sum(axis=0)).ravel()
    else:
        absA = np.abs(np.asarray(A, dtype=float))
        rows, cols = absA.sum(axis=1), absA.sum(axis=0)
    return float(rows.max(initial=0.0)), float(cols.max(initial=0.0))


# -- CSV round-tripping -------------------------------------------------------

def save_dense_csv(W: SpatialWeights, path) -> None:
    np.savetxt(path, W.dense(), delimiter=",", fmt="%.17g")


def load_dense_csv(path, kind: str = "custom", normalize: bool = False) -> SpatialWeights:
    try:
        A = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise WeightsError(f"{path}: cannot read a numeric matrix: {exc}") from exc
    W = SpatialWeights(A, kind=kind, zero_diagonal=bool(np.all(np.diag(A) == 0)))
    return row_normalize(W) if normalize else W


def save_triplet_csv(W: SpatialWeights, path) -> None:
    coo = sp.coo_array(W.matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, j, v in zip(coo.row, coo.col, coo.data):
            writer.writerow([int(i), int(j), repr(float(v))])


def load_triplet_csv(path, n: int, kind: str = "custom", normalize: bool = False,
                     dense_threshold: int = DENSE_THRESHOLD) -> SpatialWeights:
    rows, cols, vals = [], [], []
    with open(Path(path), newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec:
                continue
            try:
                i, j, v = int(rec[0]), int(rec[1]), float(rec[2])
            except (ValueError, IndexError) as exc:
                raise WeightsError(f"{path}:{lineno}: bad triplet {rec!r}") from exc
            if not (0 <= i < n and 0 <= j < n):
                raise WeightsError(f"{path}:{lineno}: index out of range for n={n}")
            rows.append(i)
            cols.append(j)
            vals.append(v)
    m = sp.csr_array((vals, (rows, cols)), shape=(n, n))
    mat = m if n > dense_threshold else m.toarray()
    diag = m.diagonal()
    W = SpatialWeights(mat, kind=kind, zero_diagonal=bool(np.all(diag == 0)))
    return row_normalize(W) if normalize else W
