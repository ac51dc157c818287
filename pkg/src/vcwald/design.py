"""Regressor and instrument matrices for the four model families.

Column order is always: spatial block (W_j y, the distance-series block, or
H(z)), then the exogenous regressors X, then the varying-coefficient block Psi.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .basis import BasisMatrix, BasisSpec, eval_lambda_basis
from .weights import SpatialWeights

BLOCK_NAMES = ("spatial", "exogenous", "varying")

INSTRUMENT_KINDS = ("k1", "k1-mc", "k2", "k2-mc", "k3-interacted", "regressors")


class DesignError(DataError):
    pass


@dataclass(frozen=True)
class Selector:
    """Picks a contiguous coefficient block out of a length-``total`` vector."""

    offset: int
    width: int
    total: int

    def __post_init__(self):
        if self.width < 1 or self.offset < 0 or self.offset + self.width > self.total:
            raise DesignError(f"bad selector {self}")

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.width)

    def matrix(self) -> np.ndarray:
        """The explicit restriction matrix R = [0, I, 0]."""
        R = np.zeros((self.width, self.total))
        R[:, self.slice] = np.eye(self.width)
        return R

    def vector(self, v) -> np.ndarray:
        return np.asarray(v)[self.slice]

    def submatrix(self, A) -> np.ndarray:
        return np.asarray(A)[self.slice, self.slice]


@dataclass(frozen=True)
class DesignBundle:
    regressors: np.ndarray
    blocks: tuple
    instruments: np.ndarray | None = None
    restriction_target: str = "varying"
    basis: BasisMatrix | None = None
    phi_spec: BasisSpec | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        width = sum(w for _, w in self.blocks)
        if width != self.regressors.shape[1]:
            raise DesignError(f"block widths sum to {width} but regressors have "
                              f"{self.regressors.shape[1]} columns")
        if self.instruments is not None:
            _check_order(self.instruments, self.regressors)

    @property
    def n(self) -> int:
        return self.regressors.shape[0]

    @property
    def d(self) -> int:
        return self.regressors.shape[1]

    def block_width(self, name: str) -> int:
        for b, w in self.blocks:
            if b == name:
                return w
        return 0

    def with_instruments(self, K) -> "DesignBundle":
        K = np.asarray(K, dtype=float)
        if K.shape[0] != self.n:
            raise DesignError(f"instruments have {K.shape[0]} rows, regressors {self.n}")
        return replace(self, instruments=K)


def _check_order(K, M):
    if K.shape[1] < M.shape[1]:
        raise DesignError(f"under-identified: J={K.shape[1]} instruments for "
                          f"d={M.shape[1]} regressors")


def _as_2d(X, n, name):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != n:
        raise DesignError(f"{name} has {X.shape[0]} rows, expected {n}")
    return X


def _w_times(W, v):
    if isinstance(W, SpatialWeights):
        if W.n != v.shape[0]:
            raise DesignError(f"weight matrix is {W.n}x{W.n} but data have n={v.shape[0]}")
        return np.asarray(W.matrix @ v)
    W = np.asarray(W)
    if W.shape != (v.shape[0], v.shape[0]):
        raise DesignError(f"weight matrix shape {W.shape} does not match n={v.shape[0]}")
    return W @ v


def _assemble(spatial, X, Psi: BasisMatrix | None, n):
    X = _as_2d(X, n, "X") if X is not None else np.empty((n, 0))
    psi = Psi.values if Psi is not None else np.empty((n, 0))
    if psi.shape[0] != n:
        raise DesignError(f"Psi has {psi.shape[0]} rows, expected {n}")
    blocks = []
    for name, part in (("spatial", spatial), ("exogenous", X), ("varying", psi)):
        if part.shape[1]:
            blocks.append((name, part.shape[1]))
    return np.hstack([spatial, X, psi]), tuple(blocks)


def build_sar_design(y, Ws, X, Psi: BasisMatrix | None) -> DesignBundle:
    """Regressors [W_1 y, ..., W_dl y, X, Psi]."""
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    Q = np.column_stack([_w_times(W, y) for W in Ws]) if Ws else np.empty((n, 0))
    M, blocks = _assemble(Q, X, Psi, n)
    return DesignBundle(M, blocks, basis=Psi, meta={"model": "sar", "d_lambda": len(Ws)})


def distance_power_matrix(dstar, cutoff: float, power: int) -> np.ndarray:
    """Matrix with (i, j) entry d_ij^power * 1(d_ij < cutoff), zero diagonal.

    This is the single evaluation of the distance series terms, shared by the
    nonparametric design and its instruments.
    """
    D = np.asarray(dstar, dtype=float)
    E = np.where(D < cutoff, D ** power, 0.0)
    np.fill_diagonal(E, 0.0)
    return E


def build_np_design(y, dstar, cutoff: float, d_tau: int, X, Psi: BasisMatrix | None) -> DesignBundle:
    """Regressors [C, X, Psi] with c_il = sum_{j != i} e_l(d_ij) y_j."""
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    D = np.asarray(dstar, dtype=float)
    if D.shape != (n, n):
        raise DesignError(f"distance matrix shape {D.shape} does not match n={n}")
    if d_tau < 1:
        raise DesignError("d_tau must be >= 1")
    C = np.column_stack([distance_power_matrix(D, cutoff, l) @ y for l in range(1, d_tau + 1)])
    M, blocks = _assemble(C, X, Psi, n)
    return DesignBundle(M, blocks, basis=Psi,
                        meta={"model": "np", "d_tau": d_tau, "cutoff": float(cutoff)})


def build_vc_design(y, Ws, Z, phi_spec: BasisSpec, X, Psi: BasisMatrix | None) -> DesignBundle:
    """Regressors [H(z), X, Psi]; H columns grouped by weight matrix j, then basis term m."""
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    Z = np.asarray(Z, dtype=float).ravel()
    if Z.size != n:
        raise DesignError(f"z has {Z.size} entries, expected {n}")
    if not Ws:
        raise DesignError("varying spatial design needs at least one weight matrix")
    phi = eval_lambda_basis(phi_spec, Z)
    H = np.hstack([_w_times(W, y)[:, None] * phi for W in Ws])
    M, blocks = _assemble(H, X, Psi, n)
    return DesignBundle(M, blocks, basis=Psi, phi_spec=phi_spec,
                        meta={"model": "vc", "d_lambda": len(Ws)})


def build_instruments(kind: str, X, Psi: BasisMatrix | None, Ws=None, *, dstar=None,
                      cutoff: float | None = None, d_tau: int | None = None, Z=None,
                      phi_spec: BasisSpec | None = None, regressors=None) -> np.ndarray:
    """Instrument matrix of the requested ``kind``.

    k1            [X, Psi, W_1 X, ..., W_dl X]
    k1-mc         [X, W_1 X, ..., W_dl X, Psi]
    k2            [X, Psi, E_1 X, ..., E_dtau X]
    k2-mc         [X, E_1 X, ..., E_dtau X, Psi]
    k3-interacted [X, W_1 X, ..., W_dl X, Psi, phi_m(z) * W_j X for all j, m]
    regressors    the regressor matrix itself (ordinary least squares)
    """
    if kind not in INSTRUMENT_KINDS:
        raise DesignError(f"unknown instrument kind {kind!r}")
    if kind == "regressors":
        if regressors is None:
            raise DesignError("kind 'regressors' needs the regressor matrix")
        return np.asarray(regressors, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    psi = Psi.values if Psi is not None else np.empty((n, 0))
    if psi.shape[0] != n:
        raise DesignError(f"Psi has {psi.shape[0]} rows, expected {n}")

    if kind in ("k2", "k2-mc"):
        if dstar is None or cutoff is None or not d_tau:
            raise DesignError("distance instruments need dstar, cutoff and d_tau")
        lagged = [distance_power_matrix(dstar, cutoff, l) @ X for l in range(1, d_tau + 1)]
    else:
        if not Ws:
            raise DesignError(f"instrument kind {kind!r} needs weight matrices")
        lagged = [_w_times(W, X) for W in Ws]

    if kind in ("k1", "k2"):
        return np.hstack([X, psi, *lagged])
    if kind in ("k1-mc", "k2-mc"):
        return np.hstack([X, *lagged, psi])
    # k3-interacted
    if Z is None or phi_spec is None:
        raise DesignError("interacted instruments need z and the phi basis")
    phi = eval_lambda_basis(phi_spec, np.asarray(Z, dtype=float).ravel())
    inter = [WX[:, :, None] * phi[:, None, :] for WX in lagged]
    inter = [a.reshape(n, -1) for a in inter]
    return np.hstack([X, *lagged, psi, *inter])


def selector(bundle: DesignBundle, target: str, component: int | None = None) -> Selector:
    """Selector for block ``target``; ``component`` narrows the varying block to
    the coefficient function with that index."""
    offset = 0
    for name, width in bundle.blocks:
        if name == target:
            if component is None:
                return Selector(offset, width, bundle.d)
            if name != "varying" or bundle.basis is None:
                raise DesignError("component selection only applies to the varying block")
            sl = bundle.basis.block_slice(component)
            return Selector(offset + sl.start, sl.stop - sl.start, bundle.d)
        offset += width
    raise DesignError(f"design has no {target!r} block; blocks are {bundle.blocks}")
