"""Series bases for varying coefficients and varying spatial parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

FAMILIES = ("polynomial", "trigonometric", "lambda-polynomial", "lambda-trigonometric", "constant")


class BasisError(DataError):
    pass


@dataclass(frozen=True)
class BasisSpec:
    """A basis family and its number of columns ``order``."""

    family: str
    order: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise BasisError(f"unknown basis family {self.family!r}")
        if int(self.order) != self.order or self.order < 1:
            raise BasisError(f"basis order must be a positive integer, got {self.order!r}")
        if self.family == "trigonometric" and self.order % 2:
            raise BasisError("trigonometric basis needs an even order")
        if self.family == "constant" and self.order != 1:
            raise BasisError("constant basis has order 1")

    @classmethod
    def parse(cls, text: str) -> "BasisSpec":
        """Parse ``"polynomial:4"`` style strings used in config files."""
        try:
            family, order = text.split(":")
            return cls(family.strip(), int(order))
        except ValueError as exc:
            raise BasisError(f"cannot parse basis spec {text!r}; expected family:order") from exc

    def __str__(self) -> str:
        return f"{self.family}:{self.order}"


def _as_array(z):
    return np.asarray(z, dtype=float)


def eval_regression_basis(spec: BasisSpec, z):
    """Evaluate a regression-coefficient basis.

    Returns shape ``(h,)`` for scalar ``z`` and ``(len(z), h)`` for a vector.
    polynomial: z, z^2, ..., z^h.
    trigonometric: sin z, cos z, sin 2z, cos 2z, ..., sin(h/2 z), cos(h/2 z).
    """
    z = _as_array(z)
    zc = z[..., None]
    h = spec.order
    if spec.family == "polynomial":
        return zc ** np.arange(1, h + 1)
    if spec.family == "trigonometric":
        k = np.arange(1, h // 2 + 1)
        out = np.empty(z.shape + (h,))
        out[..., 0::2] = np.sin(k * zc)
        out[..., 1::2] = np.cos(k * zc)
        return out
    if spec.family == "constant":
        return np.ones(z.shape + (1,))
    if spec.family.startswith("lambda-"):
        return eval_lambda_basis(spec, z)
    raise BasisError(f"unsupported family {spec.family!r}")


def eval_lambda_basis(spec: BasisSpec, z):
    """Evaluate a basis for a varying spatial parameter.

    lambda-polynomial: (1/h) ((2/pi) tanh z)^m, m = 1..h.
    lambda-trigonometric: (1/h) sin(z / (2m)), m = 1..h.
    """
    z = _as_array(z)
    zc = z[..., None]
    h = spec.order
    m = np.arange(1, h + 1)
    if spec.family == "lambda-polynomial":
        return ((2.0 / np.pi) * np.tanh(zc)) ** m / h
    if spec.family == "lambda-trigonometric":
        return np.sin(zc / (2.0 * m)) / h
    if spec.family == "constant":
        return np.ones(z.shape + (1,))
    if spec.family in ("polynomial", "trigonometric"):
        return eval_regression_basis(spec, z)
    raise BasisError(f"unsupported family {spec.family!r}")


@dataclass(frozen=True)
class BasisMatrix:
    """Stacked varying-coefficient regressors and their column layout.

    ``block_layout[k] = (k, h_k)``; columns of block k are contiguous and in
    the order of ``specs``.
    """

    values: np.ndarray
    block_layout: tuple
    specs: tuple

    @property
    def d_alpha(self) -> int:
        return self.values.shape[1]

    def block_slice(self, k: int) -> slice:
        if not 0 <= k < len(self.block_layout):
            raise BasisError(f"no varying block {k}; have {len(self.block_layout)}")
        start = sum(h for _, h in self.block_layout[:k])
        return slice(start, start + self.block_layout[k][1])


def build_psi(P, Z, specs, standardize: bool = False) -> BasisMatrix:
    """Row i is (p_i1 psi_1(z_i)', ..., p_id psi_d(z_i)').

    ``standardize`` rescales each column to unit root-mean-square; it is off
    by default and should stay off when reproducing published tables.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    Z = np.asarray(Z, dtype=float).ravel()
    specs = tuple(specs)
    if P.shape[0] != Z.shape[0]:
        raise BasisError(f"P has {P.shape[0]} rows but z has {Z.shape[0]}")
    if len(specs) != P.shape[1]:
        raise BasisError(f"need one basis spec per column of P ({P.shape[1]}), got {len(specs)}")
    blocks = [P[:, [k]] * eval_regression_basis(s, Z) for k, s in enumerate(specs)]
    values = np.hstack(blocks) if blocks else np.empty((Z.size, 0))
    if standardize:
        rms = np.sqrt(np.mean(values ** 2, axis=0))
        values = values / np.where(rms > 0, rms, 1.0)
    layout = tuple((k, s.order) for k, s in enumerate(specs))
    return BasisMatrix(values, layout, specs)
