"""CSV ingestion and the constant-returns-to-scale reparameterization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform

from ..dgp import Dataset, factor_operator
from ..errors import DataError
from ..shac import DEFAULT_ETA, DistanceSet
from ..weights import build_group, load_dense_csv

NA_TOKENS = frozenset({"", "na", "nan", "null", "none", "."})


class SchemaError(DataError):
    """A column named in the schema is absent from the file."""


@dataclass(frozen=True)
class CsvSchema:
    """Which CSV column plays which role.

    ``p`` lists the regressors with varying coefficients and ``x`` the
    exogenous regressors; a constant is prepended to X unless
    ``add_constant`` is false.  ``group`` builds a same-group weight matrix
    and ``coords`` Euclidean distances for SHAC.
    """

    outcome: str
    z: str
    p: tuple = ()
    x: tuple = ()
    group: str | None = None
    coords: tuple = ()
    add_constant: bool = True

    def __post_init__(self):
        for name in ("p", "x", "coords"):
            v = getattr(self, name)
            object.__setattr__(self, name, (v,) if isinstance(v, str) else tuple(v))
        if not self.outcome or not self.z:
            raise SchemaError("schema needs an outcome and a z column")

    @property
    def numeric_columns(self) -> tuple:
        return (self.outcome, self.z, *self.p, *self.x, *self.coords)

    @property
    def columns(self) -> tuple:
        return self.numeric_columns + ((self.group,) if self.group else ())


def _parse_float(text: str, path, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{path}: row {line}, column {column!r}: "
                        f"cannot parse {text!r} as a number") from None
    if math.isinf(v):
        raise DataError(f"{path}: row {line}, column {column!r}: infinite value")
    return v


def load_csv(path, schema: CsvSchema, *, ell: int | None = None,
             eta: float = DEFAULT_ETA) -> Dataset:
    """Read a header-row, comma-separated UTF-8 file into a :class:`Dataset`.

    Rows with a missing value in any schema column are dropped; the count is
    in ``dataset.meta["dropped_na"]``.  Row numbers in error messages are
    file line numbers (the header is line 1).
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(map(repr, missing))}")
        values, labels, dropped = [], [], 0
        for line, rec in enumerate(reader, start=2):
            cells = {c: (rec.get(c) or "").strip() for c in schema.columns}
            if any(v.lower() in NA_TOKENS for v in cells.values()):
                dropped += 1
                continue
            row = []
            for c in schema.numeric_columns:
                v = _parse_float(cells[c], path, line, c)
                if math.isnan(v):
                    break
                row.append(v)
            else:
                values.append(row)
                if schema.group:
                    labels.append(cells[schema.group])
                continue
            dropped += 1
    if not values:
        raise DataError(f"{path}: no complete rows")
    A = np.array(values, dtype=float)
    n = A.shape[0]
    col = {c: A[:, i] for i, c in enumerate(schema.numeric_columns)}
    X = np.column_stack([col[c] for c in schema.x]) if schema.x else np.empty((n, 0))
    if schema.add_constant:
        X = np.column_stack([np.ones(n), X])
    P = np.column_stack([col[c] for c in schema.p]) if schema.p else np.empty((n, 0))
    weights = (build_group(np.array(labels)),) if schema.group else ()
    distances = None
    if schema.coords:
        D = squareform(pdist(np.column_stack([col[c] for c in schema.coords])))
        distances = DistanceSet.from_rule([D], ell=ell, eta=eta)
    meta = {"path": str(path), "dropped_na": dropped, "n": n,
            "p_columns": list(schema.p), "x_columns": list(schema.x)}
    return Dataset(y=col[schema.outcome], X=X, P=P, Z=col[schema.z], weights=weights,
                   distances=distances, meta=meta)


def save_csv(ds: Dataset, path, schema: CsvSchema, labels=None, coords=None) -> None:
    """Write ``ds`` under ``schema``'s column names (inverse of :func:`load_csv`)."""
    n = ds.n
    cols = {schema.outcome: ds.y, schema.z: ds.Z}
    P = np.asarray(ds.P).reshape(n, -1)
    for j, c in enumerate(schema.p):
        cols[c] = P[:, j]
    X = np.asarray(ds.X).reshape(n, -1)
    offset = 1 if schema.add_constant else 0
    for j, c in enumerate(schema.x):
        cols[c] = X[:, j + offset]
    if schema.coords:
        if coords is None:
            raise DataError("schema has coordinate columns but no coordinates were given")
        for j, c in enumerate(schema.coords):
            cols[c] = np.asarray(coords)[:, j]
    names = list(cols)
    if schema.group:
        if labels is None:
            raise DataError("schema has a group column but no labels were given")
        names.append(schema.group)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for i in range(n):
                row = [repr(float(cols[c][i])) for c in cols]
                if schema.group:
                    row.append(str(labels[i]))
                w.writerow(row)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from exc


def crs_transform(ds: Dataset, p1: int = 0, p2: int = 1) -> Dataset:
    """y* = y - p1 and varying regressors (1, p2 - p1, p1).

    The coefficient on p1 becomes theta(z) = delta1 + delta2 - 1, so constant
    returns to scale is the hypothesis that varying component 2 is zero.
    """
    P = np.asarray(ds.P, dtype=float)
    if P.ndim != 2 or P.shape[1] <= max(p1, p2):
        raise DataError("CRS transform needs the two input columns p1 and p2")
    a, b = P[:, p1], P[:, p2]
    Pn = np.column_stack([np.ones(ds.n), b - a, a])
    meta = {**ds.meta, "crs": True}
    return replace(ds, y=ds.y - a, P=Pn, meta=meta)


def crs_curves(theta, delta2):
    """(delta1, delta2, sum) from the transformed coefficient functions."""
    theta = np.asarray(theta, dtype=float)
    delta2 = np.asarray(delta2, dtype=float)
    return theta - delta2 + 1.0, delta2, theta + 1.0


def make_crs_fixture(n: int, rng: np.random.Generator, violate: bool = False,
                     groups: int = 10, lam: float = 0.3) -> tuple:
    """Synthetic production data shaped like a firm-level CRS application.

    Returns (dataset, labels, coords).  Under CRS delta2 = 0.8 z - 0.3 z^2 and
    delta1 = 1 - delta2, so after :func:`crs_transform` the model is exactly
    representable in a polynomial basis of order 2.  The violation uses
    delta1 = 1 - z^2, delta2 = 1 + z^2.
    Outcomes follow a same-group spatial autoregression with coefficient lam.
    """
    z = rng.random(n)
    p1 = rng.normal(1.0, 1.0, n)
    p2 = rng.normal(1.0, 1.0, n)
    x1 = rng.normal(0.0, 1.0, n)
    labels = np.array([f"c{k:02d}" for k in rng.integers(0, groups, n)])
    coords = rng.random((n, 2)) * 10.0
    if violate:
        d1, d2 = 1.0 - z ** 2, 1.0 + z ** 2
    else:
        d2 = 0.8 * z - 0.3 * z ** 2
        d1 = 1.0 - d2
    eps = 0.3 * rng.standard_normal(n)
    W = build_group(labels)
    rhs = 0.5 + 0.5 * x1 + d1 * p1 + d2 * p2 + eps
    y = factor_operator(np.eye(n) - lam * W.dense()).solve(rhs)
    ds = Dataset(y=y, X=np.column_stack([np.ones(n), x1]), P=np.column_stack([p1, p2]),
                 Z=z, weights=(W,), truth={"violate": violate, "lambda": lam})
    return ds, labels, coords


def attach_matrices(ds: Dataset, weights=(), distances=(), *, ell: int | None = None,
                    eta: float = DEFAULT_ETA) -> Dataset:
    """Add weight matrices and distance measures read from dense CSV files.

    Weight matrices are row-normalized on load.  Distance thresholds follow
    the nearest-neighbour rule.  The matrices index the rows kept after NA
    removal, so files cannot be combined with a dataset that dropped rows.
    """
    if not weights and not distances:
        return ds
    if ds.meta.get("dropped_na"):
        raise DataError("matrix files cannot be aligned after rows with missing values "
                        "were dropped")
    Ws = tuple(load_dense_csv(p, normalize=True) for p in weights)
    dist = ds.distances
    if distances:
        measures = []
        for p in distances:
            try:
                measures.append(np.loadtxt(p, delimiter=",", ndmin=2))
            except (OSError, ValueError) as exc:
                raise DataError(f"{p}: cannot read a numeric matrix: {exc}") from exc
        for p, D in zip(distances, measures):
            if D.shape != (ds.n, ds.n):
                raise DataError(f"{p}: distance matrix is {D.shape}, data have n={ds.n}")
        dist = DistanceSet.from_rule(measures, ell=ell, eta=eta)
    return replace(ds, weights=tuple(ds.weights) + Ws, distances=dist)
