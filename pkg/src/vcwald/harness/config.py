"""Flat key-value experiment configuration read from YAML.

Every key maps to a scalar or a list of scalars; nested mappings are
rejected so that a config file stays a declarative list of settings.
"""

from __future__ import annotations

from pathlib import Path

import yaml

from ..basis import BasisSpec
from ..dgp import DgpConfig
from ..errors import ConfigError, DataError
from ..shac import DEFAULT_ETA, KernelSpec
from ..wald import TestSpec
from .data import CsvSchema
from .experiment import ExperimentPlan

# key -> short description; the CLI prints this table with --help-config
KEYS = {
    # experiment grid (mc-table) and simulation (simulate / test without data)
    "tests": "test ids for mc-table: W0 W1 W2 W3 W4-alpha W4-mu",
    "n": "sample size(s)",
    "d_lambda": "spatial order(s) of the outcome equation",
    "h": "series order(s) of the varying-coefficient basis",
    "error": "error law(s): V1 V2 V3",
    "basis": "basis family for the grid: polynomial or trigonometric",
    "alternative": "generate under delta(z) = 1 - z^2 instead of delta = 0",
    "d_tau": "distance-series order(s) for W3",
    "replications": "Monte Carlo replications",
    "levels": "nominal test levels",
    "seed": "unsigned 64-bit seed",
    "eta": "bandwidth exponent for the neighbour rule",
    "v2_scale": "unit-variance or paper-literal scaling of V2",
    "lambda_mode": "simulate: fixed, varying-1, varying-2 or none",
    "error_structure": "simulate: iid or sar-dependent",
    "M": "simulate: number of noisy distance measures",
    "spatial": "simulate: circulant or nonparametric",
    # data ingestion (test / curve)
    "data": "input CSV path, relative to the config file",
    "outcome": "outcome column",
    "z": "index column",
    "p": "column(s) with varying coefficients",
    "x": "exogenous column(s)",
    "group": "group label column for same-group weights",
    "coords": "coordinate columns for Euclidean distances",
    "add_constant": "prepend a constant to X",
    "ell": "neighbour count for the SHAC bandwidth",
    "weights": "dense CSV weight matrix file(s), row-normalized on load",
    "distances": "dense CSV distance matrix file(s) for SHAC and W3",
    # test specification
    "test": "test id for the test and curve commands",
    "basis_spec": "family:order per varying column, e.g. polynomial:2",
    "phi": "family:order of the varying spatial basis (W4)",
    "instruments": "instrument kind: k1 k1-mc k2 k2-mc k3-interacted regressors",
    "variance": "unit or estimated error variance in the plain statistic",
    "kernel": "epanechnikov-unnormalized or bartlett",
    "component": "restrict the alpha target to one coefficient function",
    "crs": "apply the returns-to-scale reparameterization (needs two p columns)",
    "clip": "clip negative eigenvalues of the SHAC estimate",
    # clt probe and curves
    "J": "rank of the projector in the CLT probe",
    "clt_n": "dimension of the CLT probe vector",
    "law": "error law of the CLT probe",
    "grid_points": "number of z grid points for curve output",
    "level": "coverage of pointwise curve bands",
}


def load_config(path) -> dict:
    """Parse and validate a config file; returns {} for an empty file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    cfg = {} if cfg is None else cfg
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: expected a key-value mapping")
    for k, v in cfg.items():
        if k not in KEYS:
            raise ConfigError(f"{path}: unknown key {k!r}")
        items = v if isinstance(v, list) else [v]
        if any(isinstance(i, (dict, list)) for i in items):
            raise ConfigError(f"{path}: key {k!r} must be a scalar or a list of scalars")
    cfg["_dir"] = str(path.parent)
    return cfg


def _scalar(cfg, key, default=None):
    v = cfg.get(key, default)
    if isinstance(v, list):
        if len(v) != 1:
            raise ConfigError(f"key {key!r} takes a single value here, got {v}")
        v = v[0]
    return v


def _list(cfg, key, default):
    v = cfg.get(key, default)
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


def _typed(fn, value, key):
    try:
        return fn(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc


def plan_from_config(cfg: dict, *, seed=None, reps=None) -> ExperimentPlan:
    try:
        return ExperimentPlan.from_axes(
            tests=_list(cfg, "tests", ("W1",)),
            n=tuple(_typed(int, v, "n") for v in _list(cfg, "n", (200,))),
            d_lambda=tuple(_typed(int, v, "d_lambda") for v in _list(cfg, "d_lambda", (2,))),
            h=tuple(_typed(int, v, "h") for v in _list(cfg, "h", (2,))),
            error=_list(cfg, "error", ("V1",)),
            basis=_list(cfg, "basis", ("polynomial",)),
            alternative=bool(_scalar(cfg, "alternative", False)),
            d_tau=tuple(_typed(int, v, "d_tau") for v in _list(cfg, "d_tau", (2,))),
            replications=_typed(int, reps if reps is not None else _scalar(cfg, "replications", 1000),
                                "replications"),
            levels=tuple(_typed(float, v, "levels") for v in _list(cfg, "levels", (0.01, 0.05, 0.10))),
            seed=_typed(int, seed if seed is not None else _scalar(cfg, "seed", 0), "seed"),
            eta=_typed(float, _scalar(cfg, "eta", DEFAULT_ETA), "eta"),
            v2_scale=_scalar(cfg, "v2_scale", "unit-variance"),
        )
    except DataError as exc:
        raise ConfigError(str(exc)) from exc


def dgp_from_config(cfg: dict, *, seed=None) -> DgpConfig:
    tid = _scalar(cfg, "test", "W1")
    shac = tid in ("W2", "W3", "W4-alpha", "W4-mu")
    dl = _typed(int, _scalar(cfg, "d_lambda", 2), "d_lambda")
    return DgpConfig(
        n=_typed(int, _scalar(cfg, "n", 200), "n"),
        d_lambda=dl,
        lambda_mode=_scalar(cfg, "lambda_mode", "fixed"),
        error_dist=_scalar(cfg, "error", "V1"),
        error_structure=_scalar(cfg, "error_structure", "sar-dependent" if shac else "iid"),
        alternative=bool(_scalar(cfg, "alternative", False)),
        M=_typed(int, _scalar(cfg, "M", dl if shac else 0), "M"),
        eta=_typed(float, _scalar(cfg, "eta", DEFAULT_ETA), "eta"),
        seed=_typed(int, seed if seed is not None else _scalar(cfg, "seed", 0), "seed"),
        v2_scale=_scalar(cfg, "v2_scale", "unit-variance"),
        spatial=_scalar(cfg, "spatial", "nonparametric" if tid == "W3" else "circulant"),
    )


def schema_from_config(cfg: dict) -> CsvSchema:
    if "outcome" not in cfg or "z" not in cfg:
        raise ConfigError("data configs need 'outcome' and 'z' keys")
    return CsvSchema(outcome=_scalar(cfg, "outcome"), z=_scalar(cfg, "z"),
                     p=_list(cfg, "p", ()), x=_list(cfg, "x", ()),
                     group=_scalar(cfg, "group"), coords=_list(cfg, "coords", ()),
                     add_constant=bool(_scalar(cfg, "add_constant", True)))


def spec_from_config(cfg: dict, n_varying: int, *, default_variance: str = "unit") -> TestSpec:
    tid = _scalar(cfg, "test", "W1")
    specs = _list(cfg, "basis_spec", ())
    try:
        if not specs:
            h = _typed(int, _scalar(cfg, "h", 2), "h")
            fam = _scalar(cfg, "basis", "polynomial")
            basis = tuple(BasisSpec(fam, h) for _ in range(n_varying))
        else:
            basis = tuple(BasisSpec.parse(str(s)) for s in specs)
            if len(basis) == 1 and n_varying > 1:
                basis = basis * n_varying
        phi = _scalar(cfg, "phi")
        if phi is None and tid.startswith("W4"):
            fam = {"polynomial": "lambda-polynomial", "trigonometric": "lambda-trigonometric"}
            phi = f"{fam[basis[0].family] if basis[0].family in fam else 'lambda-polynomial'}:{basis[0].order}"
        comp = _scalar(cfg, "component")
        return TestSpec(
            tid, basis=basis, phi=BasisSpec.parse(str(phi)) if phi is not None else None,
            instruments=_scalar(cfg, "instruments"),
            variance=_scalar(cfg, "variance", default_variance),
            kernel=KernelSpec(_scalar(cfg, "kernel", "epanechnikov-unnormalized")),
            d_tau=_typed(int, _scalar(cfg, "d_tau", 2), "d_tau"),
            component=None if comp is None else _typed(int, comp, "component"),
            clip=bool(_scalar(cfg, "clip", False)))
    except DataError as exc:
        raise ConfigError(str(exc)) from exc


def _resolve(cfg: dict, value) -> Path:
    p = Path(str(value))
    return p if p.is_absolute() else Path(cfg.get("_dir", ".")) / p


def data_path(cfg: dict) -> Path | None:
    d = _scalar(cfg, "data")
    return None if d is None else _resolve(cfg, d)


def matrix_paths(cfg: dict, key: str) -> tuple:
    """Resolved file paths listed under ``weights`` or ``distances``."""
    return tuple(_resolve(cfg, v) for v in _list(cfg, key, ()) if v is not None)
