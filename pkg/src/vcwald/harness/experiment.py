"""Monte Carlo size and power experiments.

Replication r of grid point g draws from
``default_rng(SeedSequence(seed, spawn_key=(g, r)))``, so every number in a
table depends only on (plan, seed) and not on how replications are split
across worker processes.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ..basis import BasisSpec
from ..dgp import DgpConfig, generate
from ..errors import ConfigError, VcwaldError
from ..wald import TEST_IDS, TestSpec, run_test

FAILURE_SHARE = 0.01
BASIS_FAMILIES = ("polynomial", "trigonometric")
PHI_FAMILY = {"polynomial": "lambda-polynomial", "trigonometric": "lambda-trigonometric"}


@dataclass(frozen=True)
class GridPoint:
    """One cell of an experiment.

    ``d_lambda`` is the spatial order of the outcome equation and the number
    of distance measures; ``d_tau`` is the distance-series order for W3.
    """

    test_id: str = "W1"
    n: int = 200
    d_lambda: int = 2
    h: int = 2
    error_dist: str = "V1"
    basis: str = "polynomial"
    alternative: bool = False
    d_tau: int = 2
    component: int | None = None

    def __post_init__(self):
        if self.test_id not in TEST_IDS:
            raise ConfigError(f"unknown test id {self.test_id!r}")
        if self.basis not in BASIS_FAMILIES:
            raise ConfigError(f"basis must be one of {BASIS_FAMILIES}")
        if self.test_id.startswith("W4") and self.d_lambda not in (1, 2):
            raise ConfigError("varying-lambda designs exist for d_lambda 1 and 2")

    @property
    def target(self) -> str:
        return "mu" if self.test_id == "W4-mu" else "alpha"

    def dgp_config(self, eta: float, v2_scale: str) -> DgpConfig:
        tid = self.test_id
        lambda_mode = "fixed"
        if tid == "W4-alpha":
            lambda_mode = f"varying-{self.d_lambda}"
        elif tid == "W4-mu":
            lambda_mode = "none"
        shac = tid in ("W2", "W3", "W4-alpha", "W4-mu")
        return DgpConfig(n=self.n, d_lambda=self.d_lambda, lambda_mode=lambda_mode,
                         error_dist=self.error_dist,
                         error_structure="sar-dependent" if shac else "iid",
                         alternative=self.alternative, M=self.d_lambda if shac else 0,
                         eta=eta, v2_scale=v2_scale,
                         spatial="nonparametric" if tid == "W3" else "circulant")

    def test_spec(self) -> TestSpec:
        phi = None
        if self.test_id.startswith("W4"):
            phi = BasisSpec(PHI_FAMILY[self.basis], self.h)
        return TestSpec(self.test_id, basis=(BasisSpec(self.basis, self.h),), phi=phi,
                        d_tau=self.d_tau, component=self.component)


@dataclass(frozen=True)
class ExperimentPlan:
    grid: tuple
    replications: int = 1000
    levels: tuple = (0.01, 0.05, 0.10)
    seed: int = 0
    eta: float = 3.0 / 7.0
    v2_scale: str = "unit-variance"

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "levels", tuple(float(a) for a in self.levels))
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not self.grid:
            raise ConfigError("experiment grid is empty")
        lv = self.levels
        if not lv or any(not 0 < a < 1 for a in lv) or any(b <= a for a, b in zip(lv, lv[1:])):
            raise ConfigError("levels must lie in (0, 1) and increase")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for g in self.grid:
            g.dgp_config(self.eta, self.v2_scale)
            g.test_spec()

    @classmethod
    def from_axes(cls, *, tests=("W1",), n=(200,), d_lambda=(2,), h=(2,), error=("V1",),
                  basis=("polynomial",), alternative=False, d_tau=(2,), **kw) -> "ExperimentPlan":
        """Cartesian product of the axes, in the order test, d_lambda, h, error,
        basis, d_tau, n."""
        grid = [GridPoint(t, nn, dl, hh, e, b, bool(alternative), dt)
                for t, dl, hh, e, b, dt, nn in itertools.product(
                    _seq(tests), _seq(d_lambda), _seq(h), _seq(error), _seq(basis),
                    _seq(d_tau), _seq(n))]
        return cls(tuple(grid), **kw)


def _seq(v):
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


@dataclass(frozen=True)
class RowResult:
    point: GridPoint
    reps: int
    failures: int
    asy_rates: tuple
    chi_rates: tuple
    asy_se: tuple
    chi_se: tuple
    stat_mean: float
    stat_var: float
    quad_over_d: float
    first_error: str = ""

    @property
    def failed(self) -> bool:
        return self.failures > FAILURE_SHARE * (self.reps + self.failures)


@dataclass(frozen=True)
class RejectionTable:
    plan: ExperimentPlan
    rows: tuple
    statistics: tuple = field(default=(), repr=False, compare=False)

    def row(self, **match) -> RowResult:
        for r in self.rows:
            if all(getattr(r.point, k) == v for k, v in match.items()):
                return r
        raise KeyError(match)


def mc_se(rate: float, reps: int) -> float:
    """sqrt(r (1 - r) / reps)."""
    return math.sqrt(rate * (1.0 - rate) / reps) if reps else float("nan")


def replication_rng(seed: int, grid_idx: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(grid_idx, rep)))


def _run_block(point: GridPoint, eta: float, v2_scale: str, seed: int, grid_idx: int,
               reps: range):
    """Replications ``reps`` of one grid point -> (stats, quad, d, asy, chi, errors)."""
    cfg = point.dgp_config(eta, v2_scale)
    spec = point.test_spec()
    out = np.full((len(reps), 5), np.nan)
    errors = []
    # collinear-instrument warnings repeat every replication; keep them quiet
    pkg_log = logging.getLogger("vcwald")
    level = pkg_log.level
    pkg_log.setLevel(logging.ERROR)
    try:
        _replicate(cfg, spec, seed, grid_idx, reps, out, errors)
    finally:
        pkg_log.setLevel(level)
    return out, errors


def _replicate(cfg, spec, seed, grid_idx, reps, out, errors):
    with threadpool_limits(1):
        for k, r in enumerate(reps):
            try:
                rep = run_test(spec.test_id, generate(cfg, replication_rng(seed, grid_idx, r)), spec)
                out[k] = (rep.statistic, rep.quad_form, rep.block_dim, rep.asy_p, rep.chi_p)
            except (VcwaldError, np.linalg.LinAlgError) as exc:
                errors.append(f"rep {r}: {exc}")


def _summarize(point, levels, block, errors) -> tuple[RowResult, np.ndarray]:
    ok = block[~np.isnan(block[:, 0])]
    reps = ok.shape[0]
    if reps:
        asy = tuple(float(np.mean(ok[:, 3] < a)) for a in levels)
        chi = tuple(float(np.mean(ok[:, 4] < a)) for a in levels)
        stat_mean = float(ok[:, 0].mean())
        stat_var = float(ok[:, 0].var(ddof=1)) if reps > 1 else float("nan")
        qd = float(np.mean(ok[:, 1] / ok[:, 2]))
    else:
        asy = chi = tuple(float("nan") for _ in levels)
        stat_mean = stat_var = qd = float("nan")
    row = RowResult(point, reps, len(errors), asy, chi,
                    tuple(mc_se(r, reps) for r in asy), tuple(mc_se(r, reps) for r in chi),
                    stat_mean, stat_var, qd, errors[0] if errors else "")
    return row, ok[:, 0].copy()


def _blocks(reps: int, size: int):
    return [range(s, min(s + size, reps)) for s in range(0, reps, size)]


def run_size_power(plan: ExperimentPlan, threads: int = 1, block_size: int = 50) -> RejectionTable:
    """Rejection frequencies for every grid point of ``plan``."""
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    jobs = [(g, point, blk) for g, point in enumerate(plan.grid)
            for blk in _blocks(plan.replications, block_size)]
    args = [(point, plan.eta, plan.v2_scale, plan.seed, g, blk) for g, point, blk in jobs]
    if threads == 1:
        results = [_run_block(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker) as pool:
            results = list(pool.map(_run_block, *zip(*args)))
    rows, stats = [], []
    for g, point in enumerate(plan.grid):
        parts = [res for (gg, _, _), res in zip(jobs, results) if gg == g]
        block = np.vstack([p[0] for p in parts])
        errors = [e for p in parts for e in p[1]]
        row, st = _summarize(point, plan.levels, block, errors)
        rows.append(row)
        stats.append(st)
    return RejectionTable(plan, tuple(rows), tuple(stats))


def _init_worker():
    os.environ["OMP_NUM_THREADS"] = "1"


def plan_dict(plan: ExperimentPlan) -> dict:
    d = asdict(plan)
    d["grid"] = [asdict(g) for g in plan.grid]
    return d
