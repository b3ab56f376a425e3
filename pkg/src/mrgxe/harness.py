"""Seeded Monte Carlo runner over (gamma_u, beta_u) grids.

Each replicate draws from its own RNG stream addressed by
``(master_seed, setting, gamma index, beta index, replicate)``, so results do
not depend on worker count, scheduling or which other cells are in the grid.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import tomli
from threadpoolctl import threadpool_limits

from .errors import AllFitsFailed, ConfigError, MRGxEError, RegressionError
from .estimators import run_all_methods
from .model import (
    ALL_METHODS,
    PARAM_KEYS,
    Dataset,
    EstimateRow,
    Method,
    ParamSet,
    Setting,
    fmt_float,
    setting_to_params,
)
from .regress import DesignMatrix, fit_ols
from .simgen import RngStream, generate

log = logging.getLogger(__name__)

DEFAULT_GAMMA_U = (0.0, 0.5, 1.0, 2.0, 4.0)
DEFAULT_BETA_U = (0.0, 1.5, 3.0)
COEFS = ("b1", "b2", "b3")
SUMMARY_HEADER = "setting,gamma_u,beta_u,method,stat,coef,value"
TYPEI_HEADER = "setting,gamma_u,beta_u,method,rate,sd,n_eff"
# replicates per pool task; fixed so the work split never depends on worker count
CHUNK = 25

# key -> description for the experiment config file
EXPERIMENT_SCHEMA = {
    "setting": "scenario IA..IVB (required)",
    "gamma_u_grid": "list of gamma_u values (default [0, 0.5, 1, 2, 4])",
    "beta_u_grid": "list of beta_u values (default [0, 1.5, 3])",
    "n_reps": "replicates per grid cell, >= 2 (default 500)",
    "alpha": "test level for H0: beta3 = 0 (default 0.05)",
    "methods": "subset of Naive, 2SPS, 2SPSadj, 2SPSa, 2SPSadj-a, 2SRI (default all)",
    "[overrides]": "table of parameter keys applied on top of every cell",
}


@dataclass(frozen=True)
class ExperimentSpec:
    setting: Setting
    gamma_u_grid: Tuple[float, ...] = DEFAULT_GAMMA_U
    beta_u_grid: Tuple[float, ...] = DEFAULT_BETA_U
    n_reps: int = 500
    master_seed: int = 0
    alpha: float = 0.05
    methods: Tuple[Method, ...] = ALL_METHODS
    overrides: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "setting", Setting.parse(self.setting))
        for name in ("gamma_u_grid", "beta_u_grid"):
            grid = tuple(float(v) for v in getattr(self, name))
            if not grid:
                raise ConfigError(f"{name} must be non-empty")
            if not all(math.isfinite(v) for v in grid):
                raise ConfigError(f"{name} must hold finite values")
            object.__setattr__(self, name, grid)
        if isinstance(self.n_reps, bool) or int(self.n_reps) != self.n_reps or self.n_reps < 2:
            raise ConfigError("n_reps must be an integer >= 2")
        object.__setattr__(self, "n_reps", int(self.n_reps))
        if not 0.0 < float(self.alpha) < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        object.__setattr__(self, "alpha", float(self.alpha))
        wanted = {Method.parse(m) for m in self.methods}
        if not wanted:
            raise ConfigError("methods must be non-empty")
        object.__setattr__(self, "methods", tuple(m for m in ALL_METHODS if m in wanted))
        overrides = dict(self.overrides)
        bad = set(overrides) - set(PARAM_KEYS)
        if bad:
            raise ConfigError(f"unknown override key(s): {', '.join(sorted(bad))}")
        grid_keys = set(overrides) & {"gamma_u", "beta_u"}
        if grid_keys:
            raise ConfigError(f"{', '.join(sorted(grid_keys))} come from the grids, not overrides")
        object.__setattr__(self, "overrides", overrides)
        self.cell_params(self.gamma_u_grid[0], self.beta_u_grid[0])  # validate overrides early

    def cell_params(self, gamma_u: float, beta_u: float) -> ParamSet:
        return setting_to_params(self.setting, gamma_u, beta_u).replace(**self.overrides)

    def cells(self) -> List[Tuple[int, int]]:
        return [(i, j) for i in range(len(self.gamma_u_grid)) for j in range(len(self.beta_u_grid))]

    def stream(self, cell: Tuple[int, int], rep: int) -> RngStream:
        return RngStream(self.master_seed, rep, (self.setting.index, *cell))

    def replace(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, data: Mapping, master_seed: int) -> "ExperimentSpec":
        data = dict(data)
        allowed = {"setting", "gamma_u_grid", "beta_u_grid", "n_reps", "alpha", "methods", "overrides"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown experiment key(s): {', '.join(sorted(unknown))}")
        if "setting" not in data:
            raise ConfigError("experiment config needs a 'setting'")
        overrides = data.pop("overrides", {})
        if not isinstance(overrides, dict):
            raise ConfigError("'overrides' must be a table")
        return cls(master_seed=master_seed, overrides=overrides, **data)

    @classmethod
    def loads(cls, text: str, master_seed: int) -> "ExperimentSpec":
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        return cls.from_mapping(data, master_seed)

    @classmethod
    def load(cls, path, master_seed: int) -> "ExperimentSpec":
        return cls.loads(Path(path).read_text(encoding="utf-8"), master_seed)


def _r2(columns, response) -> float:
    # diagnostics are informational; an unfittable one is NaN, not a failed replicate
    try:
        fit = fit_ols(DesignMatrix.from_columns(columns), response)
    except RegressionError:
        return float("nan")
    centred = response - response.mean()
    return 1.0 - fit.deviance_or_rss / float(centred @ centred)


def diagnostics(d: Dataset, prevalence: float) -> Dict[str, float]:
    """Per-replicate R^2 values (and prevalence for case-control data)."""
    out = {}
    if d.u_hidden is not None:
        out["r2_x_giv_z_u"] = _r2([("g_iv", d.g_iv), ("z", d.z), ("u", d.u_hidden)], d.x)
    out["r2_x_giv_z"] = _r2([("g_iv", d.g_iv), ("z", d.z)], d.x)
    if d.family.value == "linear":
        base = [("x", d.x), ("g", d.g), ("z", d.z)]
        if d.u_hidden is not None:
            out["r2_y_x_g_z_u"] = _r2(base + [("u", d.u_hidden)], d.y)
        out["r2_y_x_g_z"] = _r2(base, d.y)
    else:
        out["prevalence"] = prevalence
    return out


@dataclass(frozen=True)
class ReplicateResult:
    cell: Tuple[int, int]
    rep: int
    rows: Tuple[EstimateRow, ...] = ()
    diag: Mapping[str, float] = field(default_factory=dict)
    error: Optional[str] = None


def run_replicate(spec: ExperimentSpec, cell: Tuple[int, int], rep: int) -> ReplicateResult:
    gu, bu = spec.gamma_u_grid[cell[0]], spec.beta_u_grid[cell[1]]
    p = spec.cell_params(gu, bu)
    try:
        d, prevalence = generate(spec.stream(cell, rep), p, keep_u=True)
    except MRGxEError as exc:
        return ReplicateResult(cell, rep, error=f"{type(exc).__name__}: {exc}")
    rows = tuple(dataclasses.replace(r, full_fit=None) for r in run_all_methods(d, spec.methods))
    return ReplicateResult(cell, rep, rows, diagnostics(d, prevalence))


def _run_chunk(spec: ExperimentSpec, tasks: Sequence[Tuple[Tuple[int, int], int]]) -> List[ReplicateResult]:
    # one BLAS thread per worker: avoids oversubscription and thread-count-dependent rounding
    with threadpool_limits(limits=1):
        return [run_replicate(spec, cell, rep) for cell, rep in tasks]


@dataclass(frozen=True)
class CellStats:
    method: Method
    n_eff: int
    n_failed: int
    mean: Tuple[float, float, float]
    sd: Tuple[float, float, float]
    rate: float
    rate_sd: float


def aggregate(rows: Sequence[EstimateRow], alpha: float = 0.05) -> CellStats:
    """Mean/SD of (b1, b2, b3) and the rejection rate over successful fits.

    SDs use divisor n - 1 (NaN for a single fit); the rejection indicator is
    ``p3 < alpha``.
    """
    if not rows:
        raise AllFitsFailed("no replicates to aggregate")
    methods = {r.method for r in rows}
    if len(methods) != 1:
        raise ValueError("aggregate expects rows from a single method")
    good = [r for r in rows if r.ok and math.isfinite(r.p3)]
    method = rows[0].method
    if not good:
        raise AllFitsFailed(f"all {len(rows)} fits failed for {method.value}")
    b = np.array([[r.b1, r.b2, r.b3] for r in good])
    reject = np.array([r.p3 < alpha for r in good], dtype=float)
    n = len(good)
    sd = b.std(axis=0, ddof=1) if n > 1 else np.full(3, np.nan)
    return CellStats(
        method=method,
        n_eff=n,
        n_failed=len(rows) - n,
        mean=tuple(float(v) for v in b.mean(axis=0)),
        sd=tuple(float(v) for v in sd),
        rate=float(reject.mean()),
        rate_sd=float(reject.std(ddof=1)) if n > 1 else float("nan"),
    )


@dataclass(frozen=True)
class CellSummary:
    gamma_u: float
    beta_u: float
    stats: Mapping[Method, Optional[CellStats]]
    n_reps: int
    diag: Mapping[str, Tuple[float, float]] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass(frozen=True)
class SummaryTable:
    setting: Setting
    cells: Tuple[CellSummary, ...]
    methods: Tuple[Method, ...]

    def cell(self, gamma_u: float, beta_u: float) -> CellSummary:
        for c in self.cells:
            if c.gamma_u == gamma_u and c.beta_u == beta_u:
                return c
        raise KeyError((gamma_u, beta_u))

    def stats(self, gamma_u: float, beta_u: float, method) -> CellStats:
        s = self.cell(gamma_u, beta_u).stats.get(Method.parse(method))
        if s is None:
            raise AllFitsFailed(f"no successful fits for {method} at ({gamma_u}, {beta_u})")
        return s

    def summary_csv(self) -> str:
        lines = [SUMMARY_HEADER]
        lab = self.setting.label
        for c in self.cells:
            key = f"{lab},{fmt_float(c.gamma_u)},{fmt_float(c.beta_u)}"
            if c.error is not None:
                lines.append(f"{key},,error,{c.error.split(':')[0]},nan")
                continue
            for name, (mean, sd) in c.diag.items():
                lines.append(f"{key},,mean,{name},{fmt_float(mean)}")
                lines.append(f"{key},,sd,{name},{fmt_float(sd)}")
            for m in self.methods:
                s = c.stats[m]
                if s is None:
                    lines.append(f"{key},{m.value},n_eff,,0")
                    lines.append(f"{key},{m.value},n_failed,,{c.n_reps}")
                    continue
                for stat, vals in (("mean", s.mean), ("sd", s.sd)):
                    for coef, v in zip(COEFS, vals):
                        lines.append(f"{key},{m.value},{stat},{coef},{fmt_float(v)}")
                lines.append(f"{key},{m.value},n_eff,,{s.n_eff}")
                lines.append(f"{key},{m.value},n_failed,,{s.n_failed}")
        return "\n".join(lines) + "\n"

    def typei_csv(self) -> str:
        lines = [TYPEI_HEADER]
        lab = self.setting.label
        for c in self.cells:
            key = f"{lab},{fmt_float(c.gamma_u)},{fmt_float(c.beta_u)}"
            for m in self.methods:
                s = None if c.error is not None else c.stats[m]
                if s is None:
                    lines.append(f"{key},{m.value},nan,nan,0")
                else:
                    lines.append(f"{key},{m.value},{fmt_float(s.rate)},{fmt_float(s.rate_sd)},{s.n_eff}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> Tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = (out / "summary.csv", out / "typeI.csv")
        for path, text in zip(paths, (self.summary_csv(), self.typei_csv())):
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return paths


def _summarize_cell(spec: ExperimentSpec, cell, results: List[ReplicateResult]) -> CellSummary:
    gu, bu = spec.gamma_u_grid[cell[0]], spec.beta_u_grid[cell[1]]
    failed = [r for r in results if r.error is not None]
    if failed:
        log.error("cell gamma_u=%g beta_u=%g aborted: %s", gu, bu, failed[0].error)
        return CellSummary(gu, bu, {}, spec.n_reps, error=failed[0].error)
    stats = {}
    for k, m in enumerate(spec.methods):
        try:
            stats[m] = aggregate([r.rows[k] for r in results], spec.alpha)
        except AllFitsFailed as exc:
            log.warning("gamma_u=%g beta_u=%g: %s", gu, bu, exc)
            stats[m] = None
    diag = {}
    for name in results[0].diag:
        v = np.array([r.diag[name] for r in results])
        diag[name] = (float(v.mean()), float(v.std(ddof=1)))
    return CellSummary(gu, bu, stats, spec.n_reps, diag)


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> SummaryTable:
    """Run every grid cell and replicate, then aggregate.

    ``threads`` is the number of worker processes; 1 runs in-process.  The
    returned table is identical for any worker count.
    """
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    tasks = [(cell, r) for cell in spec.cells() for r in range(spec.n_reps)]
    chunks = [tasks[i:i + CHUNK] for i in range(0, len(tasks), CHUNK)]
    if threads == 1 or len(chunks) == 1:
        parts = [_run_chunk(spec, c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, [spec] * len(chunks), chunks))
    by_cell: Dict[Tuple[int, int], List[ReplicateResult]] = {c: [] for c in spec.cells()}
    for part in parts:
        for res in part:
            by_cell[res.cell].append(res)
    cells = []
    for cell in spec.cells():
        results = sorted(by_cell[cell], key=lambda r: r.rep)
        cells.append(_summarize_cell(spec, cell, results))
    return SummaryTable(spec.setting, tuple(cells), spec.methods)
