"""Data-generating processes for the exposure, genotype and outcome models."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import special

from .errors import ConfigError, MalformedInput, QuotaUnreachable
from .model import Dataset, GDependence, OutcomeFamily, ParamSet, fmt_float

BATCH_SIZE = 50_000
MAX_POPULATION = 10**8


@dataclass(frozen=True)
class RngStream:
    """Address of one independent random stream.

    ``cell`` identifies the grid cell (any tuple of non-negative ints); the
    stream for ``(master_seed, cell, replicate_index)`` is fixed regardless of
    which other streams exist, so adding replicates or cells never shifts
    earlier draws.
    """

    master_seed: int
    replicate_index: int = 0
    cell: Tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=int(self.master_seed) & (2**64 - 1),
            spawn_key=(*self.cell, int(self.replicate_index)),
        )
        return np.random.Generator(np.random.PCG64(seq))


RngLike = Union[RngStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


class ExposureDraw(NamedTuple):
    x_raw: np.ndarray
    z: np.ndarray
    g_iv: np.ndarray
    u: np.ndarray


def gen_g(rng: RngLike, n: int, g_iv=None, dependence=GDependence.INDEPENDENT, maf: float = 0.3) -> np.ndarray:
    """Additively coded genotype (0/1/2 copies).

    Independent: Binomial(2, maf).  Dependent: Binomial(2, maf + maf*1{g_iv > 0}),
    i.e. 0.3 -> 0.6 at the default allele frequency.
    """
    rng = as_generator(rng)
    dependence = GDependence.parse(dependence)
    if dependence is GDependence.INDEPENDENT:
        return rng.binomial(2, maf, size=n).astype(float)
    g_iv = np.asarray(g_iv, dtype=float)
    if g_iv.shape != (n,):
        raise ConfigError(f"g_iv must have length n={n} for the dependent sampler")
    prob = maf + maf * (g_iv > 0)
    return rng.binomial(2, prob).astype(float)


def gen_exposure(rng: RngLike, n: int, p: ParamSet) -> ExposureDraw:
    rng = as_generator(rng)
    g_iv = rng.standard_normal(n)
    z = rng.standard_normal(n)
    u = rng.standard_normal(n) * np.sqrt(p.sigma_u2)
    eps_x = rng.standard_normal(n) * np.sqrt(p.sigma_eps_x2)
    x_raw = p.gamma0 + p.gamma_iv * g_iv + p.gamma_z * z + p.gamma_u * u + eps_x
    return ExposureDraw(x_raw, z, g_iv, u)


def _linear_predictor(p: ParamSet, x, g, z, u) -> np.ndarray:
    return p.beta0 + p.beta1 * x + p.beta2 * g + p.beta3 * x * g + p.beta_z * z + p.beta_u * u


def gen_linear(rng: RngLike, p: ParamSet, keep_u: bool = True) -> Dataset:
    """Continuous-outcome sample of ``p.n_obs`` rows.

    X is divided by its sample SD (not centred) when ``p.standardize_x``;
    a single-row sample is left unscaled.
    """
    if p.outcome_family is not OutcomeFamily.LINEAR:
        raise ConfigError("gen_linear needs a linear-family ParamSet")
    rng = as_generator(rng)
    n = p.n_obs
    ex = gen_exposure(rng, n, p)
    g = gen_g(rng, n, ex.g_iv, p.g_dependence, p.g_maf)
    scale = 1.0
    if p.standardize_x and n > 1:
        scale = float(np.std(ex.x_raw, ddof=1))
    x = ex.x_raw / scale
    eps_y = rng.standard_normal(n) * np.sqrt(p.sigma_y2)
    y = _linear_predictor(p, x, g, ex.z, ex.u) + eps_y
    return Dataset(
        y=y, x=x, g=g, z=ex.z, g_iv=ex.g_iv, family=OutcomeFamily.LINEAR,
        u_hidden=ex.u if keep_u else None, x_scale=scale,
    )


def gen_logistic_casecontrol(rng: RngLike, p: ParamSet, keep_u: bool = True,
                             batch_size: Optional[int] = None,
                             max_population: Optional[int] = None) -> Tuple[Dataset, float]:
    """Case-control sample drawn by quota from a simulated population.

    Population batches are drawn until ``p.n_cases`` cases and
    ``p.n_controls`` controls have been kept (earliest rows first, draw order
    preserved).  X is scaled by the SD of the first population batch, so the
    scale is a population quantity unaffected by outcome-based selection.

    The exposure first stage (x on 1, g_iv, z) is also fitted by least
    squares over every population row (accumulated normal equations, so
    memory stays bounded) and attached to the sample, mirroring a first stage
    estimated in the source cohort rather than in the outcome-selected rows.

    Returns the retained sample and the prevalence of Y=1 over every
    population row drawn.
    """
    if p.outcome_family is not OutcomeFamily.LOGISTIC:
        raise ConfigError("gen_logistic_casecontrol needs a logistic-family ParamSet")
    rng = as_generator(rng)
    batch_size = BATCH_SIZE if batch_size is None else batch_size
    max_population = MAX_POPULATION if max_population is None else max_population
    need = {1: p.n_cases, 0: p.n_controls}
    kept = []
    xtx = np.zeros((3, 3))
    xty = np.zeros(3)
    scale = None
    n_drawn = 0
    n_pos = 0
    while need[0] > 0 or need[1] > 0:
        if n_drawn >= max_population:
            raise QuotaUnreachable(
                f"drew {n_drawn} population rows; still need {need[1]} cases and {need[0]} controls"
            )
        m = batch_size
        ex = gen_exposure(rng, m, p)
        g = gen_g(rng, m, ex.g_iv, p.g_dependence, p.g_maf)
        if scale is None:
            scale = float(np.std(ex.x_raw, ddof=1)) if p.standardize_x and m > 1 else 1.0
        x = ex.x_raw / scale
        y = (rng.random(m) < special.expit(_linear_predictor(p, x, g, ex.z, ex.u))).astype(float)
        n_drawn += m
        n_pos += int(y.sum())
        A = np.column_stack([np.ones(m), ex.g_iv, ex.z])
        xtx += A.T @ A
        xty += A.T @ x

        take = np.zeros(m, dtype=bool)
        for label in (1, 0):
            if need[label] > 0:
                idx = np.flatnonzero(y == label)[: need[label]]
                take[idx] = True
                need[label] -= len(idx)
        if take.any():
            kept.append((y[take], x[take], g[take], ex.z[take], ex.g_iv[take], ex.u[take]))

    pop_coef = np.linalg.solve(xtx, xty)
    cols = [np.concatenate(c) for c in zip(*kept)]
    data = Dataset(
        y=cols[0], x=cols[1], g=cols[2], z=cols[3], g_iv=cols[4],
        family=OutcomeFamily.LOGISTIC, u_hidden=cols[5] if keep_u else None, x_scale=scale,
        population_first_stage=tuple(float(c) for c in pop_coef),
    )
    return data, n_pos / n_drawn


def generate(rng: RngLike, p: ParamSet, keep_u: bool = True) -> Tuple[Dataset, float]:
    """Dispatch on the outcome family; prevalence is NaN for linear data."""
    if p.is_logistic:
        return gen_logistic_casecontrol(rng, p, keep_u=keep_u)
    return gen_linear(rng, p, keep_u=keep_u), float("nan")


def write_dataset_csv(d: Dataset, path, include_u: bool = False) -> None:
    cols = [d.y, d.x, d.g, d.z, d.g_iv]
    header = ["y", "x", "g", "z", "g_iv"]
    if include_u:
        if d.u_hidden is None:
            raise ValueError("dataset carries no hidden U column")
        cols.append(d.u_hidden)
        header.append("u")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([fmt_float(v) for v in row])


def read_dataset_csv(path, family=OutcomeFamily.LINEAR) -> Dataset:
    """Parse the ``y,x,g,z,g_iv[,u]`` layout written by :func:`write_dataset_csv`."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedInput("empty dataset")
        header = [h.strip() for h in header]
        if header not in (["y", "x", "g", "z", "g_iv"], ["y", "x", "g", "z", "g_iv", "u"]):
            raise MalformedInput(f"unexpected header {header}; expected y,x,g,z,g_iv[,u]")
        try:
            rows = [[float(v) for v in r] for r in reader if r]
        except ValueError as exc:
            raise MalformedInput(f"non-numeric value: {exc}") from None
    if not rows:
        raise MalformedInput("empty dataset")
    if any(len(r) != len(header) for r in rows):
        raise MalformedInput("ragged rows")
    arr = np.array(rows)
    try:
        return Dataset(
            y=arr[:, 0], x=arr[:, 1], g=arr[:, 2], z=arr[:, 3], g_iv=arr[:, 4],
            family=family, u_hidden=arr[:, 5] if arr.shape[1] == 6 else None,
        )
    except ConfigError as exc:
        raise MalformedInput(str(exc)) from None
