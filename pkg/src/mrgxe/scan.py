"""Per-variant interaction scan over a genotype matrix.

Each variant column in turn plays the role of G; the phenotype file supplies
the outcome, exposure, covariate and instrument.  Rows whose genotype is
missing are dropped for that variant only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, MalformedInput, RegressionError
from .estimators import estimate
from .model import ESTIMATE_CSV_HEADER, Dataset, EstimateRow, Method, OutcomeFamily, ParamSet, fmt_float
from .simgen import RngLike, as_generator, gen_g, generate

log = logging.getLogger(__name__)

PHENO_COLUMNS = ("sample_id", "y", "x", "z", "g_iv")
SCAN_HEADER = "variant,n," + ESTIMATE_CSV_HEADER
QQ_HEADER = "expected,observed"


@dataclass(frozen=True)
class ScanRow:
    variant: str
    n: int
    estimate: EstimateRow

    def csv_line(self) -> str:
        return f"{self.variant},{self.n},{self.estimate.csv_line()}"


def _read_csv(path, what: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={"sample_id": str}, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise MalformedInput(f"{what} file is empty") from None
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise MalformedInput(f"cannot parse {what} file: {exc}") from None
    if df.empty:
        raise MalformedInput(f"{what} file has no rows")
    return df


def read_phenotypes(path) -> pd.DataFrame:
    df = _read_csv(path, "phenotype")
    if tuple(df.columns) != PHENO_COLUMNS:
        raise MalformedInput(f"phenotype header must be {','.join(PHENO_COLUMNS)}, got {','.join(df.columns)}")
    numeric = df[list(PHENO_COLUMNS[1:])]
    if numeric.isna().any().any():
        raise MalformedInput("phenotype file has missing values")
    try:
        df[list(PHENO_COLUMNS[1:])] = numeric.astype(float)
    except ValueError as exc:
        raise MalformedInput(f"non-numeric phenotype value: {exc}") from None
    if df["sample_id"].duplicated().any():
        raise MalformedInput("duplicate sample_id in phenotype file")
    return df.set_index("sample_id")


def read_genotypes(path) -> pd.DataFrame:
    df = _read_csv(path, "genotype")
    if df.columns[0] != "sample_id" or len(df.columns) < 2:
        raise MalformedInput("genotype file needs a sample_id column followed by variant columns")
    if df["sample_id"].duplicated().any():
        raise MalformedInput("duplicate sample_id in genotype file")
    geno = df.set_index("sample_id")
    try:
        geno = geno.astype(float)
    except ValueError as exc:
        raise MalformedInput(f"non-numeric genotype value: {exc}") from None
    values = geno.to_numpy()
    ok = np.isnan(values) | np.isin(values, (0.0, 1.0, 2.0))
    if not ok.all():
        raise MalformedInput("genotypes must be coded 0/1/2 (empty cell for missing)")
    return geno


def scan(pheno: pd.DataFrame, geno: pd.DataFrame, method, family) -> Iterator[ScanRow]:
    """Yield one row per variant that fits; failures are logged and skipped."""
    method = Method.parse(method)
    family = OutcomeFamily.parse(family)
    missing = pheno.index.difference(geno.index)
    if len(missing):
        raise MalformedInput(f"{len(missing)} phenotype sample(s) absent from the genotype file")
    geno = geno.loc[pheno.index]
    for variant in geno.columns:
        g = geno[variant].to_numpy()
        keep = ~np.isnan(g)
        try:
            d = Dataset(
                y=pheno["y"].to_numpy()[keep], x=pheno["x"].to_numpy()[keep], g=g[keep],
                z=pheno["z"].to_numpy()[keep], g_iv=pheno["g_iv"].to_numpy()[keep], family=family,
            )
        except ConfigError as exc:
            raise MalformedInput(str(exc)) from None
        try:
            row = estimate(method, d)
        except RegressionError as exc:
            log.warning("variant %s skipped: %s: %s", variant, type(exc).__name__, exc)
            continue
        yield ScanRow(str(variant), d.n, row)


def qq_points(pvalues: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Expected and observed -log10 p, both sorted descending.

    Expected quantiles use plotting positions (i - 0.5)/n.
    """
    p = np.asarray(pvalues, dtype=float)
    p = p[np.isfinite(p)]
    n = len(p)
    if n == 0:
        return np.empty(0), np.empty(0)
    expected = -np.log10((np.arange(1, n + 1) - 0.5) / n)
    observed = -np.log10(np.clip(np.sort(p), np.finfo(float).tiny, 1.0))
    return expected, observed


def qq_slope(pvalues: Sequence[float]) -> float:
    """Least-squares slope through the origin of observed on expected -log10 p."""
    e, o = qq_points(pvalues)
    if len(e) == 0:
        raise ValueError("no finite p-values")
    return float(e @ o / (e @ e))


def run_scan(pheno_path, geno_path, method, family, out_path, qq_path=None) -> List[ScanRow]:
    """Scan files on disk and write the per-variant CSV plus QQ pairs."""
    pheno = read_phenotypes(pheno_path)
    geno = read_genotypes(geno_path)
    out_path = Path(out_path)
    qq_path = Path(qq_path) if qq_path is not None else out_path.with_suffix(".qq.csv")
    rows = []
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SCAN_HEADER + "\n")
        for row in scan(pheno, geno, method, family):
            fh.write(row.csv_line() + "\n")
            rows.append(row)
    e, o = qq_points([r.estimate.p3 for r in rows])
    with open(qq_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(QQ_HEADER + "\n")
        for a, b in zip(e, o):
            fh.write(f"{fmt_float(a)},{fmt_float(b)}\n")
    return rows


def simulate_null_scan(rng: RngLike, p: ParamSet, n_variants: int, maf: float = 0.3
                       ) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Phenotypes from ``p`` with beta2 = beta3 = 0 plus independent null variants.

    Returns (phenotype frame, genotype frame) in the on-disk layouts, indexed
    by ``sample_id``.  The variants have no effect on Y, so every scan
    p-value is null.
    """
    gen = as_generator(rng)
    d, _ = generate(gen, p.replace(beta2=0.0, beta3=0.0), keep_u=False)
    ids = [f"s{i:06d}" for i in range(d.n)]
    pheno = pd.DataFrame({"y": d.y, "x": d.x, "z": d.z, "g_iv": d.g_iv}, index=pd.Index(ids, name="sample_id"))
    width = len(str(n_variants))
    geno = pd.DataFrame(
        {f"v{j:0{width}d}": gen_g(gen, d.n, maf=maf) for j in range(n_variants)},
        index=pheno.index,
    )
    return pheno, geno


def write_frame(df: pd.DataFrame, path) -> None:
    df.to_csv(path, float_format="%.17g", lineterminator="\n")
