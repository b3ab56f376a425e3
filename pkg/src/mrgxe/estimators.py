"""First-stage exposure model and the six second-stage estimators.

Every second stage regresses Y on an exposure column E, G, their product E*G
and Z, where E is the observed X (Naive, 2SRI), the first-stage fit X-hat
(2SPS, 2SPSadj) or the instrument-only part alpha1*G_IV (2SPSa, 2SPSadj-a).
The "adj" variants and 2SRI add the matching first-stage residual; the
instrument-only variants also add Z*G.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np

from .errors import RankDeficient, RegressionError
from .model import ALL_METHODS, Dataset, EstimateRow, Method, OutcomeFamily
from .regress import DesignMatrix, fit_logistic, fit_ols, wald_p


@dataclass(frozen=True, eq=False)
class FirstStage:
    alpha0: float
    alpha1: float
    alpha_z: float
    xhat: np.ndarray
    resid: np.ndarray
    xhat_a: np.ndarray
    resid_a: np.ndarray


FIRST_STAGE_SOURCES = ("auto", "sample", "controls", "population")
RESID_RTOL = 1e-10


def first_stage(d: Dataset, source: str = "auto") -> FirstStage:
    """Exposure model x ~ 1 + g_iv + z and the derived predictions/residuals.

    ``source`` picks the rows the coefficients come from:

    - ``sample``: OLS on all rows of ``d``;
    - ``controls``: OLS on rows with y == 0 (case-control data);
    - ``population``: coefficients the generator fitted on the full simulated
      population (``d.population_first_stage``);
    - ``auto``: ``population`` when available, else ``sample``.

    Predictions and residuals are always evaluated on the rows of ``d``.
    """
    if source not in FIRST_STAGE_SOURCES:
        raise ValueError(f"first-stage source must be one of {FIRST_STAGE_SOURCES}")
    if source == "auto":
        source = "population" if d.population_first_stage is not None else "sample"
    if source == "population":
        if d.population_first_stage is None:
            raise ValueError("dataset carries no population first stage")
        a0, a1, az = d.population_first_stage
    else:
        rows = d.y == 0 if source == "controls" else np.ones(d.n, dtype=bool)
        if rows.sum() <= 3:
            raise RankDeficient(f"first stage needs more than 3 rows, got {int(rows.sum())}")
        design = DesignMatrix.from_columns([("g_iv", d.g_iv[rows]), ("z", d.z[rows])])
        a0, a1, az = (float(c) for c in fit_ols(design, d.x[rows]).coef)
    xhat = a0 + a1 * d.g_iv + az * d.z
    xhat_a = a1 * d.g_iv
    return FirstStage(
        alpha0=a0, alpha1=a1, alpha_z=az,
        xhat=xhat, resid=_snap_zero(d.x - xhat, d.x),
        xhat_a=xhat_a, resid_a=_snap_zero(d.x - xhat_a, d.x),
    )


def _snap_zero(resid: np.ndarray, x: np.ndarray) -> np.ndarray:
    # a residual at rounding level would otherwise be rescaled into a spurious
    # regressor by the fitter's column equilibration
    if np.linalg.norm(resid) <= RESID_RTOL * np.linalg.norm(x):
        return np.zeros_like(resid)
    return resid


# (exposure label, product label) per method; the exposure column is what b1 is read from
_EXPOSURE_LABELS = {
    Method.NAIVE: ("x", "xg"),
    Method.TSRI: ("x", "xg"),
    Method.TSPS: ("xhat", "xhatg"),
    Method.TSPS_ADJ: ("xhat", "xhatg"),
    Method.TSPS_A: ("xhat_a", "xhat_ag"),
    Method.TSPS_ADJ_A: ("xhat_a", "xhat_ag"),
}


def second_stage_design(method: Method, d: Dataset, fs: Optional[FirstStage]) -> DesignMatrix:
    method = Method.parse(method)
    if method is not Method.NAIVE and fs is None:
        raise ValueError(f"{method.value} needs a first stage")
    e_label, eg_label = _EXPOSURE_LABELS[method]
    if e_label == "x":
        e = d.x
    elif e_label == "xhat":
        e = fs.xhat
    else:
        e = fs.xhat_a
    cols = [(e_label, e), ("g", d.g), (eg_label, e * d.g), ("z", d.z)]
    if method in (Method.TSPS_A, Method.TSPS_ADJ_A):
        cols.append(("zg", d.z * d.g))
    if method in (Method.TSPS_ADJ, Method.TSRI):
        cols.append(("resid", fs.resid))
    elif method is Method.TSPS_ADJ_A:
        cols.append(("resid_a", fs.resid_a))
    return DesignMatrix.from_columns(cols)


def _fitter(family: OutcomeFamily):
    return fit_logistic if family is OutcomeFamily.LOGISTIC else fit_ols


def estimate(method: Method, d: Dataset, fs: Optional[FirstStage] = None,
             first_stage_source: str = "auto") -> EstimateRow:
    """Fit one second-stage model and extract (b1, b2, b3) with the Wald p for b3.

    ``fs`` may be passed to share one first stage across methods; Naive never
    computes one.  Fitter errors propagate with ``.method`` set.
    """
    method = Method.parse(method)
    try:
        if method is not Method.NAIVE and fs is None:
            fs = first_stage(d, first_stage_source)
        design = second_stage_design(method, d, fs)
        fit = _fitter(d.family)(design, d.y)
    except RegressionError as exc:
        exc.method = method.value
        raise
    e_label, eg_label = _EXPOSURE_LABELS[method]
    j1, j2, j3 = fit.index(e_label), fit.index("g"), fit.index(eg_label)
    b3, se3 = float(fit.coef[j3]), float(fit.se[j3])
    return EstimateRow(
        method=method,
        b1=float(fit.coef[j1]), b2=float(fit.coef[j2]), b3=b3,
        se1=float(fit.se[j1]), se2=float(fit.se[j2]), se3=se3,
        p3=wald_p(b3, se3) if se3 > 0 else float("nan"),
        full_fit=fit,
    )


def run_all_methods(d: Dataset, methods: Iterable[Method] = ALL_METHODS,
                    first_stage_source: str = "auto") -> List[EstimateRow]:
    """Apply each method to one dataset, sharing a single first stage.

    Failures become rows with ``error`` set; the batch always returns one row
    per requested method, in the canonical method order.
    """
    wanted = {Method.parse(m) for m in methods}
    ordered = [m for m in ALL_METHODS if m in wanted]
    fs = None
    fs_error = None
    if any(m is not Method.NAIVE for m in ordered):
        try:
            fs = first_stage(d, first_stage_source)
        except RegressionError as exc:
            fs_error = exc
    rows = []
    for m in ordered:
        if m is not Method.NAIVE and fs_error is not None:
            rows.append(EstimateRow.failed(m, fs_error))
            continue
        try:
            rows.append(estimate(m, d, fs))
        except RegressionError as exc:
            rows.append(EstimateRow.failed(m, exc))
    return rows
