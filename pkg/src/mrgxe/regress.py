"""Dense OLS (via QR) and logistic regression (via IRLS) with model-based covariance."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import linalg, special, stats

from .errors import (
    DidNotConverge,
    DimensionMismatch,
    NonPositiveSE,
    RankDeficient,
    SeparationSuspected,
    SingleClassResponse,
)
from .model import FitResult

COND_LIMIT = 1e12
MAX_ITER = 100
MAX_HALVINGS = 30
DEV_RTOL = 1e-8
SCORE_ATOL = 1e-8
SCORE_CONFIRM = 1e-6
SEPARATION_COEF = 15.0
SEPARATION_SE = 1e3


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Regressor matrix with labelled columns; column 0 is the intercept."""

    labels: Tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.matrix, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.labels):
            raise DimensionMismatch("design shape does not match its labels")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate column labels in {self.labels}")
        if X.shape[1] == 0 or self.labels[0] != "intercept" or not np.all(X[:, 0] == 1.0):
            raise ValueError("first design column must be an all-ones 'intercept'")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "matrix", X)

    @classmethod
    def from_columns(cls, columns: Sequence[Tuple[str, np.ndarray]], n: int = None) -> "DesignMatrix":
        """Build from ``(label, vector)`` pairs, prepending the intercept."""
        if n is None:
            if not columns:
                raise ValueError("need n for an intercept-only design")
            n = len(columns[0][1])
        lens = {len(v) for _, v in columns}
        if lens and lens != {n}:
            raise DimensionMismatch("design columns differ in length")
        X = np.empty((n, len(columns) + 1))
        X[:, 0] = 1.0
        for j, (_, v) in enumerate(columns, start=1):
            X[:, j] = v
        return cls(("intercept", *(lab for lab, _ in columns)), X)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]


def _check_shapes(design: DesignMatrix, response) -> np.ndarray:
    y = np.asarray(response, dtype=float)
    if y.ndim != 1 or y.shape[0] != design.n_rows:
        raise DimensionMismatch(
            f"response length {y.shape} does not match {design.n_rows} design rows"
        )
    if design.n_rows <= design.n_cols:
        raise DimensionMismatch(f"need more rows than columns ({design.n_rows} <= {design.n_cols})")
    return y


def _column_scales(design: DesignMatrix) -> np.ndarray:
    norms = np.linalg.norm(design.matrix, axis=0)
    zero = [design.labels[j] for j in np.flatnonzero(norms == 0)]
    if zero:
        raise RankDeficient(f"all-zero column(s) {zero}")
    return norms


def _scaled_qr(design: DesignMatrix):
    """Economy QR of the column-equilibrated design, with a rank check."""
    scales = _column_scales(design)
    Q, R = np.linalg.qr(design.matrix / scales)
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise RankDeficient(f"design is collinear (condition number {cond:.3g}); columns {design.labels}")
    return Q, R, scales


def fit_ols(design: DesignMatrix, response) -> FitResult:
    """Least squares via Householder QR; cov = s^2 (X'X)^-1 with s^2 = RSS/(n-p)."""
    y = _check_shapes(design, response)
    Q, R, scales = _scaled_qr(design)
    coef = linalg.solve_triangular(R, Q.T @ y) / scales
    resid = y - design.matrix @ coef
    rss = float(resid @ resid)
    n, p = design.matrix.shape
    Rinv = linalg.solve_triangular(R, np.eye(p))
    cov = (rss / (n - p)) * (Rinv @ Rinv.T) / np.outer(scales, scales)
    cov = 0.5 * (cov + cov.T)
    return FitResult(
        coef=coef,
        cov=cov,
        se=np.sqrt(np.clip(np.diag(cov), 0.0, None)),
        converged=True,
        n_iter=1,
        deviance_or_rss=rss,
        column_names=design.labels,
    )


def _deviance(y, eta) -> float:
    # -2 * Bernoulli log-likelihood, stable for large |eta|
    return float(2.0 * np.sum(np.logaddexp(0.0, eta) - y * eta))


def fisher_information(X: np.ndarray, coef: np.ndarray) -> np.ndarray:
    p = special.expit(X @ coef)
    w = p * (1.0 - p)
    return X.T @ (X * w[:, None])


def fit_logistic(design: DesignMatrix, response) -> FitResult:
    """Maximum-likelihood logistic regression by Newton-Raphson (IRLS).

    Starts from the zero vector.  A step that raises the deviance is halved
    up to ``MAX_HALVINGS`` times.  Converged when the max-abs score falls
    below 1e-8; a relative deviance change below 1e-8 also counts, provided
    the score is under 1e-6, once no further descent is possible or the
    iteration budget is spent.  The returned
    covariance is the inverse Fisher information at the final coefficients.
    """
    y = _check_shapes(design, response)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("logistic response must be coded 0/1")
    if y.min() == y.max():
        raise SingleClassResponse(f"response has a single class ({y[0]:g})")
    # rank check on the unweighted design; weights are positive so rank is shared
    _, _, scales = _scaled_qr(design)
    X = design.matrix / scales

    beta = np.zeros(X.shape[1])
    eta = X @ beta
    dev = _deviance(y, eta)
    converged = False
    dev_settled = False
    n_iter = 0
    while True:
        mu = special.expit(eta)
        score = X.T @ (y - mu)
        # score of the unscaled problem is score * scales
        score_max = np.max(np.abs(score * scales))
        if score_max < SCORE_ATOL:
            converged = True
            break
        if n_iter >= MAX_ITER:
            converged = dev_settled and score_max < SCORE_CONFIRM
            break
        w = mu * (1.0 - mu)
        info = X.T @ (X * w[:, None])
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            break
        n_iter += 1
        for _ in range(MAX_HALVINGS + 1):
            new_beta = beta + step
            new_eta = X @ new_beta
            new_dev = _deviance(y, new_eta)
            if np.isfinite(new_dev) and new_dev <= dev:
                break
            step = 0.5 * step
        else:
            # no descent left in floating point: fine if we are already at the optimum
            converged = score_max < SCORE_CONFIRM
            break
        rel_change = abs(dev - new_dev) / (abs(new_dev) + 0.1)
        beta, eta, dev = new_beta, new_eta, new_dev
        # once settled, keep taking Newton steps: each one roughly squares the error
        dev_settled = rel_change < DEV_RTOL

    coef = beta / scales
    try:
        cov_scaled = linalg.inv(fisher_information(X, beta))
    except (linalg.LinAlgError, ValueError):
        cov_scaled = np.full((X.shape[1], X.shape[1]), np.inf)
    cov = cov_scaled / np.outer(scales, scales)
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.abs(np.diag(cov)))

    if np.any(np.abs(coef) > SEPARATION_COEF) or not np.all(np.isfinite(se)) or np.any(se > SEPARATION_SE):
        raise SeparationSuspected(
            f"max |coef| {np.max(np.abs(coef)):.3g}, max se {np.max(se):.3g} after {n_iter} iterations"
        )
    if not converged:
        raise DidNotConverge(f"IRLS stopped after {n_iter} iterations without convergence")
    return FitResult(
        coef=coef,
        cov=cov,
        se=se,
        converged=True,
        n_iter=n_iter,
        deviance_or_rss=dev,
        column_names=design.labels,
    )


def wald_p(coef: float, se: float) -> float:
    """Two-sided p-value of coef/se against the standard normal."""
    if not se > 0:
        raise NonPositiveSE(f"standard error must be positive, got {se!r}")
    z = abs(coef / se)
    if math.isnan(z):
        return float("nan")
    return float(2.0 * stats.norm.sf(z))
