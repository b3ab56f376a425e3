"""Closed-form and large-sample reference values for the simulation models.

These are oracles: they use population parameters only and never look at a
simulated dataset, so simulation output can be checked against them.
"""

from __future__ import annotations

import math
from typing import NamedTuple

from .errors import ConfigError
from .model import GDependence, OutcomeFamily, ParamSet

# probit-to-logit scaling constant
PROBIT_LOGIT = 1.7


class CondMoments(NamedTuple):
    """Moments of U given X, holding the instruments fixed.

    ``slope`` and ``resid_var`` are on the raw exposure scale; ``scale`` is
    the divisor the generator applies to X (1.0 without standardization), so
    the slope per unit of the generated x is ``slope * scale``.
    """

    slope: float
    resid_var: float
    sigma_x2: float
    scale: float


def exposure_scale(p: ParamSet) -> float:
    """Population SD of the raw exposure, i.e. the expected standardization divisor."""
    if not p.standardize_x:
        return 1.0
    return math.sqrt(p.gamma_iv**2 + p.gamma_z**2 + p.gamma_u**2 * p.sigma_u2 + p.sigma_eps_x2)


def cond_moments(p: ParamSet) -> CondMoments:
    sigma_x2 = p.gamma_u**2 * p.sigma_u2 + p.sigma_eps_x2
    slope = p.gamma_u * p.sigma_u2 / sigma_x2
    resid_var = p.sigma_u2 * (1.0 - p.gamma_u**2 * p.sigma_u2 / sigma_x2)
    return CondMoments(slope, resid_var, sigma_x2, exposure_scale(p))


def attenuation_phi(p: ParamSet) -> float:
    """Factor by which residual confounding shrinks logistic coefficients."""
    m = cond_moments(p)
    return math.sqrt(1.0 + p.beta_u**2 * m.resid_var / PROBIT_LOGIT**2)


def naive_beta1_closed_form(p: ParamSet) -> float:
    """Omitted-variable limit of the naive exposure slope (linear, independent G).

    With G independent of (G_IV, Z, U), E[U | X, Z, G] is linear in X and Z
    alone, so the naive slope picks up beta_u times the partial regression
    coefficient of U on the raw exposure given Z, rescaled to x units.
    """
    if p.outcome_family is not OutcomeFamily.LINEAR:
        raise ConfigError("naive limit is defined for the linear family")
    if p.g_dependence is not GDependence.INDEPENDENT:
        raise ConfigError("closed form needs independent G; use naive_beta1_limit_linear")
    var_x_given_z = p.gamma_iv**2 + p.gamma_u**2 * p.sigma_u2 + p.sigma_eps_x2
    partial = p.gamma_u * p.sigma_u2 / var_x_given_z
    return p.beta1 + p.beta_u * partial * exposure_scale(p)


def naive_beta1_limit_linear(p: ParamSet, n: int = 10**6, seed: int = 20240101) -> float:
    """Naive exposure slope from one very large simulated sample.

    Monte Carlo plim: draws ``n`` rows from the linear model and fits the
    naive regression (1, x, g, x*g, z) by least squares.  Exact (beta1) when
    beta_u = 0, without simulating.
    """
    # local imports keep the closed-form helpers free of the simulation stack
    from .estimators import second_stage_design
    from .model import Method
    from .regress import fit_ols
    from .simgen import RngStream, gen_linear

    if p.outcome_family is not OutcomeFamily.LINEAR:
        raise ConfigError("naive limit is defined for the linear family")
    if p.beta_u == 0.0:
        return p.beta1
    d = gen_linear(RngStream(seed), p.replace(n_obs=int(n)), keep_u=False)
    fit = fit_ols(second_stage_design(Method.NAIVE, d, None), d.y)
    return fit.coef_of("x")


class LogisticApprox(NamedTuple):
    """Attenuated coefficient targets, in units of the generated x.

    ``b1`` keeps the confounding slope (what an exposure coefficient absorbs
    when nothing soaks up E[U|X]); ``b1_resid_adjusted`` is the exposure
    effect once a first-stage residual carries that slope, which is the
    target of residual inclusion.
    """

    b1: float
    b2: float
    b3: float
    b1_resid_adjusted: float


def approx_logistic_coeffs(p: ParamSet) -> LogisticApprox:
    if p.outcome_family is not OutcomeFamily.LOGISTIC:
        raise ConfigError("approximation is defined for the logistic family")
    m = cond_moments(p)
    phi = attenuation_phi(p)
    slope_x = m.slope * m.scale
    return LogisticApprox(
        b1=(p.beta1 + p.beta_u * slope_x) / phi,
        b2=p.beta2 / phi,
        b3=p.beta3 / phi,
        b1_resid_adjusted=p.beta1 / phi,
    )


def oracle_values(p: ParamSet) -> dict:
    """Every oracle applicable to ``p`` as an ordered name -> value mapping."""
    m = cond_moments(p)
    out = {
        "sigma_x2": m.sigma_x2,
        "cond_slope": m.slope,
        "cond_resid_var": m.resid_var,
        "x_scale": m.scale,
        "phi": attenuation_phi(p),
    }
    if p.outcome_family is OutcomeFamily.LINEAR:
        if p.g_dependence is GDependence.INDEPENDENT:
            out["naive_beta1_limit"] = naive_beta1_closed_form(p)
    else:
        a = approx_logistic_coeffs(p)
        out.update(
            approx_b1=a.b1, approx_b2=a.b2, approx_b3=a.b3,
            approx_b1_resid_adjusted=a.b1_resid_adjusted,
        )
    return out


def format_oracles(values: dict, digits: int = 4) -> str:
    return "\n".join(f"{k}={v:.{digits}f}" for k, v in values.items()) + "\n"


__all__ = [
    "CondMoments", "LogisticApprox", "PROBIT_LOGIT", "approx_logistic_coeffs",
    "attenuation_phi", "cond_moments", "exposure_scale", "format_oracles",
    "naive_beta1_closed_form", "naive_beta1_limit_linear", "oracle_values",
]
