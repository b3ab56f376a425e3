"""Mendelian-randomization estimators for gene-environment interaction.

Submodules: ``model`` (parameters and result types), ``regress`` (OLS and
logistic kernels), ``simgen`` (data generation), ``estimators`` (the six
two-stage methods), ``theory`` (analytical oracles), ``harness`` (Monte
Carlo runner), ``scan`` (per-variant scan) and ``cli``.
"""

from .errors import (
    AllFitsFailed,
    ConfigError,
    DidNotConverge,
    DimensionMismatch,
    MalformedInput,
    MRGxEError,
    NonPositiveSE,
    QuotaUnreachable,
    RankDeficient,
    RegressionError,
    SeparationSuspected,
    SingleClassResponse,
)
from .estimators import FirstStage, estimate, first_stage, run_all_methods, second_stage_design
from .harness import ExperimentSpec, SummaryTable, aggregate, run_experiment
from .model import (
    ALL_METHODS,
    Dataset,
    EstimateRow,
    FitResult,
    GDependence,
    Method,
    OutcomeFamily,
    ParamSet,
    Setting,
    setting_to_params,
)
from .regress import DesignMatrix, fit_logistic, fit_ols, wald_p
from .simgen import RngStream, gen_linear, gen_logistic_casecontrol, generate
from .theory import approx_logistic_coeffs, attenuation_phi, cond_moments, naive_beta1_limit_linear

__version__ = "0.1.0"
