"""Core value types: scenario parameters, datasets and fit results.

The outcome model is

    Y = b0 + b1*X + b2*G + b3*X*G + bZ*Z + bU*U (+ eps_Y)

with a linear (continuous Y) or logit (binary Y) link, and the exposure model

    X = g0 + gIV*G_IV + gZ*Z + gU*U + eps_X.

``ParamSet`` holds every coefficient of both equations plus sampling settings.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Tuple

import numpy as np
import tomli
import tomli_w

from .errors import ConfigError


class OutcomeFamily(str, Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"

    @classmethod
    def parse(cls, value) -> "OutcomeFamily":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"unknown outcome family {value!r} (expected linear|logistic)") from None


class GDependence(str, Enum):
    INDEPENDENT = "independent"
    DEPENDENT = "dependent"

    @classmethod
    def parse(cls, value) -> "GDependence":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(
                f"unknown g_dependence {value!r} (expected independent|dependent)"
            ) from None


class Method(str, Enum):
    """The six second-stage estimators, valued by their display label."""

    NAIVE = "Naive"
    TSPS = "2SPS"
    TSPS_ADJ = "2SPSadj"
    TSPS_A = "2SPSa"
    TSPS_ADJ_A = "2SPSadj-a"
    TSRI = "2SRI"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        def norm(s):
            return s.strip().lower().replace("_", "").replace("-", "")

        key = norm(str(value))
        for m in cls:
            if key in (norm(m.value), norm(m.name)):
                return m
        raise ConfigError(f"unknown method {value!r}; choose from {', '.join(m.value for m in cls)}")


ALL_METHODS = tuple(Method)


class Setting(str, Enum):
    """Simulation settings I.A - IV.B.

    I/II are linear, III/IV logistic; A has a non-null interaction (0.5),
    B is the null; I/III draw G independently of G_IV, II/IV do not.
    """

    IA = "IA"
    IB = "IB"
    IIA = "IIA"
    IIB = "IIB"
    IIIA = "IIIA"
    IIIB = "IIIB"
    IVA = "IVA"
    IVB = "IVB"

    @classmethod
    def parse(cls, value) -> "Setting":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace(".", "").replace(" ", "")
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown setting {value!r}") from None

    @property
    def roman(self) -> str:
        return self.value[:-1]

    @property
    def outcome_family(self) -> OutcomeFamily:
        return OutcomeFamily.LINEAR if self.roman in ("I", "II") else OutcomeFamily.LOGISTIC

    @property
    def beta3(self) -> float:
        return 0.5 if self.value.endswith("A") else 0.0

    @property
    def g_dependence(self) -> GDependence:
        return GDependence.INDEPENDENT if self.roman in ("I", "III") else GDependence.DEPENDENT

    @property
    def label(self) -> str:
        return f"{self.roman}.{self.value[-1]}"

    @property
    def index(self) -> int:
        return list(Setting).index(self)


@dataclass(frozen=True)
class ParamSet:
    beta0: float = 0.0
    beta1: float = 1.0
    beta2: float = 0.5
    beta3: float = 0.5
    beta_z: float = 0.5
    beta_u: float = 0.0
    gamma0: float = 0.0
    gamma_iv: float = 0.5
    gamma_z: float = 0.5
    gamma_u: float = 0.0
    sigma_u2: float = 1.0
    sigma_eps_x2: float = 1.0
    sigma_y2: float = 1.0
    outcome_family: OutcomeFamily = OutcomeFamily.LINEAR
    g_dependence: GDependence = GDependence.INDEPENDENT
    g_maf: float = 0.3
    n_obs: int = 10_000
    n_cases: int = 5_000
    n_controls: int = 5_000
    standardize_x: bool = True

    def __post_init__(self):
        object.__setattr__(self, "outcome_family", OutcomeFamily.parse(self.outcome_family))
        object.__setattr__(self, "g_dependence", GDependence.parse(self.g_dependence))
        for name in _REAL_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name} must be a real number, got {value!r}")
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        for name in ("sigma_u2", "sigma_eps_x2", "sigma_y2"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 < self.g_maf < 1.0:
            raise ConfigError("g_maf must lie in (0, 1)")
        if self.g_dependence is GDependence.DEPENDENT and self.g_maf >= 0.5:
            # dependent sampler doubles the allele probability when G_IV > 0
            raise ConfigError("g_maf must be < 0.5 when g_dependence = dependent")
        for name in ("n_obs", "n_cases", "n_controls"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1")
            object.__setattr__(self, name, int(value))
        if not isinstance(self.standardize_x, (bool, np.bool_)):
            raise ConfigError("standardize_x must be true or false")
        object.__setattr__(self, "standardize_x", bool(self.standardize_x))

    def replace(self, **changes) -> "ParamSet":
        return dataclasses.replace(self, **changes)

    @property
    def is_logistic(self) -> bool:
        return self.outcome_family is OutcomeFamily.LOGISTIC

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Enum) else v
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ParamSet":
        """Build from a flat mapping of config keys.

        ``setting`` (with optional ``gamma_u``/``beta_u``) selects a base
        scenario; any other key overrides that base field by field.
        """
        data = dict(data)
        unknown = set(data) - set(PARAM_KEYS) - {"setting"}
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        if "setting" in data:
            base = setting_to_params(
                Setting.parse(data.pop("setting")),
                data.get("gamma_u", 0.0),
                data.get("beta_u", 0.0),
            )
            return base.replace(**data) if data else base
        return cls(**data)


_REAL_FIELDS = (
    "beta0", "beta1", "beta2", "beta3", "beta_z", "beta_u",
    "gamma0", "gamma_iv", "gamma_z", "gamma_u",
    "sigma_u2", "sigma_eps_x2", "sigma_y2", "g_maf",
)

PARAM_KEYS = tuple(f.name for f in dataclasses.fields(ParamSet))

# key -> description; drives both validation and the CLI help text
PARAM_SCHEMA = {
    "setting": "optional base scenario IA..IVB; other keys override it",
    "beta0": "outcome intercept",
    "beta1": "exposure main effect",
    "beta2": "G main effect",
    "beta3": "G x exposure interaction",
    "beta_z": "measured confounder effect on Y",
    "beta_u": "unmeasured confounder effect on Y",
    "gamma0": "exposure intercept",
    "gamma_iv": "instrument effect on X",
    "gamma_z": "Z effect on X",
    "gamma_u": "U effect on X",
    "sigma_u2": "variance of U (> 0)",
    "sigma_eps_x2": "variance of the exposure error (> 0)",
    "sigma_y2": "variance of the outcome error, linear family (> 0)",
    "outcome_family": "linear | logistic",
    "g_dependence": "independent | dependent",
    "g_maf": "allele probability for G in (0, 1)",
    "n_obs": "sample size, linear family",
    "n_cases": "case quota, logistic family",
    "n_controls": "control quota, logistic family",
    "standardize_x": "rescale X to unit variance (true | false)",
}


def setting_to_params(setting: Setting, gamma_u: float, beta_u: float) -> ParamSet:
    """Fully populated parameters for one (setting, gamma_u, beta_u) cell."""
    setting = Setting.parse(setting)
    family = setting.outcome_family
    beta0 = 0.0 if family is OutcomeFamily.LINEAR else math.log(0.01 / 0.99)
    return ParamSet(
        beta0=beta0,
        beta1=1.0,
        beta2=0.5,
        beta3=setting.beta3,
        beta_z=0.5,
        beta_u=beta_u,
        gamma0=0.0,
        gamma_iv=0.5,
        gamma_z=0.5,
        gamma_u=gamma_u,
        sigma_u2=1.0,
        sigma_eps_x2=1.0,
        sigma_y2=1.0,
        outcome_family=family,
        g_dependence=setting.g_dependence,
        g_maf=0.3,
    )


def dumps_params(p: ParamSet) -> str:
    return tomli_w.dumps(p.to_dict())


def loads_params(text: str) -> ParamSet:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"parameter config must be flat; found table(s) {nested}")
    return ParamSet.from_dict(data)


def load_params(path) -> ParamSet:
    return loads_params(Path(path).read_text(encoding="utf-8"))


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented sample.

    ``u_hidden`` is the latent confounder and exists only for oracle checks;
    estimators never read it.  ``x_scale`` is the divisor that produced ``x``
    from the raw exposure (1.0 when no standardization was applied).
    ``population_first_stage`` carries (alpha0, alpha1, alpha_z) fitted on the
    whole simulated population when the rows are a case-control selection.
    """

    y: np.ndarray
    x: np.ndarray
    g: np.ndarray
    z: np.ndarray
    g_iv: np.ndarray
    family: OutcomeFamily = OutcomeFamily.LINEAR
    u_hidden: Optional[np.ndarray] = None
    x_scale: float = 1.0
    population_first_stage: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        family = OutcomeFamily.parse(self.family)
        object.__setattr__(self, "family", family)
        for name in ("y", "x", "g", "z", "g_iv"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.u_hidden is not None:
            object.__setattr__(self, "u_hidden", _frozen(self.u_hidden))
        n = len(self.y)
        cols = [self.x, self.g, self.z, self.g_iv]
        if self.u_hidden is not None:
            cols.append(self.u_hidden)
        if any(c.ndim != 1 or len(c) != n for c in [self.y, *cols]):
            raise ConfigError("dataset columns must be 1-d and of equal length")
        if not np.all(np.isin(self.g, (0.0, 1.0, 2.0))):
            raise ConfigError("g must be coded 0/1/2")
        if family is OutcomeFamily.LOGISTIC and not np.all(np.isin(self.y, (0.0, 1.0))):
            raise ConfigError("logistic outcome must be coded 0/1")

    @property
    def n(self) -> int:
        return len(self.y)

    def take(self, idx) -> "Dataset":
        """Row subset (or permutation) of this dataset."""
        u = None if self.u_hidden is None else self.u_hidden[idx]
        return Dataset(
            y=self.y[idx], x=self.x[idx], g=self.g[idx], z=self.z[idx], g_iv=self.g_iv[idx],
            family=self.family, u_hidden=u, x_scale=self.x_scale,
            population_first_stage=self.population_first_stage,
        )


@dataclass(frozen=True, eq=False)
class FitResult:
    coef: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    converged: bool
    n_iter: int
    deviance_or_rss: float
    column_names: tuple

    def index(self, label: str) -> int:
        return self.column_names.index(label)

    def coef_of(self, label: str) -> float:
        return float(self.coef[self.index(label)])

    def se_of(self, label: str) -> float:
        return float(self.se[self.index(label)])


ESTIMATE_CSV_HEADER = "method,b1,se1,b2,se2,b3,se3,p3,converged"


@dataclass(frozen=True, eq=False)
class EstimateRow:
    """Per-method estimates of the exposure, G and interaction effects.

    A failed fit is kept as a row with NaN estimates and ``error`` naming the
    exception class, so a batch over methods never aborts half-way.
    """

    method: Method
    b1: float
    b2: float
    b3: float
    se1: float
    se2: float
    se3: float
    p3: float
    full_fit: Optional[FitResult] = None
    error: Optional[str] = None
    message: str = field(default="", repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None

    @classmethod
    def failed(cls, method: Method, exc: Exception) -> "EstimateRow":
        nan = float("nan")
        return cls(method, nan, nan, nan, nan, nan, nan, nan, None,
                   type(exc).__name__, str(exc))

    def csv_line(self) -> str:
        vals = [self.b1, self.se1, self.b2, self.se2, self.b3, self.se3, self.p3]
        conv = "true" if self.ok and self.full_fit is not None and self.full_fit.converged else "false"
        return ",".join([self.method.value, *(fmt_float(v) for v in vals), conv])


def fmt_float(v: float) -> str:
    """Round-trippable text for CSV output (17 significant digits)."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    return "%.17g" % v
