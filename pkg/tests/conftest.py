import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mrgxe.model import Dataset, OutcomeFamily

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(rng, n=400, family=OutcomeFamily.LINEAR, beta3=0.5):
    """Small well-conditioned dataset with a known outcome model."""
    g_iv = rng.standard_normal(n)
    z = rng.standard_normal(n)
    u = rng.standard_normal(n)
    x = 0.5 * g_iv + 0.5 * z + u + rng.standard_normal(n)
    g = rng.binomial(2, 0.3, n).astype(float)
    eta = 1.0 * x + 0.5 * g + beta3 * x * g + 0.5 * z + u
    if family is OutcomeFamily.LOGISTIC:
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-(eta - 0.5)))).astype(float)
    else:
        y = eta + rng.standard_normal(n)
    return Dataset(y=y, x=x, g=g, z=z, g_iv=g_iv, family=family, u_hidden=u)


_ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Record one acceptance line; all lines are repeated in the terminal summary."""

    def _report(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
