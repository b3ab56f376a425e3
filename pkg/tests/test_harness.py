import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import mrgxe.simgen as simgen
from mrgxe.errors import AllFitsFailed, ConfigError
from mrgxe.harness import (
    SUMMARY_HEADER,
    TYPEI_HEADER,
    ExperimentSpec,
    aggregate,
    run_experiment,
)
from mrgxe.model import ALL_METHODS, EstimateRow, Method


def row(p3=0.5, b=(1.0, 0.5, 0.0), method=Method.NAIVE):
    return EstimateRow(method, *b, 0.1, 0.1, 0.1, p3)


# ---- spec --------------------------------------------------------------------

def test_spec_defaults():
    s = ExperimentSpec("IB")
    assert s.gamma_u_grid == (0, 0.5, 1, 2, 4)
    assert s.beta_u_grid == (0, 1.5, 3)
    assert (s.n_reps, s.alpha, s.methods) == (500, 0.05, ALL_METHODS)


@pytest.mark.parametrize(
    "kwargs",
    [dict(gamma_u_grid=()), dict(beta_u_grid=()), dict(alpha=0.0), dict(alpha=1.0),
     dict(n_reps=1), dict(methods=()), dict(overrides={"bogus": 1}),
     dict(overrides={"gamma_u": 1}), dict(overrides={"sigma_u2": -1.0})],
)
def test_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        ExperimentSpec("IB", **kwargs)


def test_spec_from_toml():
    text = """
setting = "II.B"
gamma_u_grid = [1]
beta_u_grid = [0, -1.5]
n_reps = 30
methods = ["2SRI", "naive"]

[overrides]
beta_z = 0
gamma_z = 0
n_obs = 30000
"""
    s = ExperimentSpec.loads(text, master_seed=7)
    assert s.master_seed == 7 and s.methods == (Method.NAIVE, Method.TSRI)
    p = s.cell_params(1.0, -1.5)
    assert (p.beta_z, p.gamma_z, p.n_obs, p.beta_u, p.g_dependence.value) == (0, 0, 30000, -1.5, "dependent")
    with pytest.raises(ConfigError, match="seed"):
        ExperimentSpec.loads('setting = "IB"\nseed = 3\n', 1)
    with pytest.raises(ConfigError, match="setting"):
        ExperimentSpec.loads("n_reps = 3\n", 1)


# ---- aggregate -----------------------------------------------------------------

def test_aggregate_two_points():
    s = aggregate([row(0.01), row(0.20)], 0.05)
    assert s.rate == 0.5
    assert s.rate_sd == pytest.approx(math.sqrt(0.25 * 2 / 1))


def test_aggregate_large_sample_indicator_sd():
    rows = [row(0.01)] * 50 + [row(0.5)] * 950
    s = aggregate(rows, 0.05)
    assert s.rate == pytest.approx(0.05)
    assert s.rate_sd == pytest.approx(0.218, abs=0.001)


def test_aggregate_identical_estimates():
    s = aggregate([row(b=(1, 2, 3))] * 4)
    assert s.sd == (0.0, 0.0, 0.0) and s.mean == (1.0, 2.0, 3.0)


def test_aggregate_excludes_failures():
    failed = EstimateRow.failed(Method.NAIVE, RuntimeError("x"))
    s = aggregate([row(b=(1, 1, 1)), row(b=(3, 3, 3)), failed])
    assert (s.n_eff, s.n_failed) == (2, 1)
    assert s.mean == (2.0, 2.0, 2.0)
    with pytest.raises(AllFitsFailed):
        aggregate([failed, failed])
    with pytest.raises(AllFitsFailed):
        aggregate([])


@given(st.lists(st.floats(0, 1), min_size=2, max_size=60), st.floats(0.001, 0.999))
def test_aggregate_indicator_sd_identity(ps, alpha):
    s = aggregate([row(p) for p in ps], alpha)
    n = s.n_eff
    assert 0 <= s.rate <= 1
    assert s.rate_sd == pytest.approx(math.sqrt(s.rate * (1 - s.rate) * n / (n - 1)), abs=1e-12)


# ---- runs ------------------------------------------------------------------------

def small(**kw):
    base = dict(gamma_u_grid=(0, 1), beta_u_grid=(1.5,), n_reps=6, master_seed=11,
                overrides={"n_obs": 400})
    base.update(kw)
    return ExperimentSpec("IB", **base)


def test_minimal_replication():
    t = run_experiment(small(n_reps=2, gamma_u_grid=(0,)))
    for m in ALL_METHODS:
        s = t.stats(0, 1.5, m)
        assert s.n_eff == 2 and all(math.isfinite(v) for v in s.sd)


def test_output_formats(tmp_path):
    t = run_experiment(small())
    summary, typei = t.write(tmp_path / "out")
    s_lines = summary.read_text().splitlines()
    t_lines = typei.read_text().splitlines()
    assert s_lines[0] == SUMMARY_HEADER and t_lines[0] == TYPEI_HEADER
    assert len(t_lines) == 1 + 2 * 6
    assert t_lines[1].startswith("I.B,0,1.5,Naive,")
    assert "I.B,1,1.5,2SRI,mean,b3," in summary.read_text()
    assert "I.B,0,1.5,,mean,r2_x_giv_z," in summary.read_text()
    assert "I.B,0,1.5,Naive,n_eff,,6" in s_lines
    assert b"\r" not in summary.read_bytes()


def test_worker_count_does_not_change_output():
    spec = small(n_reps=30)  # 60 replicates -> several pool chunks
    a, b = run_experiment(spec, 1), run_experiment(spec, 3)
    assert a.summary_csv() == b.summary_csv() and a.typei_csv() == b.typei_csv()


def test_appending_grid_points_keeps_existing_cells():
    a = run_experiment(small(gamma_u_grid=(0,)))
    b = run_experiment(small(gamma_u_grid=(0, 2)))
    assert a.cell(0, 1.5) == b.cell(0, 1.5)


def test_quota_failure_becomes_error_row(monkeypatch):
    monkeypatch.setattr(simgen, "MAX_POPULATION", 20_000)
    monkeypatch.setattr(simgen, "BATCH_SIZE", 10_000)
    spec = ExperimentSpec("IIIB", (0,), (0,), n_reps=2, master_seed=1,
                          overrides={"beta0": -30.0, "n_cases": 5, "n_controls": 5})
    t = run_experiment(spec)
    assert t.cells[0].error.startswith("QuotaUnreachable")
    assert "III.B,0,0,,error,QuotaUnreachable,nan" in t.summary_csv()
    assert "III.B,0,0,Naive,nan,nan,0" in t.typei_csv()


def test_logistic_cell_reports_prevalence():
    spec = ExperimentSpec("IIIA", (0,), (0,), n_reps=3, master_seed=1,
                          overrides={"n_cases": 300, "n_controls": 300})
    t = run_experiment(spec)
    mean, sd = t.cells[0].diag["prevalence"]
    assert mean == pytest.approx(0.04, abs=0.005)
    assert "r2_y_x_g_z" not in t.cells[0].diag


def test_all_fits_failed_cell_is_reported():
    # n_obs=5 with a 7-column design cannot be fitted
    spec = ExperimentSpec("IA", (0,), (0,), n_reps=2, master_seed=1, overrides={"n_obs": 5},
                          methods=["2SPSadj-a"])
    t = run_experiment(spec)
    assert t.cells[0].stats[Method.TSPS_ADJ_A] is None
    assert "I.A,0,0,2SPSadj-a,n_eff,,0" in t.summary_csv()
    with pytest.raises(AllFitsFailed):
        t.stats(0, 0, "2SPSadj-a")


def test_linear_null_confounding_cells_are_unbiased():
    t = run_experiment(ExperimentSpec("IA", beta_u_grid=(0,), n_reps=40, master_seed=3))
    for c in t.cells:
        for m in ALL_METHODS:
            s = c.stats[m]
            assert abs(s.mean[2] - 0.5) < 4 * s.sd[2] / math.sqrt(s.n_eff), (c.gamma_u, m)


def test_linear_null_rejection_rates_bounded():
    t = run_experiment(ExperimentSpec("IIB", beta_u_grid=(3,), n_reps=100, master_seed=4))
    band = 0.08 + 2.576 * math.sqrt(0.08 * 0.92 / 100)
    for c in t.cells:
        for m in ALL_METHODS:
            assert c.stats[m].rate <= band, (c.gamma_u, m)


def test_runtime_roughly_linear_in_reps():
    def timed(n):
        t0 = time.perf_counter()
        run_experiment(small(n_reps=n, gamma_u_grid=(0,)))
        return time.perf_counter() - t0

    timed(4)  # warm-up
    per_rep = [timed(n) / n for n in (10, 40)]
    assert 0.5 <= per_rep[1] / per_rep[0] <= 2.0


def test_threads_must_be_positive():
    with pytest.raises(ConfigError):
        run_experiment(small(), 0)
