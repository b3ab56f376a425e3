"""End-to-end acceptance checks at full replicate counts.

Each test prints a single PASS/FAIL line (also collected in the terminal
summary).  The whole module takes a few minutes on one core.
"""

import math

import numpy as np
import pytest
from scipy.stats import norm

from mrgxe.harness import DEFAULT_BETA_U, DEFAULT_GAMMA_U, ExperimentSpec, run_experiment
from mrgxe.model import ALL_METHODS, Method, Setting, setting_to_params
from mrgxe.regress import DesignMatrix, fit_logistic, fit_ols, wald_p
from mrgxe.scan import qq_slope, scan, simulate_null_scan
from mrgxe.simgen import RngStream, gen_exposure
from mrgxe.theory import attenuation_phi, cond_moments, naive_beta1_limit_linear

SEED = 1
REPS = 500


def _fmt(xs):
    return "(" + ", ".join(f"{x:.3f}" for x in xs) + ")"


def test_ac1_linear_unbiasedness(report):
    t = run_experiment(ExperimentSpec("IA", (1,), (3,), n_reps=REPS, master_seed=SEED))
    target = {
        Method.NAIVE: 3.11, Method.TSPS: 0.99, Method.TSPS_ADJ: 0.99,
        Method.TSPS_A: 0.98, Method.TSPS_ADJ_A: 0.99, Method.TSRI: 1.00,
    }
    got = {m: t.stats(1, 3, m).mean[0] for m in ALL_METHODS}
    ok = all(abs(got[m] - target[m]) <= 0.03 for m in ALL_METHODS)
    detail = "mean b1 " + ", ".join(f"{m.value}={got[m]:.3f}/{target[m]}" for m in ALL_METHODS)
    assert report("AC1 linear unbiasedness (I.A, gamma_u=1, beta_u=3)", ok, detail)


def test_ac2_naive_bias_limit(report):
    target = {1.5: (1.66, 2.05, 2.34, 2.46), 3.0: (2.32, 3.11, 3.68, 3.91)}
    worst, got = 0.0, {}
    for bu, values in target.items():
        got[bu] = []
        for gu, want in zip((0.5, 1, 2, 4), values):
            v = naive_beta1_limit_linear(setting_to_params(Setting.IA, gu, bu))
            got[bu].append(v)
            worst = max(worst, abs(v - want))
    detail = f"beta_u=1.5 {_fmt(got[1.5])}, beta_u=3 {_fmt(got[3.0])}, max |err|={worst:.4f}"
    assert report("AC2 naive bias limit oracle", worst <= 0.02, detail)


def test_ac3_linear_type_i_error(report):
    reference = {
        Method.NAIVE: (0.04, 0.05, 0.06, 0.05, 0.05),
        Method.TSPS: (0.07, 0.07, 0.06, 0.06, 0.07),
        Method.TSPS_ADJ: (0.07, 0.06, 0.06, 0.05, 0.04),
        Method.TSPS_A: (0.05, 0.05, 0.05, 0.05, 0.05),
        Method.TSPS_ADJ_A: (0.05, 0.06, 0.06, 0.05, 0.04),
        Method.TSRI: (0.04, 0.05, 0.06, 0.05, 0.05),
    }
    t = run_experiment(ExperimentSpec("IB", DEFAULT_GAMMA_U, (3,), n_reps=REPS, master_seed=SEED))
    misses, worst = [], 0.0
    for m, values in reference.items():
        for gu, p in zip(DEFAULT_GAMMA_U, values):
            rate = t.stats(gu, 3, m).rate
            band = 3 * math.sqrt(p * (1 - p) / REPS)
            worst = max(worst, abs(rate - p) / band)
            if abs(rate - p) > band:
                misses.append(f"{m.value}@{gu}={rate:.3f}")
    detail = f"30 cells, max |rate-reference|/band={worst:.2f}" + (f", outside: {misses}" if misses else "")
    assert report("AC3 linear type-I error (I.B, beta_u=3)", not misses, detail)


def test_ac4_logistic_interaction_bias(report):
    t = run_experiment(ExperimentSpec("IIIA", (0,), (0,), n_reps=REPS, master_seed=SEED,
                                      methods=("Naive", "2SPS", "2SRI")))
    naive = t.stats(0, 0, "Naive").mean
    tsps = t.stats(0, 0, "2SPS").mean
    tsri = t.stats(0, 0, "2SRI").mean
    ok = (
        abs(tsps[1] - 0.81) <= 0.03 and abs(tsps[2] - 0.29) <= 0.03
        and all(abs(a - b) <= 0.02 for a, b in zip(naive, (1.0, 0.5, 0.5)))
        and all(abs(a - b) <= 0.02 for a, b in zip(tsri, naive))
    )
    detail = f"2SPS (b2,b3)={_fmt(tsps[1:])}, Naive={_fmt(naive)}, 2SRI={_fmt(tsri)}"
    assert report("AC4 logistic 2SPS interaction bias (III.A, beta_u=0, gamma_u=0)", ok, detail)


def test_ac5_logistic_type_i_inflation(report):
    t = run_experiment(ExperimentSpec("IVB", (0,), (1.5,), n_reps=REPS, master_seed=SEED,
                                      methods=("Naive", "2SPSadj-a", "2SRI")))
    naive, tsri, adj_a = (t.stats(0, 1.5, m).rate for m in ("Naive", "2SRI", "2SPSadj-a"))
    ok = abs(naive - 0.15) <= 0.05 and abs(tsri - 0.16) <= 0.05 and abs(adj_a - 0.06) <= 0.03
    detail = f"Naive={naive:.3f}/0.15, 2SRI={tsri:.3f}/0.16, 2SPSadj-a={adj_a:.3f}/0.06"
    assert report("AC5 logistic type-I inflation (IV.B, beta_u=1.5, gamma_u=0)", ok, detail)


def test_ac6_prevalence(report):
    reference = {0: (0.04,) * 5, 1.5: (0.07, 0.08, 0.09, 0.10, 0.10), 3: (0.13, 0.15, 0.17, 0.17, 0.18)}
    t = run_experiment(ExperimentSpec("IIIA", DEFAULT_GAMMA_U, DEFAULT_BETA_U, n_reps=20,
                                      master_seed=SEED, methods=("Naive",)))
    worst, rows = 0.0, []
    for bu, values in reference.items():
        got = [t.cell(gu, bu).diag["prevalence"][0] for gu in DEFAULT_GAMMA_U]
        worst = max(worst, max(abs(a - b) for a, b in zip(got, values)))
        rows.append(f"beta_u={bu} {_fmt(got)}")
    assert report("AC6 prevalence diagnostics (III.A)", worst <= 0.01,
                  "; ".join(rows) + f"; max |err|={worst:.4f}")


def test_ac7_theory_oracles(report):
    worst_slope = worst_var = 0.0
    phi_zero_exact = True
    for i, gu in enumerate(DEFAULT_GAMMA_U):
        p0 = setting_to_params(Setting.IA, gu, 0.0)
        draw = gen_exposure(RngStream(SEED, 7, (i,)), 10**6, p0)
        design = DesignMatrix.from_columns([("x", draw.x_raw), ("g_iv", draw.g_iv), ("z", draw.z)])
        fit = fit_ols(design, draw.u)
        mc_slope = fit.coef_of("x")
        mc_var = fit.deviance_or_rss / (len(draw.u) - design.n_cols)
        for bu in DEFAULT_BETA_U:
            m = cond_moments(p0.replace(beta_u=bu))
            worst_slope = max(worst_slope, abs(m.slope - mc_slope))
            worst_var = max(worst_var, abs(m.resid_var - mc_var))
        phi_zero_exact &= attenuation_phi(p0) == 1.0
    ok = worst_slope <= 0.01 and worst_var <= 0.01 and phi_zero_exact
    detail = (f"15 cells, max |slope err|={worst_slope:.4f}, max |resid var err|={worst_var:.4f}, "
              f"phi(beta_u=0)==1: {phi_zero_exact}")
    assert report("AC7 theory oracles vs 10^6-draw regression", ok, detail)


def test_ac8_kernel_correctness(report):
    rng = np.random.default_rng(SEED)
    checks = {}

    # OLS residual orthogonality, scaled by column and response norms
    x = rng.standard_normal((2000, 4)) * [1, 10, 1e-3, 1e3]
    y = x @ [1.0, -2.0, 3.0, 0.5] + rng.standard_normal(2000)
    d = DesignMatrix.from_columns([(f"c{j}", x[:, j]) for j in range(4)])
    f = fit_ols(d, y)
    r = y - d.matrix @ f.coef
    scaled = np.abs(d.matrix.T @ r) / (np.linalg.norm(d.matrix, axis=0) * np.linalg.norm(y))
    checks["ols orthogonality"] = (scaled.max(), 1e-8)

    # logistic score at convergence
    xl = rng.standard_normal((3000, 3))
    yl = (rng.random(3000) < 1 / (1 + np.exp(-(xl @ [0.5, -1.0, 0.25] - 0.3)))).astype(float)
    dl = DesignMatrix.from_columns([(f"c{j}", xl[:, j]) for j in range(3)])
    fl = fit_logistic(dl, yl)
    score = dl.matrix.T @ (yl - 1 / (1 + np.exp(-dl.matrix @ fl.coef)))
    checks["logistic score norm"] = (np.linalg.norm(score), 1e-6)

    # 2x2 table log odds ratio: a,b exposed cases/controls; c,d unexposed
    a, b, c, dd = 37, 63, 21, 79
    e = np.r_[np.ones(a + b), np.zeros(c + dd)]
    yy = np.r_[np.ones(a), np.zeros(b), np.ones(c), np.zeros(dd)]
    f2 = fit_logistic(DesignMatrix.from_columns([("e", e)]), yy)
    checks["2x2 log OR"] = (abs(f2.coef_of("e") - math.log(a * dd / (b * c))), 1e-6)
    checks["2x2 log OR se"] = (abs(f2.se_of("e") - math.sqrt(1 / a + 1 / b + 1 / c + 1 / dd)), 1e-6)

    # Wald p against an independent normal CDF
    zs = rng.uniform(-8, 8, 200)
    independent = np.array([math.erfc(abs(z) / math.sqrt(2)) for z in zs])
    checks["wald p"] = (max(abs(wald_p(z, 1.0) - q) for z, q in zip(zs, independent)), 1e-6)
    checks["wald p (scipy)"] = (abs(wald_p(1.96, 1.0) - 2 * norm.sf(1.96)), 1e-6)

    ok = all(v < tol for v, tol in checks.values())
    detail = ", ".join(f"{k}={v:.1e}" for k, (v, _) in checks.items())
    assert report("AC8 kernel correctness", ok, detail)


def test_ac9_determinism(report):
    spec = ExperimentSpec("IIIB", (0, 2), (1.5,), n_reps=30, master_seed=SEED,
                          overrides={"n_cases": 300, "n_controls": 300})
    outputs = {w: run_experiment(spec, threads=w) for w in (1, 4, 8)}
    texts = {w: (t.summary_csv(), t.typei_csv()) for w, t in outputs.items()}
    ok = texts[1] == texts[4] == texts[8]
    assert report("AC9 determinism across 1/4/8 workers", ok,
                  f"summary+typeI byte-identical: {ok} ({len(texts[1][0])} bytes)")


@pytest.mark.parametrize("method", ["Naive", "2SRI"])
def test_ac10_null_scan(report, method):
    p = setting_to_params(Setting.IB, 1.0, 1.5).replace(n_obs=2000)
    pheno, geno = simulate_null_scan(RngStream(SEED, 10), p, 200)
    pvals = [r.estimate.p3 for r in scan(pheno, geno, method, "linear")]
    slope = qq_slope(pvals)
    ok = len(pvals) == 200 and 0.8 <= slope <= 1.2
    assert report(f"AC10 null scan QQ slope ({method})", ok, f"{len(pvals)} variants, slope={slope:.3f}")
