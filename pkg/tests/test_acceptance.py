"""Acceptance suite: one recorded pass/fail line per criterion, printed at the end of the run."""
import json
import math
import time

import mpmath
import numpy as np
import pytest

from conftest import feasible_draws
from ivsel import estimands, mc_oracle, sem_core, sensitivity
from ivsel.estimands import SelectionRule, closed_form, plim_matrix, rule_for_psi
from ivsel.trunc_normal import TruncationSpec, psi, severity_to_threshold, tallis_truncated_moments

PSIS = [round(0.1 * k, 1) for k in range(1, 11)]


def oracle_truncated_iv(beta, g, d1d2, q):
    """IV plim after truncating at the q-quantile of S, in 40-digit arithmetic."""
    mpmath.mp.dps = 40
    s0 = mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(q) - 1)
    lam = mpmath.npdf(s0) / (1 - mpmath.ncdf(s0))
    ps = lam * (lam - s0)
    return float(beta - d1d2 * ps * g**2 / (1 - ps * g**2))


@pytest.fixture(scope="module")
def region():
    return sensitivity.fig2b(steps=201, rule_family="both")


def test_criterion_1_engine_equivalence(criterion):
    draws = {s: feasible_draws(s, 1000, seed=2024) for s in ("baseline", "mediator", "confounded_mediator")}
    start = time.perf_counter()
    worst = 0.0
    for scenario, params_list in draws.items():
        for params in params_list:
            model = sem_core.build_model(scenario, params)
            for ps in PSIS:
                mat = plim_matrix(model, rule_for_psi(ps))
                cf = closed_form(scenario, params, mat.psi_used)
                worst = max(worst, abs(mat.iv_plim - cf.iv_plim), abs(mat.ols_plim - cf.ols_plim))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 10
    criterion(1, ok, f"closed form vs matrix, 30000 cases: max diff {worst:.2e} (<1e-10), {elapsed:.1f}s (<10s)")
    assert ok


def test_criterion_2_point_checks(criterion):
    m = sem_core.build_model("baseline", {"pi": 0.5, "beta": 0.4, "gamma": 0.6, "delta1": 0.5, "delta2": 0.5})
    adj = plim_matrix(m, SelectionRule.adjustment()).iv_plim
    tr = plim_matrix(m, SelectionRule.truncation(severity=0.5)).iv_plim
    target = oracle_truncated_iv(0.4, 0.6, 0.25, "0.5")
    ok = abs(adj - 0.259375) <= 1e-12 and abs(tr - target) <= 1e-6
    criterion(2, ok, f"adjustment IV {adj:.12f} (0.259375 +-1e-12); truncation IV {tr:.7f} vs "
                     f"high-precision evaluation {target:.7f} (+-1e-6; the rounded 0.325673 is "
                     f"{abs(tr - 0.325673):.1e} away)")
    assert ok


def test_criterion_3_psi_calibration(criterion):
    p291 = float(psi(severity_to_threshold(0.291)))
    curve = np.array([r[2] for r in sensitivity.fig2a(600)])
    increasing = bool(np.all(np.diff(curve) > 0))
    ok = abs(p291 - 0.5) <= 0.005 and increasing and len(curve) == 600
    criterion(3, ok, f"psi(29.1%) = {p291:.5f} (0.5 +-0.005); strictly increasing on 600 points: {increasing}")
    assert ok


def test_criterion_4_preference_boundary(criterion, region):
    rows = [r for r in region.rows if r.rule == "truncation" and r.status == "ok"]
    gammas = sorted({r.gamma for r in rows})
    step = gammas[1] - gammas[0]
    by_q = {}
    for r in rows:
        by_q.setdefault(r.severity, []).append(r)
    worst = 0.0
    misplaced = 0
    for q, cells in by_q.items():
        ps = cells[0].psi
        g_star = math.sqrt(0.5 / ps)
        for r in cells:
            predicted = "IV" if ps * r.gamma**2 < 0.5 else "OLS"
            if r.least_biased != predicted:
                misplaced += 1
                worst = max(worst, abs(r.gamma - g_star))
    weak_iv = all(r.least_biased == "IV" for r in rows if abs(r.gamma) < 0.707)
    ok = worst <= step and weak_iv
    criterion(4, ok, f"{len(rows)} cells; {misplaced} off the psi*gamma^2=1/2 prediction, all within "
                     f"{worst:.4f} of the curve (one cell = {step:.4f}); |gamma|<0.707 all IV: {weak_iv}")
    assert ok


def test_criterion_5_adjustment_dominates(criterion, region):
    rows = [r for r in region.rows if r.status == "ok"]
    pairs = list(zip(rows[::2], rows[1::2]))
    assert all(t.rule == "truncation" and a.rule == "adjustment" and t.gamma == a.gamma for t, a in pairs)
    worst = max(abs(t.iv_bias) - abs(a.iv_bias) for t, a in pairs)
    ok = worst <= 1e-12
    criterion(5, ok, f"{len(pairs)} cells: max(|trunc bias| - |adj bias|) = {worst:.2e} (<=1e-12)")
    assert ok


def test_criterion_6_truncation_limit(criterion, baseline_model):
    adj = plim_matrix(baseline_model, SelectionRule.adjustment())
    gaps = [abs(plim_matrix(baseline_model, SelectionRule.truncation(threshold=float(s))).iv_plim - adj.iv_plim)
            for s in range(9)]
    decreasing = all(b < a for a, b in zip(gaps, gaps[1:]))
    rel = gaps[-1] / abs(adj.iv_bias)
    ok = decreasing and rel <= 0.02
    criterion(6, ok, f"gap decreasing over s0=0..8: {decreasing}; at s0=8 gap/|adj bias| = {rel:.4f} (<=0.02)")
    assert ok


def test_criterion_7_bounds(criterion):
    rng = np.random.default_rng(77)
    violations, worst = 0, -math.inf
    for _ in range(10_000):
        params = estimands.random_feasible_params("baseline", rng)
        m = sem_core.build_model("baseline", params)
        ps = float(rng.uniform(0.01, 1.0))
        iv = plim_matrix(m, rule_for_psi(ps))
        lo, hi, applies = estimands.bounds_interval(iv, iv)
        slack = max(lo - params["beta"], params["beta"] - hi)
        worst = max(worst, slack)
        violations += (slack > 1e-12) or not applies
    ok = violations == 0
    criterion(7, ok, f"10000 baseline draws: {violations} with beta outside [IV, OLS] beyond 1e-12 "
                     f"(worst excess {worst:.1e})")
    assert ok


def test_criterion_8_monte_carlo(criterion):
    start = time.perf_counter()
    summary = mc_oracle.verify(n=10**6, seed=20240917)
    elapsed = time.perf_counter() - start
    zmax = max(abs(r["z"]) for r in summary["rows"])
    ok = summary["passed"] and elapsed < 120
    criterion(8, ok, f"{len(summary['rows'])} preset x rule x method cells at n=1e6: max |z| = {zmax:.2f} "
                     f"(<=4), {elapsed:.1f}s (<120s)")
    assert ok


def _rejection_moments(sigma, c, p, n, rng, n_batches=100, chunk=10**6):
    """Truncated mean/covariance by rejection, with batch-means standard errors."""
    chol = np.linalg.cholesky(sigma)
    k = sigma.shape[0]
    per_batch = n // n_batches
    covs = []
    for _ in range(n_batches):
        x = rng.standard_normal((per_batch, k)) @ chol.T
        kept = x[x @ c >= p]
        covs.append(np.cov(kept, rowvar=False))
    covs = np.array(covs)
    return covs.mean(axis=0), covs.std(axis=0, ddof=1) / math.sqrt(n_batches)


def test_criterion_9_tallis_vs_rejection(criterion):
    rng = np.random.default_rng(9)
    worst_z = 0.0
    for _ in range(5):
        a = rng.standard_normal((5, 5))
        sigma = a @ a.T / 5 + 0.2 * np.eye(5)
        c = rng.standard_normal(5)
        c /= np.linalg.norm(c)
        p = float(rng.uniform(-0.5, 1.0)) * math.sqrt(c @ sigma @ c)
        cs = sem_core.CovarianceStructure(tuple(f"X{i}" for i in range(5)), sigma)
        tm = tallis_truncated_moments(cs, TruncationSpec(p, c))
        est, se = _rejection_moments(sigma, c, p, 10**7, rng)
        worst_z = max(worst_z, float(np.max(np.abs(est - tm.variance) / se)))
    ok = worst_z <= 4
    criterion(9, ok, f"5 random 5-dim structures, 1e7 draws each: max |z| over covariance entries "
                     f"= {worst_z:.2f} (<=4)")
    assert ok


def test_criterion_10_discrepancy_report(criterion, tmp_path):
    report = estimands.treatment_confounder_discrepancy(n_params=1000)
    path = tmp_path / "treatment_confounder_discrepancy.json"
    path.write_text(json.dumps(report))
    loaded = json.loads(path.read_text())
    iv = loaded["max_abs_diff_iv"]
    ok = len(loaded["records"]) == 10_000 and iv < 1e-10
    criterion(10, ok, f"report with {len(loaded['records'])} records; IV max diff {iv:.1e} (<1e-10); "
                      f"printed OLS max diff {loaded['max_abs_diff_ols_printed']:.3f}, corrected "
                      f"{loaded['max_abs_diff_ols_corrected']:.1e}")
    assert ok
