import csv
import io
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ivsel import sensitivity
from ivsel.errors import ModelSpecError
from ivsel.sensitivity import Axis, SweepGrid, classify_least_biased, psi_curve, run_sweep
from ivsel.trunc_normal import psi, severity_to_threshold


class TestPsiCurve:
    def test_values(self):
        rows = psi_curve([1e-6, 0.291, 0.5])
        assert rows[0][2] < 1e-4
        assert rows[1][2] == pytest.approx(0.5, abs=2e-3)
        assert rows[2] == (0.5, 0.0, pytest.approx(2 / math.pi, rel=1e-14))

    def test_fig2a_monotone(self):
        rows = sensitivity.fig2a(599)
        ps = np.array([r[2] for r in rows])
        assert len(rows) == 599
        assert np.all(np.diff(ps) > 0)
        assert 0 < ps[0] and ps[-1] < 1

    def test_fig2a_csv(self):
        lines = sensitivity.fig2a_csv(sensitivity.fig2a(3)).splitlines()
        assert lines[0] == "severity,s0,psi"
        mpmath.mp.dps = 30
        for line, q in zip(lines[1:], ("0.25", "0.5", "0.75")):
            s0 = mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(q) - 1)
            lam = mpmath.npdf(s0) / (1 - mpmath.ncdf(s0))
            expected = [float(q), float(s0), float(lam * (lam - s0))]
            got = [float(v) for v in line.split(",")]
            assert got == pytest.approx(expected, rel=1e-11, abs=1e-12)


class TestClassify:
    @pytest.mark.parametrize("iv, ols, label", [
        (-0.054878, 0.25, "IV"), (0.3, 0.3, "tie"), (-0.3, 0.25, "OLS"), (-0.25, 0.25, "tie"),
    ])
    def test_examples(self, iv, ols, label):
        assert classify_least_biased(iv, ols) == label

    def test_tolerance(self):
        assert classify_least_biased(0.1, 0.1 + 1e-13) == "tie"
        assert classify_least_biased(0.1, 0.1 + 1e-13, tol=0) == "IV"

    @given(iv=st.floats(-2, 2), ols=st.floats(-2, 2))
    def test_consistent_with_margin_sign(self, iv, ols):
        margin = abs(ols) - abs(iv)
        label = classify_least_biased(iv, ols)
        assert label == ("tie" if abs(margin) <= 1e-12 else "IV" if margin > 0 else "OLS")


class TestAxisAndGrid:
    def test_parse(self):
        a = Axis.parse("tau=-1:1:41")
        assert (a.name, a.lo, a.hi, a.steps) == ("tau", -1.0, 1.0, 41)
        assert a.values()[0] == -1 and a.values()[-1] == 1

    def test_severity_clamped(self):
        v = Axis("severity", 0, 1, 3).values()
        assert list(v) == [1e-4, 0.5, 1 - 1e-4]

    @pytest.mark.parametrize("text", ["tau", "tau=0:1", "kappa=0:1:3", "tau=0:2:3", "severity=0:1.5:3",
                                      "tau=0:1:0"])
    def test_bad_axis(self, text):
        with pytest.raises(ModelSpecError):
            Axis.parse(text)

    def test_grid_validation(self):
        with pytest.raises(ModelSpecError):
            SweepGrid("nope", axes=("gamma=0:1:3",))
        with pytest.raises(ModelSpecError):
            SweepGrid("baseline", axes=())
        with pytest.raises(ModelSpecError):
            SweepGrid("baseline", axes=("gamma=0:1:3", "gamma=0:1:3"))
        with pytest.raises(ModelSpecError):
            SweepGrid("baseline", axes=("tau=0:1:3",))
        with pytest.raises(ModelSpecError):
            SweepGrid("baseline", fixed={"psi": 0.5}, axes=("severity=0:1:3",))

    def test_row_major_order(self):
        g = SweepGrid("baseline", axes=("gamma=0:1:3", "severity=0.2:0.8:2"))
        cells = list(g.cells())
        assert [(c["gamma"], c["severity"]) for c in cells] == [
            (0, 0.2), (0, 0.8), (0.5, 0.2), (0.5, 0.8), (1, 0.2), (1, 0.8)]

    def test_truncation_needs_level(self):
        with pytest.raises(ModelSpecError):
            run_sweep(SweepGrid("baseline", axes=("gamma=0:1:3",)))
        with pytest.raises(ModelSpecError):
            run_sweep(SweepGrid("baseline", fixed={"severity": 0.5}, axes=("gamma=0:1:3",)), "bogus")


@pytest.fixture(scope="module")
def region():
    return sensitivity.fig2b(steps=81, rule_family="both")


class TestRegionMap:
    def test_shape_and_order(self, region):
        assert len(region.rows) == 2 * 81 * 81
        assert [r.rule for r in region.rows[:4]] == ["truncation", "adjustment"] * 2

    def test_infeasible_gamma_one(self, region):
        bad = [r for r in region.rows if r.status != "ok"]
        assert bad and all(r.gamma == 1.0 and r.least_biased == "infeasible" for r in bad)
        assert all(math.isnan(r.iv_bias) for r in bad)

    def test_weak_selection_always_iv(self, region):
        assert all(r.least_biased == "IV" for r in region.rows if abs(r.gamma) < 0.707)

    def test_boundary_is_half_psi_gamma_sq(self, region):
        rows = [r for r in region.rows if r.rule == "truncation" and r.status == "ok"]
        gam = sorted({r.gamma for r in rows})
        sev = sorted({r.severity for r in rows})
        label = {(r.gamma, r.severity): r.least_biased for r in rows}
        for q in sev:
            ps = float(psi(severity_to_threshold(q)))
            flips = [g for g in gam if label[(g, q)] != "IV"]
            g_star = math.sqrt(0.5 / ps)
            step = gam[1] - gam[0]
            if flips:
                assert abs(min(flips) - g_star) <= step
                assert all(label[(g, q)] == "OLS" for g in gam if g > min(flips))
            else:
                assert g_star >= gam[-1] - step

    def test_dominance_and_bounds_hold_everywhere(self, region):
        rows = [r for r in region.rows if r.status == "ok"]
        for tr, adj in zip(rows[::2], rows[1::2]):
            assert tr.gamma == adj.gamma
            assert abs(adj.iv_bias) >= abs(tr.iv_bias) - 1e-12
        for r in rows:
            beta = r.iv_plim - r.iv_bias
            assert min(r.iv_plim, r.ols_plim) - 1e-12 <= beta <= max(r.iv_plim, r.ols_plim) + 1e-12

    def test_adjustment_rows(self, region):
        adj = [r for r in region.rows if r.rule == "adjustment"]
        assert all(r.psi == 1.0 and math.isnan(r.severity) for r in adj)

    def test_threads_do_not_change_output(self):
        a = sensitivity.fig2b(steps=11, rule_family="both")
        b = sensitivity.fig2b(steps=11, rule_family="both", threads=4)
        assert a.to_csv() == b.to_csv()


def test_gamma_sign_symmetry():
    pos = run_sweep(SweepGrid("baseline", fixed={"severity": 0.6}, axes=("gamma=0:0.9:10",)))
    neg = run_sweep(SweepGrid("baseline", fixed={"severity": 0.6}, axes=("gamma=0:-0.9:10",)))
    for a, b in zip(pos.rows, neg.rows):
        assert a.iv_bias == pytest.approx(b.iv_bias, abs=1e-14)
        assert a.ols_bias == pytest.approx(b.ols_bias, abs=1e-14)
        assert a.least_biased == b.least_biased


def test_engines_agree():
    g = SweepGrid("confounded_mediator", fixed={"psi": 0.7}, axes=("tau=-0.5:0.5:5", "delta3=-0.5:0.5:5"))
    a = run_sweep(g, "both")
    b = run_sweep(g, "both", engine="closed_form")
    for x, y in zip(a.rows, b.rows):
        assert x.status == y.status
        if x.status == "ok":
            assert abs(x.iv_plim - y.iv_plim) < 1e-10


def test_mediator_truncation_can_exceed_adjustment():
    g = SweepGrid("mediator", fixed={"severity": 0.5, "delta2": -0.5}, axes=("tau=-1:1:41",))
    res = run_sweep(g, "both")
    assert len(res.rows) == 82
    ok = [r for r in res.rows if r.status == "ok"]
    pairs = list(zip(ok[::2], ok[1::2]))
    worse = [t for t, a in pairs if abs(t.iv_bias) > abs(a.iv_bias)]
    better = [t for t, a in pairs if abs(t.iv_bias) < abs(a.iv_bias)]
    assert worse and better


def test_mediator_tau_sweep_cardinality_and_csv():
    g = SweepGrid("mediator", fixed={"severity": 0.4}, axes=("tau=-1:1:41",))
    text = run_sweep(g).to_csv()
    rows = list(csv.reader(io.StringIO(text)))
    assert ",".join(rows[0]) == ("scenario,rule,gamma,severity,psi,param_overrides,iv_plim,ols_plim,"
                                 "iv_bias,ols_bias,margin,least_biased,status")
    assert len(rows) == 42
    statuses = {r[-1] for r in rows[1:]}
    assert statuses <= {"ok", "infeasible"}
    assert "infeasible" in statuses  # |tau| near 1 cannot be standardized
    assert rows[1][5] == "tau=-1"
    for r in rows[1:]:
        if r[-1] == "ok":
            assert len(r[6].replace("-", "").replace(".", "").lstrip("0")) <= 12
