"""Probability limits of the IV and OLS estimators under selection on ``S``.

Two independent routes are provided:

* :func:`plim_matrix` works for any :class:`~ivsel.sem_core.PathModel`. It
  conditions the implied covariance (Schur complement for adjustment, Tallis
  moments for truncation) and forms the covariance ratios.
* ``closed_form_*`` evaluate the scalar bias expressions for the four preset
  scenarios.

Adjustment behaves like truncation with ``psi = 1`` and no selection like
``psi = 0``, so every closed form takes ``psi`` in ``[0, 1]``.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import sem_core
from .errors import DegenerateEstimandError, ModelSpecError, ScenarioMismatchError
from .trunc_normal import TruncationSpec, psi_to_threshold, tallis_truncated_moments

__all__ = [
    "SelectionRule",
    "EstimandReport",
    "plim_matrix",
    "closed_form",
    "closed_form_baseline",
    "closed_form_mediator",
    "closed_form_confounded_mediator",
    "closed_form_treatment_confounder",
    "printed_treatment_confounder_ols",
    "corrected_treatment_confounder_ols",
    "treatment_confounder_discrepancy",
    "preference_margin",
    "bounds_interval",
    "rule_for_psi",
]

DENOMINATOR_TOL = 1e-10

# path labels for the additive bias terms
CONFOUNDING = "T<-U->Y"
MEDIATION = "T->S->Y"
MEDIATOR_CONFOUNDING = "T->S<-W->Y"
SELECTION_CONFOUNDING = "T->S<-U->Y"
TOTAL = "total"


@dataclass(frozen=True)
class SelectionRule:
    """How the analysis conditions on the selection variable.

    ``kind`` is ``"none"``, ``"adjustment"`` or ``"truncation"``; truncation
    keeps units with ``S >= s0`` and needs ``trunc``.
    """

    kind: str = "none"
    trunc: TruncationSpec | None = None

    def __post_init__(self):
        if self.kind not in ("none", "adjustment", "truncation"):
            raise ValueError(f"unknown selection kind {self.kind!r}")
        if self.kind == "truncation" and self.trunc is None:
            raise ValueError("truncation rule needs a TruncationSpec")
        if self.kind != "truncation" and self.trunc is not None:
            raise ValueError(f"{self.kind} rule takes no TruncationSpec")

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def adjustment(cls):
        return cls("adjustment")

    @classmethod
    def truncation(cls, *, severity=None, threshold=None):
        if (severity is None) == (threshold is None):
            raise ValueError("give exactly one of severity or threshold")
        if severity is not None:
            return cls("truncation", TruncationSpec.from_severity(severity))
        return cls("truncation", TruncationSpec.from_threshold(threshold))

    def label(self):
        if self.kind == "truncation":
            return f"truncation(severity={self.trunc.severity:.6g})"
        return self.kind

    def to_dict(self):
        d = {"kind": self.kind}
        if self.trunc is not None:
            d["threshold"] = self.trunc.threshold
            d["severity"] = self.trunc.severity
        return d


@functools.lru_cache(maxsize=4096)
def rule_for_psi(psi):
    """Selection rule whose deflation factor equals ``psi`` (0 none, 1 adjustment)."""
    if psi == 0:
        return SelectionRule.none()
    if psi == 1:
        return SelectionRule.adjustment()
    return SelectionRule.truncation(threshold=psi_to_threshold(psi))


@dataclass(frozen=True)
class EstimandReport:
    beta_true: float
    iv_plim: float
    ols_plim: float
    iv_bias_terms: list
    ols_bias_terms: list
    psi_used: float
    engine: str
    # not serialized; lets bounds_interval check where a report came from
    scenario: str | None = field(default=None, compare=False)

    @property
    def iv_bias(self):
        return self.iv_plim - self.beta_true

    @property
    def ols_bias(self):
        return self.ols_plim - self.beta_true

    def to_dict(self):
        return {
            "beta_true": self.beta_true,
            "iv_plim": self.iv_plim,
            "ols_plim": self.ols_plim,
            "iv_bias_terms": [[k, v] for k, v in self.iv_bias_terms],
            "ols_bias_terms": [[k, v] for k, v in self.ols_bias_terms],
            "psi_used": self.psi_used,
            "engine": self.engine,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _ratio(num, den, what):
    if abs(den) < DENOMINATOR_TOL:
        raise DegenerateEstimandError(f"{what} denominator {den:.3g} is numerically zero")
    return num / den


def conditioned_covariance(model, rule):
    """Covariance of the model's variables under ``rule`` and the psi it implies."""
    sigma = sem_core.implied_covariance(model)
    if rule.kind == "none":
        return sigma, 0.0
    if rule.kind == "adjustment":
        return sem_core.condition_on(sigma, model.selection), 1.0
    moments = tallis_truncated_moments(sigma, rule.trunc, node=model.selection)
    return sem_core.CovarianceStructure(sigma.order, moments.variance), moments.psi


def plim_matrix(model, rule):
    """Probability limits of IV and OLS for any model, from conditioned covariances.

    Adjustment uses a single Gaussian conditioning on ``S``: every stratum of
    ``S`` shares one conditional covariance, so averaging the stratum estimands
    over ``S`` returns the same value.

    Raises
    ------
    DegenerateEstimandError
        If the first stage or the treatment variance is below ``1e-10`` in magnitude.
    """
    cov, psi_used = conditioned_covariance(model, rule)
    z, t, y = model.instrument, model.treatment, model.outcome
    iv = _ratio(cov.cov(z, y), cov.cov(z, t), "IV first-stage")
    ols = _ratio(cov.cov(t, y), cov.cov(t, t), "OLS")
    beta = model.beta
    iv_terms, ols_terms = _attribute(model, psi_used, iv - beta, ols - beta)
    return EstimandReport(
        beta_true=beta,
        iv_plim=iv,
        ols_plim=ols,
        iv_bias_terms=iv_terms,
        ols_bias_terms=ols_terms,
        psi_used=psi_used,
        engine="matrix",
        scenario=model.scenario,
    )


def _with_remainder(known, total, label):
    """Closed-form terms followed by whatever is left of ``total``."""
    return known + [(label, total - sum(v for _, v in known))]


def _attribute(model, psi, iv_bias, ols_bias):
    """Split matrix-engine biases along the paths the closed forms name.

    Only preset scenarios get a path split; the last term absorbs the remainder
    so the terms always sum to the total.
    """
    scenario, p = model.scenario, model.params
    if scenario is None:
        return [(TOTAL, iv_bias)], [(TOTAL, ols_bias)]
    try:
        if scenario == "baseline":
            return [(CONFOUNDING, iv_bias)], [(CONFOUNDING, ols_bias)]
        conf_iv = _confounding_iv_term(p, psi)
        conf_ols = p["delta1"] * p["delta2"]
        if scenario == "mediator":
            return (
                _with_remainder([(CONFOUNDING, conf_iv)], iv_bias, MEDIATION),
                _with_remainder([(CONFOUNDING, conf_ols)], ols_bias, MEDIATION),
            )
        if scenario == "confounded_mediator":
            med = _mediation_term(p, psi)
            return (
                _with_remainder([(CONFOUNDING, conf_iv), (MEDIATION, med)], iv_bias, MEDIATOR_CONFOUNDING),
                _with_remainder([(CONFOUNDING, conf_ols), (MEDIATION, med)], ols_bias, MEDIATOR_CONFOUNDING),
            )
        if scenario == "treatment_confounder":
            den = _tc_denominator(p, psi)
            first = -p["delta1"] * p["delta2"] * psi * p["gamma"] ** 2 / den
            return (
                _with_remainder([(CONFOUNDING, first)], iv_bias, SELECTION_CONFOUNDING),
                [(TOTAL, ols_bias)],
            )
    except DegenerateEstimandError:
        pass
    return [(TOTAL, iv_bias)], [(TOTAL, ols_bias)]


def _check_psi(psi):
    if not 0.0 <= psi <= 1.0:
        raise ValueError(f"psi must lie in [0, 1], got {psi!r}")


def _selection_denominator(p, psi):
    den = 1.0 - psi * p["gamma"] ** 2
    if abs(den) < DENOMINATOR_TOL:
        raise DegenerateEstimandError("psi * gamma^2 = 1: the first stage vanishes")
    return den


def _confounding_iv_term(p, psi):
    return -p["delta1"] * p["delta2"] * psi * p["gamma"] ** 2 / _selection_denominator(p, psi)


def _mediation_term(p, psi):
    return p["gamma"] * p["tau"] * (1.0 - psi) / _selection_denominator(p, psi)


def _mediator_confounding_term(p, psi):
    return -p["gamma"] * p["delta3"] * p["delta4"] * psi / _selection_denominator(p, psi)


def _tc_denominator(p, psi):
    den = 1.0 - psi * p["gamma"] * (p["gamma"] + p["delta1"] * p["delta3"])
    if abs(den) < DENOMINATOR_TOL:
        raise DegenerateEstimandError("degenerate first stage in the treatment-confounder model")
    return den


def _need(params, names):
    missing = [n for n in names if n not in params]
    if missing:
        raise ModelSpecError(f"missing parameter(s) {missing}")
    return {n: float(params[n]) for n in names}


def _report(beta, iv_terms, ols_terms, psi, scenario):
    return EstimandReport(
        beta_true=beta,
        iv_plim=beta + sum(v for _, v in iv_terms),
        ols_plim=beta + sum(v for _, v in ols_terms),
        iv_bias_terms=iv_terms,
        ols_bias_terms=ols_terms,
        psi_used=psi,
        engine="closed_form",
        scenario=scenario,
    )


def closed_form_baseline(params, psi):
    """Selection on a pure descendant of treatment.

    IV bias is ``-d1*d2 * psi*g^2 / (1 - psi*g^2)``; OLS bias is ``d1*d2``
    whatever the selection.
    """
    _check_psi(psi)
    p = _need(params, ("beta", "gamma", "delta1", "delta2"))
    return _report(
        p["beta"],
        [(CONFOUNDING, _confounding_iv_term(p, psi))],
        [(CONFOUNDING, p["delta1"] * p["delta2"])],
        psi,
        "baseline",
    )


def closed_form_mediator(params, psi):
    """Selection variable that also mediates T -> Y through ``tau``.

    Both estimators pick up ``g*tau * (1 - psi) / (1 - psi*g^2)``, which
    vanishes under adjustment.
    """
    _check_psi(psi)
    p = _need(params, ("beta", "gamma", "tau", "delta1", "delta2"))
    med = _mediation_term(p, psi)
    return _report(
        p["beta"],
        [(CONFOUNDING, _confounding_iv_term(p, psi)), (MEDIATION, med)],
        [(CONFOUNDING, p["delta1"] * p["delta2"]), (MEDIATION, med)],
        psi,
        "mediator",
    )


def closed_form_confounded_mediator(params, psi):
    """Mediator model plus a latent ``W`` confounding S -> Y.

    Adds ``-g*d3*d4 * psi / (1 - psi*g^2)`` to both the IV and the OLS bias.
    """
    _check_psi(psi)
    p = _need(params, ("beta", "gamma", "tau", "delta1", "delta2", "delta3", "delta4"))
    med = _mediation_term(p, psi)
    extra = _mediator_confounding_term(p, psi)
    return _report(
        p["beta"],
        [(CONFOUNDING, _confounding_iv_term(p, psi)), (MEDIATION, med), (MEDIATOR_CONFOUNDING, extra)],
        [(CONFOUNDING, p["delta1"] * p["delta2"]), (MEDIATION, med), (MEDIATOR_CONFOUNDING, extra)],
        psi,
        "confounded_mediator",
    )


def closed_form_treatment_confounder(params, psi):
    """Selection on a descendant of both treatment and the latent confounder.

    The IV plim comes from its closed form. The OLS plim is taken from the
    matrix engine; compare :func:`printed_treatment_confounder_ols`.
    """
    _check_psi(psi)
    p = _need(params, ("beta", "gamma", "delta1", "delta2", "delta3"))
    den = _tc_denominator(p, psi)
    iv_terms = [
        (CONFOUNDING, -p["delta1"] * p["delta2"] * psi * p["gamma"] ** 2 / den),
        (SELECTION_CONFOUNDING, -p["gamma"] * p["delta3"] * p["delta2"] * psi / den),
    ]
    model_params = {"pi": float(params.get("pi", sem_core.preset_defaults("treatment_confounder")["pi"])), **p}
    model = sem_core.build_model("treatment_confounder", model_params)
    ols_bias = plim_matrix(model, rule_for_psi(psi)).ols_bias
    return _report(p["beta"], iv_terms, [(TOTAL, ols_bias)], psi, "treatment_confounder")


def printed_treatment_confounder_ols(params, psi):
    """OLS plim for the treatment-confounder model exactly as typeset.

    Its denominators read ``1 - psi*g*(g + d1*d3)^2``; the matrix engine does not
    agree with this form (see :func:`treatment_confounder_discrepancy`).
    """
    p = _need(params, ("beta", "gamma", "delta1", "delta2", "delta3"))
    g, d1, d2, d3 = p["gamma"], p["delta1"], p["delta2"], p["delta3"]
    den = 1.0 - psi * g * (g + d1 * d3) ** 2
    if abs(den) < DENOMINATOR_TOL:
        raise DegenerateEstimandError("degenerate denominator in printed OLS formula")
    return p["beta"] + d1 * d2 * (1.0 - psi * (g**2 + g * d1 * d3 + d3**2)) / den - g * d3 * d2 * psi / den


def corrected_treatment_confounder_ols(params, psi):
    """Same numerators with denominator ``1 - psi*(g + d1*d3)^2``.

    ``g + d1*d3`` is Cov(T, S), so this denominator is Var(T | selection).
    """
    p = _need(params, ("beta", "gamma", "delta1", "delta2", "delta3"))
    g, d1, d2, d3 = p["gamma"], p["delta1"], p["delta2"], p["delta3"]
    den = 1.0 - psi * (g + d1 * d3) ** 2
    if abs(den) < DENOMINATOR_TOL:
        raise DegenerateEstimandError("degenerate treatment variance")
    return p["beta"] + d1 * d2 * (1.0 - psi * (g**2 + g * d1 * d3 + d3**2)) / den - g * d3 * d2 * psi / den


_CLOSED_FORMS = {
    "baseline": closed_form_baseline,
    "mediator": closed_form_mediator,
    "confounded_mediator": closed_form_confounded_mediator,
    "treatment_confounder": closed_form_treatment_confounder,
}


def closed_form(scenario, params, psi):
    """Dispatch to the closed form for preset ``scenario``."""
    try:
        fn = _CLOSED_FORMS[scenario]
    except KeyError:
        raise ScenarioMismatchError(f"no closed form for scenario {scenario!r}") from None
    return fn(params, psi)


def random_feasible_params(scenario, rng, *, bound=0.95, min_shock=0.05, max_tries=100_000):
    """Draw preset parameters uniformly from ``[-bound, bound]`` until feasible.

    Draws whose smallest shock variance is below ``min_shock`` are rejected as
    well, which keeps first stages away from zero.
    """
    names = list(sem_core.preset_defaults(scenario))
    for _ in range(max_tries):
        params = dict(zip(names, rng.uniform(-bound, bound, size=len(names))))
        try:
            model = sem_core.build_model(scenario, params)
            shocks = sem_core.solve_shock_variances(model)
        except Exception:
            continue
        if min(shocks.var.values()) >= min_shock:
            return params
    raise RuntimeError(f"no feasible draw for {scenario} after {max_tries} tries")


def treatment_confounder_discrepancy(n_params=1000, psis=None, seed=0):
    """Compare the OLS formulas for the treatment-confounder model with the matrix engine.

    Returns a JSON-ready dict: one record per (parameter draw, psi) with the
    matrix-engine plims, the typeset OLS formula, the corrected-denominator OLS
    formula and the IV closed form, plus max-abs-difference summaries.
    """
    if psis is None:
        psis = [round(0.1 * k, 1) for k in range(1, 11)]
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n_params):
        params = random_feasible_params("treatment_confounder", rng)
        model = sem_core.build_model("treatment_confounder", params)
        for ps in psis:
            rule = rule_for_psi(ps)
            truth = plim_matrix(model, rule)
            psi_used = truth.psi_used
            iv_closed = closed_form_treatment_confounder(params, psi_used).iv_plim
            try:
                printed = printed_treatment_confounder_ols(params, psi_used)
            except DegenerateEstimandError:
                printed = math.nan
            records.append({
                "params": params,
                "psi": psi_used,
                "rule": rule.kind,
                "iv_matrix": truth.iv_plim,
                "iv_closed_form": iv_closed,
                "ols_matrix": truth.ols_plim,
                "ols_printed": printed,
                "ols_corrected": corrected_treatment_confounder_ols(params, psi_used),
            })

    def max_abs(a, b):
        diffs = [abs(r[a] - r[b]) for r in records]
        return float(np.nanmax(diffs)) if diffs else 0.0

    return {
        "scenario": "treatment_confounder",
        "n_params": n_params,
        "psis": list(psis),
        "max_abs_diff_iv": max_abs("iv_closed_form", "iv_matrix"),
        "max_abs_diff_ols_printed": max_abs("ols_printed", "ols_matrix"),
        "max_abs_diff_ols_corrected": max_abs("ols_corrected", "ols_matrix"),
        "records": records,
    }


def preference_margin(params, psi):
    """``|OLS bias| - |IV bias|`` in the baseline scenario; positive means IV is less biased.

    Equals ``|d1*d2| * (1 - 2*psi*g^2) / (1 - psi*g^2)``, which changes sign at
    ``psi*g^2 = 1/2``.
    """
    p = _need(params, ("gamma", "delta1", "delta2"))
    x = psi * p["gamma"] ** 2
    if abs(1.0 - x) < DENOMINATOR_TOL:
        raise DegenerateEstimandError("psi * gamma^2 = 1: the first stage vanishes")
    return abs(p["delta1"] * p["delta2"]) * (1.0 - 2.0 * x) / (1.0 - x)


def bounds_interval(report_iv, report_ols):
    """Interval spanned by the selected-sample IV plim and the OLS plim.

    Returns ``(lo, hi, applies)``. ``applies`` is True only for the baseline
    scenario, where the interval is guaranteed to contain beta.

    Raises
    ------
    ScenarioMismatchError
        If the two reports come from different scenarios.
    """
    if report_iv.scenario != report_ols.scenario:
        raise ScenarioMismatchError(
            f"reports come from {report_iv.scenario!r} and {report_ols.scenario!r}"
        )
    lo = min(report_iv.iv_plim, report_ols.ols_plim)
    hi = max(report_iv.iv_plim, report_ols.ols_plim)
    return lo, hi, report_iv.scenario == "baseline"
