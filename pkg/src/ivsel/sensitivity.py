"""Parameter sweeps over the bias expressions and IV-vs-OLS region maps."""
from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import sem_core
from .errors import DegenerateEstimandError, InfeasibleModelError, ModelSpecError
from .estimands import SelectionRule, closed_form, plim_matrix
from .trunc_normal import psi, psi_to_threshold, severity_to_threshold

__all__ = [
    "Axis",
    "SweepGrid",
    "SweepRow",
    "SweepResult",
    "AXIS_NAMES",
    "CSV_HEADER",
    "psi_curve",
    "classify_least_biased",
    "run_sweep",
    "fig2a",
    "fig2b",
]

AXIS_NAMES = ("gamma", "severity", "psi", "tau", "delta1", "delta2", "delta3", "delta4", "beta")
SEVERITY_CLAMP = (1e-4, 1 - 1e-4)
CSV_HEADER = (
    "scenario", "rule", "gamma", "severity", "psi", "param_overrides", "iv_plim", "ols_plim",
    "iv_bias", "ols_bias", "margin", "least_biased", "status",
)


@dataclass(frozen=True)
class Axis:
    """``steps`` linearly spaced values from ``lo`` to ``hi`` inclusive."""

    name: str
    lo: float
    hi: float
    steps: int

    def __post_init__(self):
        if self.name not in AXIS_NAMES:
            raise ModelSpecError(f"unknown axis {self.name!r}; choose from {AXIS_NAMES}")
        if self.steps < 1:
            raise ModelSpecError("an axis needs at least one step")
        if self.name in ("severity", "psi"):
            if not (0 <= self.lo <= 1 and 0 <= self.hi <= 1):
                raise ModelSpecError(f"{self.name} axis must lie in [0, 1]")
        elif not (-1 <= self.lo <= 1 and -1 <= self.hi <= 1):
            raise ModelSpecError(f"{self.name} axis must lie in [-1, 1]")

    @classmethod
    def parse(cls, text):
        """Parse ``name=lo:hi:steps``, e.g. ``tau=-1:1:41``."""
        try:
            name, rng = text.split("=", 1)
            lo, hi, steps = rng.split(":")
            return cls(name.strip(), float(lo), float(hi), int(steps))
        except ValueError as exc:
            raise ModelSpecError(f"bad axis {text!r}, expected name=lo:hi:steps") from exc

    def values(self):
        vals = np.linspace(self.lo, self.hi, self.steps)
        if self.name == "severity":
            vals = np.clip(vals, *SEVERITY_CLAMP)
        elif self.name == "psi":
            vals = np.clip(vals, *(float(psi(severity_to_threshold(q))) for q in SEVERITY_CLAMP))
        return vals


@dataclass(frozen=True)
class SweepGrid:
    """A preset scenario, fixed parameter values and one or two swept axes.

    ``fixed`` may also hold ``severity`` or ``psi`` to pin the truncation level
    when neither is swept.
    """

    scenario: str
    fixed: dict = field(default_factory=dict)
    axes: tuple = ()

    def __post_init__(self):
        if self.scenario not in sem_core.PRESETS:
            raise ModelSpecError(f"unknown scenario {self.scenario!r}")
        axes = tuple(a if isinstance(a, Axis) else Axis.parse(a) for a in self.axes)
        if not 1 <= len(axes) <= 2:
            raise ModelSpecError("a sweep needs one or two axes")
        if len({a.name for a in axes}) != len(axes):
            raise ModelSpecError("duplicate axis")
        trunc_keys = {a.name for a in axes} | set(self.fixed)
        if {"severity", "psi"} <= trunc_keys:
            raise ModelSpecError("give severity or psi, not both")
        known = set(sem_core.preset_defaults(self.scenario)) | {"severity", "psi"}
        for name in [a.name for a in axes] + list(self.fixed):
            if name not in known:
                raise ModelSpecError(f"scenario {self.scenario!r} has no parameter {name!r}")
        object.__setattr__(self, "axes", axes)

    def cells(self):
        """Axis-value dicts in row-major order over the axes as declared."""
        names = [a.name for a in self.axes]
        for combo in itertools.product(*(a.values() for a in self.axes)):
            yield dict(zip(names, (float(v) for v in combo)))


@dataclass(frozen=True)
class SweepRow:
    scenario: str
    rule: str
    gamma: float
    severity: float
    psi: float
    param_overrides: dict
    iv_plim: float
    ols_plim: float
    iv_bias: float
    ols_bias: float
    margin: float
    least_biased: str
    status: str

    def csv_fields(self):
        overrides = ";".join(f"{k}={_fmt(v)}" for k, v in sorted(self.param_overrides.items()))
        return [
            self.scenario, self.rule, _fmt(self.gamma), _fmt(self.severity), _fmt(self.psi),
            overrides, _fmt(self.iv_plim), _fmt(self.ols_plim), _fmt(self.iv_bias),
            _fmt(self.ols_bias), _fmt(self.margin), self.least_biased, self.status,
        ]


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.12g}"


@dataclass(frozen=True)
class SweepResult:
    rows: list

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(row.csv_fields())
        return buf.getvalue()

    def column(self, name, rule=None):
        return np.array([getattr(r, name) for r in self.rows if rule is None or r.rule == rule])


def psi_curve(severity_grid):
    """Rows ``(severity, s0, psi)`` for each severity in ``severity_grid``."""
    rows = []
    for q in severity_grid:
        s0 = float(severity_to_threshold(q))
        rows.append((float(q), s0, float(psi(s0))))
    return rows


def classify_least_biased(iv_bias, ols_bias, tol=1e-12):
    """``"IV"``, ``"OLS"`` or ``"tie"`` by absolute bias; ties within ``tol``."""
    diff = abs(ols_bias) - abs(iv_bias)
    if abs(diff) <= tol:
        return "tie"
    return "IV" if diff > 0 else "OLS"


def _cell_rules(cell, fixed, rule_family):
    level = {**{k: fixed[k] for k in ("severity", "psi") if k in fixed}, **cell}
    rules = []
    if rule_family in ("truncation", "both"):
        if "psi" in level:
            s0 = psi_to_threshold(level["psi"])
        elif "severity" in level:
            q = min(max(level["severity"], SEVERITY_CLAMP[0]), SEVERITY_CLAMP[1])
            s0 = float(severity_to_threshold(q))
        else:
            raise ModelSpecError("truncation sweeps need a severity or psi axis or fixed value")
        rules.append(SelectionRule.truncation(threshold=s0))
    if rule_family in ("adjustment", "both"):
        rules.append(SelectionRule.adjustment())
    if not rules:
        raise ModelSpecError(f"unknown rule family {rule_family!r}")
    return rules


def _evaluate(grid, cell, rule, engine):
    params = {k: v for k, v in {**grid.fixed, **cell}.items() if k not in ("severity", "psi")}
    model_params = {**sem_core.preset_defaults(grid.scenario), **params}
    overrides = {k: v for k, v in params.items() if k != "gamma"}
    if rule.kind == "truncation":
        severity = rule.trunc.severity
        ps = float(psi(rule.trunc.threshold))
    else:
        severity, ps = math.nan, 1.0
    base = dict(
        scenario=grid.scenario, rule=rule.kind, gamma=model_params["gamma"],
        severity=severity, psi=ps, param_overrides=overrides,
    )
    nan = math.nan
    try:
        model = sem_core.build_model(grid.scenario, params)
        sem_core.solve_shock_variances(model)
        if engine == "matrix":
            report = plim_matrix(model, rule)
        else:
            report = closed_form(grid.scenario, model_params, ps)
    except InfeasibleModelError:
        return SweepRow(**base, iv_plim=nan, ols_plim=nan, iv_bias=nan, ols_bias=nan,
                        margin=nan, least_biased="infeasible", status="infeasible")
    except DegenerateEstimandError:
        return SweepRow(**base, iv_plim=nan, ols_plim=nan, iv_bias=nan, ols_bias=nan,
                        margin=nan, least_biased="infeasible", status="degenerate")
    iv_bias, ols_bias = report.iv_bias, report.ols_bias
    return SweepRow(
        **base,
        iv_plim=report.iv_plim,
        ols_plim=report.ols_plim,
        iv_bias=iv_bias,
        ols_bias=ols_bias,
        margin=abs(ols_bias) - abs(iv_bias),
        least_biased=classify_least_biased(iv_bias, ols_bias),
        status="ok",
    )


def run_sweep(grid, rule_family="truncation", *, engine="matrix", threads=None):
    """Evaluate every grid cell under the chosen selection rule(s).

    Parameters
    ----------
    grid : SweepGrid
    rule_family : {"truncation", "adjustment", "both"}
        With ``"both"`` each cell yields a truncation row followed by an
        adjustment row.
    engine : {"matrix", "closed_form"}
    threads : int, optional
        Worker threads; the row order does not depend on it.

    Cells whose parameters cannot be standardized get ``status="infeasible"``
    and cells with a vanishing first stage ``status="degenerate"``.
    """
    if engine not in ("matrix", "closed_form"):
        raise ValueError(f"unknown engine {engine!r}")
    tasks = [
        (cell, rule)
        for cell in grid.cells()
        for rule in _cell_rules(cell, grid.fixed, rule_family)
    ]

    def work(task):
        return _evaluate(grid, task[0], task[1], engine)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, tasks))
    else:
        rows = [work(t) for t in tasks]
    return SweepResult(rows)


def fig2a(steps=999):
    """Psi against truncation severity on an evenly spaced interior grid."""
    return psi_curve(np.linspace(0, 1, steps + 2)[1:-1])


def fig2b(steps=201, params=None, rule_family="truncation", threads=None):
    """Least-biased estimator over gamma in [0, 1] x severity in (0, 1), baseline model."""
    grid = SweepGrid(
        "baseline",
        fixed=dict(params or {}),
        axes=(Axis("gamma", 0.0, 1.0, steps), Axis("severity", 0.0, 1.0, steps)),
    )
    return run_sweep(grid, rule_family, threads=threads)


def fig2a_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["severity", "s0", "psi"])
    for q, s0, ps in rows:
        writer.writerow([_fmt(q), _fmt(s0), _fmt(ps)])
    return buf.getvalue()
