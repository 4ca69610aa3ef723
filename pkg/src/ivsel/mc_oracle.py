"""Finite-sample Monte Carlo check of the analytic probability limits.

Random numbers come from numpy's Philox4x32-10 counter-based generator. Each
node draws its shocks from its own stream, ``SeedSequence(seed).spawn(k)[i]``
for the i-th node in declaration order, so a sample of size ``n`` is a prefix
of any larger sample with the same seed. Bootstrap resampling uses the stream
``SeedSequence([seed, BOOTSTRAP_STREAM])``.

All estimators are ratios of (partial) covariances, so they are functions of
the first two sample moments of ``(Z, T, S, Y)``. Standard errors come from a
nonparametric bootstrap over contiguous blocks of the iid retained rows: each
block is summarized by its moment sums once, and every resample is a weighted
sum of block summaries. With as many blocks as rows this is the ordinary row
bootstrap.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import sem_core
from .errors import DegenerateEstimandError
from .estimands import SelectionRule, plim_matrix

__all__ = [
    "Dataset",
    "McReport",
    "simulate",
    "apply_selection",
    "estimate",
    "stratified_adjustment_iv",
    "convergence_report",
    "verify",
    "DEFAULT_RULES",
]

BOOTSTRAP_STREAM = 0xB007
DEFAULT_BLOCKS = 1000
DEFAULT_BOOT = 200
MIN_RETAINED = 10
FIRST_STAGE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Dataset:
    """Simulated draws for every node of ``model``.

    ``retained`` is None until :func:`apply_selection` has been called.
    """

    model: sem_core.PathModel
    columns: dict
    n: int
    seed: int
    retained: np.ndarray | None = None

    def head(self, n):
        """First ``n`` rows; equal to ``simulate(model, n, seed)``."""
        cols = {k: v[:n] for k, v in self.columns.items()}
        ret = None if self.retained is None else self.retained[:n]
        return Dataset(self.model, cols, n, self.seed, ret)

    def to_csv(self, observed_only=False):
        """CSV text with one column per node plus the selection indicator ``R``.

        ``observed_only`` drops latent nodes and, when a truncation has been
        applied, the rows with ``R = 0``.
        """
        names = [n for n in self.model.nodes if not (observed_only and self.model.latent.get(n))]
        retained = self.retained if self.retained is not None else np.ones(self.n, dtype=bool)
        rows = np.flatnonzero(retained) if observed_only else np.arange(self.n)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names + ["R"])
        data = np.column_stack([self.columns[k][rows] for k in names])
        for vals, r in zip(data, retained[rows]):
            writer.writerow([repr(float(v)) for v in vals] + [int(r)])
        return buf.getvalue()


@dataclass(frozen=True)
class McReport:
    estimate: float
    std_error: float
    n_retained: int
    rule: SelectionRule
    method: str

    def to_dict(self):
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "n_retained": self.n_retained,
            "rule": self.rule.to_dict(),
            "method": self.method,
        }


def _node_streams(seed, k):
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(k)]


def simulate(model, n, seed):
    """Draw ``n`` iid rows from the standardized structural equations of ``model``.

    Shocks are independent normals scaled by :func:`~ivsel.sem_core.solve_shock_variances`
    and pushed through the equations in topological order.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    shocks = sem_core.solve_shock_variances(model)
    streams = dict(zip(model.nodes, _node_streams(seed, len(model.nodes))))
    cols = {}
    for v in model.topological_order():
        x = math.sqrt(shocks.var[v]) * streams[v].standard_normal(n)
        for p, c in model.parents(v):
            x += c * cols[p]
        cols[v] = x
    for x in cols.values():
        x.setflags(write=False)
    return Dataset(model, {k: cols[k] for k in model.nodes}, n, seed)


def apply_selection(data, rule):
    """Mark retained rows: ``S >= s0`` under truncation, every row otherwise."""
    if rule.kind == "truncation":
        trunc = rule.trunc
        if trunc.direction is None:
            index = data.columns[data.model.selection]
        else:
            c = trunc.resolve(data.model.nodes)
            index = sum(ci * data.columns[k] for ci, k in zip(c, data.model.nodes))
        retained = index >= trunc.threshold
    else:
        retained = np.ones(data.n, dtype=bool)
    retained.setflags(write=False)
    return Dataset(data.model, data.columns, data.n, data.seed, retained)


def _moment_blocks(x, n_blocks):
    """Per-block ``(count, sums, cross-products)`` of the rows of ``x``."""
    m = x.shape[0]
    k = max(1, min(n_blocks, m))
    starts = np.linspace(0, m, k + 1).astype(np.int64)[:-1]
    counts = np.diff(np.append(starts, m)).astype(float)
    sums = np.add.reduceat(x, starts, axis=0)
    outer = np.einsum("ij,ik->ijk", x, x)
    cross = np.add.reduceat(outer, starts, axis=0)
    return counts, sums, cross


def _estimator(method, adjust):
    """Map aggregated moments -> estimate. Columns are (Z, T, S, Y)."""
    Z, T, S, Y = range(4)

    def fn(count, sums, cross):
        mean = sums / count[..., None]
        cov = cross / count[..., None, None] - mean[..., :, None] * mean[..., None, :]
        if adjust:
            s_s = cov[..., S, :]
            cov = cov - s_s[..., :, None] * s_s[..., None, :] / cov[..., S, S][..., None, None]
        if method == "IV":
            return cov[..., Z, Y], cov[..., Z, T]
        return cov[..., T, Y], cov[..., T, T]

    return fn


def estimate(data, method, rule, *, n_boot=DEFAULT_BOOT, n_blocks=DEFAULT_BLOCKS, seed=None):
    """IV or OLS on the retained rows of ``data``, with a bootstrap standard error.

    IV is ``Cov(Z, Y) / Cov(Z, T)``, OLS is ``Cov(T, Y) / Var(T)``. Under
    adjustment every variable is first residualized on ``S`` (with intercept).

    Raises
    ------
    DegenerateEstimandError
        If fewer than 10 rows are retained or the sample first stage is below 1e-6.
    """
    method = method.upper()
    if method not in ("IV", "OLS"):
        raise ValueError(f"unknown method {method!r}")
    if data.retained is None:
        data = apply_selection(data, rule)
    m = data.model
    keep = data.retained
    n_retained = int(keep.sum())
    if n_retained < MIN_RETAINED:
        raise DegenerateEstimandError(f"only {n_retained} rows retained")
    x = np.column_stack([data.columns[k][keep] for k in (m.instrument, m.treatment, m.selection, m.outcome)])
    counts, sums, cross = _moment_blocks(x, n_blocks)
    fn = _estimator(method, rule.kind == "adjustment")

    num, den = fn(counts.sum(), sums.sum(axis=0), cross.sum(axis=0))
    if abs(den) < FIRST_STAGE_TOL:
        raise DegenerateEstimandError(f"sample {method} denominator {den:.3g} is numerically zero")
    point = float(num / den)

    boot_seed = data.seed if seed is None else seed
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([boot_seed, BOOTSTRAP_STREAM])))
    k = counts.size
    weights = rng.multinomial(k, np.full(k, 1.0 / k), size=n_boot).astype(float)
    b_num, b_den = fn(weights @ counts, weights @ sums, np.einsum("bk,kij->bij", weights, cross))
    boot = b_num / b_den
    return McReport(point, float(np.std(boot, ddof=1)), n_retained, rule, method)


def stratified_adjustment_iv(data, n_strata=20, min_rows=500):
    """Stratify on ``S`` at its quantiles, run IV inside each stratum and average.

    Strata with fewer than ``min_rows`` rows are skipped; the average weights
    strata by size.
    """
    m = data.model
    s = data.columns[m.selection]
    edges = np.quantile(s, np.linspace(0, 1, n_strata + 1))
    labels = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, n_strata - 1)
    z, t, y = data.columns[m.instrument], data.columns[m.treatment], data.columns[m.outcome]
    ests, sizes = [], []
    for k in range(n_strata):
        idx = labels == k
        if idx.sum() < min_rows:
            continue
        zk = z[idx] - z[idx].mean()
        ests.append(np.dot(zk, y[idx]) / np.dot(zk, t[idx]))
        sizes.append(idx.sum())
    if not ests:
        raise DegenerateEstimandError("no stratum has enough rows")
    return float(np.average(ests, weights=sizes))


def convergence_report(model, rule, method, n_grid, seed):
    """Estimate at each sample size in ``n_grid`` (nested prefixes of one draw).

    Returns a list of row dicts with ``n``, ``estimate``, ``std_error``,
    ``plim``, ``abs_error`` and ``within_4se``.
    """
    n_grid = list(n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing")
    report = plim_matrix(model, rule)
    plim = report.iv_plim if method.upper() == "IV" else report.ols_plim
    full = apply_selection(simulate(model, n_grid[-1], seed), rule)
    rows = []
    for n in n_grid:
        mc = estimate(full.head(n), method, rule)
        err = abs(mc.estimate - plim)
        rows.append({
            "n": n,
            "estimate": mc.estimate,
            "std_error": mc.std_error,
            "plim": plim,
            "abs_error": err,
            "within_4se": err <= 4 * mc.std_error,
        })
    return rows


DEFAULT_RULES = (
    SelectionRule.none(),
    SelectionRule.adjustment(),
    SelectionRule.truncation(severity=0.25),
    SelectionRule.truncation(severity=0.5),
    SelectionRule.truncation(severity=0.75),
)


def verify(presets=None, rules=DEFAULT_RULES, methods=("IV", "OLS"), *, n=10**6, seed=0,
           n_se=4.0, threads=None):
    """Compare MC estimates with matrix-engine plims over presets x rules x methods.

    One dataset is simulated per preset (default parameters) and reused for
    every rule and method. Returns a JSON-ready summary whose ``passed`` flag is
    True iff every combination lies within ``n_se`` bootstrap standard errors.
    """
    if presets is None:
        presets = list(sem_core.PRESETS)

    def run(preset):
        model = sem_core.build_model(preset)
        data = simulate(model, n, seed)
        out = []
        for rule in rules:
            selected = apply_selection(data, rule)
            report = plim_matrix(model, rule)
            for method in methods:
                plim = report.iv_plim if method == "IV" else report.ols_plim
                mc = estimate(selected, method, rule)
                z = (mc.estimate - plim) / mc.std_error
                out.append({
                    "preset": preset,
                    "rule": rule.label(),
                    "method": method,
                    "plim": plim,
                    "estimate": mc.estimate,
                    "std_error": mc.std_error,
                    "n_retained": mc.n_retained,
                    "z": z,
                    "passed": bool(abs(z) <= n_se),
                })
        return out

    with ThreadPoolExecutor(max_workers=threads or 1) as pool:
        rows = [row for chunk in pool.map(run, presets) for row in chunk]
    return {
        "n": n,
        "seed": seed,
        "n_se": n_se,
        "rng": "numpy Philox4x32-10, SeedSequence(seed).spawn per node",
        "passed": all(r["passed"] for r in rows),
        "rows": rows,
    }
