"""Command-line front end: ``ivsel {analyze,sweep,simulate,verify,presets}``.

Exit codes: 0 success, 1 usage error, 2 bad model spec, 3 infeasible model,
4 degenerate estimand, 5 Monte Carlo disagreement in ``verify``.
The default seed is 20240917; the ``IVSEL_SEED`` environment variable overrides it.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

from . import estimands, mc_oracle, sem_core, sensitivity
from .errors import DegenerateEstimandError, InfeasibleModelError, ModelSpecError

DEFAULT_SEED = 20240917

EXIT_USAGE = 1
EXIT_SPEC = 2
EXIT_INFEASIBLE = 3
EXIT_DEGENERATE = 4
EXIT_DISAGREE = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def default_seed():
    env = os.environ.get("IVSEL_SEED")
    if env is None:
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise ModelSpecError(f"IVSEL_SEED must be an integer, got {env!r}") from None


def _param(text):
    try:
        key, value = text.split("=", 1)
        return key.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}") from None


def _add_model_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(sem_core.PRESETS), help="built-in scenario")
    src.add_argument("--model", metavar="FILE", help="JSON model-spec document")
    p.add_argument("--param", type=_param, action="append", default=[], metavar="NAME=VALUE",
                   help="preset parameter (pi, beta, gamma, tau, delta1..delta4); repeatable")


def _add_rule_args(p, required):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--no-selection", action="store_true", help="no conditioning on S")
    g.add_argument("--adjust", action="store_true", help="covariate adjustment on S")
    g.add_argument("--truncate-severity", type=float, metavar="Q", help="keep S >= Phi^-1(Q)")
    g.add_argument("--truncate-threshold", type=float, metavar="S0", help="keep S >= S0")


def _add_output_args(p, formats, default):
    p.add_argument("--format", choices=formats, default=default)
    p.add_argument("--output", "-o", metavar="FILE", help="write here instead of stdout")


def build_parser():
    parser = _Parser(prog="ivsel", description="IV and OLS bias under treatment-induced selection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="probability limits of IV and OLS for one model and rule")
    _add_model_args(p)
    _add_rule_args(p, required=True)
    p.add_argument("--closed-form", action="store_true",
                   help="also report the preset's closed form and the max abs difference")
    _add_output_args(p, ("json", "text"), "json")

    p = sub.add_parser("sweep", help="parameter sweep to CSV")
    fig = p.add_mutually_exclusive_group()
    fig.add_argument("--fig2a", action="store_true", help="psi against truncation severity")
    fig.add_argument("--fig2b", action="store_true", help="least-biased estimator over gamma x severity")
    p.add_argument("--scenario", choices=sorted(sem_core.PRESETS), default="baseline")
    p.add_argument("--axis", action="append", default=[], metavar="NAME=LO:HI:STEPS",
                   help="swept parameter; give one or two")
    p.add_argument("--param", type=_param, action="append", default=[], metavar="NAME=VALUE",
                   help="fixed parameter, including severity or psi")
    p.add_argument("--rule", choices=("truncation", "adjustment", "both"), default="truncation")
    p.add_argument("--engine", choices=("matrix", "closed_form"), default="matrix")
    p.add_argument("--steps", type=int, default=201, help="grid size for --fig2a/--fig2b")
    p.add_argument("--threads", type=int, default=1)
    _add_output_args(p, ("csv",), "csv")

    p = sub.add_parser("simulate", help="draw a synthetic dataset and write it as CSV")
    _add_model_args(p)
    _add_rule_args(p, required=False)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--observed-only", action="store_true",
                   help="drop latent columns and truncated rows")
    _add_output_args(p, ("csv",), "csv")

    p = sub.add_parser("verify", help="Monte Carlo check of every preset x rule x method")
    p.add_argument("--preset", action="append", choices=sorted(sem_core.PRESETS),
                   help="restrict to these presets (default: all)")
    p.add_argument("--n", type=int, default=10**6)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    _add_output_args(p, ("json", "text"), "json")

    p = sub.add_parser("presets", help="list built-in scenarios and default parameters")
    _add_output_args(p, ("json", "text"), "json")
    return parser


def _model_from(args):
    params = dict(args.param)
    if args.preset:
        return sem_core.build_model(args.preset, params)
    return sem_core.load_model(args.model, params or None)


def _rule_from(args):
    if getattr(args, "adjust", False):
        return estimands.SelectionRule.adjustment()
    if getattr(args, "truncate_severity", None) is not None:
        q = args.truncate_severity
        if not 0 < q < 1:
            raise ModelSpecError("--truncate-severity must lie strictly inside (0, 1)")
        return estimands.SelectionRule.truncation(severity=q)
    if getattr(args, "truncate_threshold", None) is not None:
        return estimands.SelectionRule.truncation(threshold=args.truncate_threshold)
    return estimands.SelectionRule.none()


def _emit(text, args):
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(obj):
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return None
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        return x
    return json.dumps(clean(obj), indent=2) + "\n"


def cmd_analyze(args):
    model = _model_from(args)
    rule = _rule_from(args)
    report = estimands.plim_matrix(model, rule)
    out = {"rule": rule.to_dict(), "report": report.to_dict()}
    if args.closed_form:
        if model.scenario is None:
            raise ModelSpecError("--closed-form needs a preset model")
        closed = estimands.closed_form(model.scenario, model.params, report.psi_used)
        out["closed_form"] = closed.to_dict()
        out["max_abs_diff"] = max(abs(closed.iv_plim - report.iv_plim),
                                  abs(closed.ols_plim - report.ols_plim))
    if args.format == "json":
        _emit(_json(out), args)
    else:
        lines = [
            f"rule       {rule.label()}",
            f"psi        {report.psi_used:.12g}",
            f"beta       {report.beta_true:.12g}",
            f"IV plim    {report.iv_plim:.12g}",
            f"OLS plim   {report.ols_plim:.12g}",
        ]
        lines += [f"IV bias    {k}: {v:.12g}" for k, v in report.iv_bias_terms]
        lines += [f"OLS bias   {k}: {v:.12g}" for k, v in report.ols_bias_terms]
        if "max_abs_diff" in out:
            lines.append(f"closed-form max abs diff {out['max_abs_diff']:.3g}")
        _emit("\n".join(lines) + "\n", args)
    return 0


def cmd_sweep(args):
    if args.fig2a:
        _emit(sensitivity.fig2a_csv(sensitivity.fig2a(args.steps)), args)
        return 0
    if args.fig2b:
        result = sensitivity.fig2b(args.steps, dict(args.param), args.rule, threads=args.threads)
    else:
        if not args.axis:
            raise ModelSpecError("sweep needs --axis (or --fig2a/--fig2b)")
        grid = sensitivity.SweepGrid(args.scenario, fixed=dict(args.param), axes=tuple(args.axis))
        result = sensitivity.run_sweep(grid, args.rule, engine=args.engine, threads=args.threads)
    _emit(result.to_csv(), args)
    return 0


def cmd_simulate(args):
    model = _model_from(args)
    seed = default_seed() if args.seed is None else args.seed
    data = mc_oracle.apply_selection(mc_oracle.simulate(model, args.n, seed), _rule_from(args))
    _emit(data.to_csv(observed_only=args.observed_only), args)
    return 0


def cmd_verify(args):
    seed = default_seed() if args.seed is None else args.seed
    if args.n < 10**4:
        print(f"warning: n={args.n} is below the recommended minimum of 10^4", file=sys.stderr)
    summary = mc_oracle.verify(args.preset, n=args.n, seed=seed, threads=args.threads)
    if args.format == "json":
        _emit(_json(summary), args)
    else:
        lines = [
            f"{r['preset']:<22} {r['rule']:<28} {r['method']:<4} plim={r['plim']:.6f} "
            f"mc={r['estimate']:.6f} se={r['std_error']:.6f} z={r['z']:+.2f} "
            f"{'PASS' if r['passed'] else 'FAIL'}"
            for r in summary["rows"]
        ]
        lines.append("PASS" if summary["passed"] else "FAIL")
        _emit("\n".join(lines) + "\n", args)
    return 0 if summary["passed"] else EXIT_DISAGREE


def cmd_presets(args):
    info = {}
    for name, (nodes, edges, defaults) in sem_core.PRESETS.items():
        info[name] = {
            "nodes": [{"name": n, "role": r, "latent": lat} for n, r, lat in nodes],
            "edges": [{"from": p, "to": c, "param": s} for p, c, s in edges],
            "defaults": defaults,
        }
    if args.format == "json":
        _emit(_json(info), args)
    else:
        lines = []
        for name, d in info.items():
            edges = ", ".join(f"{e['from']}->{e['to']} ({e['param']})" for e in d["edges"])
            lines.append(f"{name}: {edges}")
            lines.append("    defaults: " + ", ".join(f"{k}={v}" for k, v in d["defaults"].items()))
        _emit("\n".join(lines) + "\n", args)
    return 0


COMMANDS = {
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "presets": cmd_presets,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InfeasibleModelError as exc:
        print(f"ivsel: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DegenerateEstimandError as exc:
        print(f"ivsel: degenerate estimand: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ModelSpecError, ValueError) as exc:
        print(f"ivsel: {exc}", file=sys.stderr)
        return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
