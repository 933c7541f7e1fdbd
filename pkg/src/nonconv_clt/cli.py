"""Command-line driver: analyze, simulate, verify, density, dump-builtin.

Exit codes: 0 success; 1 malformed configuration; 2 model assumption
violated; 3 verification failure (a |z| beyond the gate or a tolerance
breach); 4 internal engine assertion (a bug, never user input).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from fractions import Fraction

from .config import (
    BUILTINS,
    ScenarioConfig,
    builtin_document,
    canonical_document,
    dumps_config,
    parse_config,
)
from .covariance import (
    CovarianceReport,
    ScenarioContext,
    compute_report,
    positivity_verdict,
)
from .errors import ConfigError, DegenerateVariance, EngineAssertion, ModelError
from .montecarlo import SimulationReport, replicate_stats
from .polynomials import empirical_subset_density, subset_density
from .rationals import format_rational

Z_GATE = 4.0


# ---------------------------------------------------------------------------
# pipeline pieces
# ---------------------------------------------------------------------------

def _family_summary(ctx: ScenarioContext) -> dict:
    family = ctx.setup.family
    reduced = ctx.family
    return {
        "polynomials": [str(p) for p in family.polys],
        "group_bounds": list(family.group_bounds),
        "constant_offsets": list(family.constant_offsets),
        "block_bounds": list(family.block_bounds),
        "block_degrees": list(family.block_degrees),
        "classes": [list(c) for c in family.classes],
        "reduced": {
            "polynomials": [str(p) for p in reduced.polys],
            "classes": [list(c) for c in reduced.classes],
            "stacked_dimension": ctx.setup.process.dimension,
        },
    }


def _density_rows(config: ScenarioConfig, ctx: ScenarioContext,
                  empirical: bool) -> list[dict]:
    rows = []
    family = ctx.setup.family
    for subset in config.density_subsets:
        result = subset_density(family, list(subset))
        row = {
            "subset": list(subset),
            "count": result.count,
            "modulus": result.modulus,
            "density": format_rational(result.density),
            "prefactor": format_rational(result.prefactor),
        }
        if empirical:
            emp = empirical_subset_density(family, list(subset), config.density_n)
            row["empirical"] = format_rational(emp)
            row["empirical_float"] = float(emp)
            row["n_empirical"] = config.density_n
            predicted = Fraction(result.count, result.modulus)
            if result.count > 0:
                tolerance = Fraction(4 * result.modulus, config.density_n)
                passed = abs(emp - predicted) <= tolerance
            else:
                tolerance = Fraction(1, 1000)
                passed = emp <= tolerance
            row["tolerance"] = float(tolerance)
            row["passed"] = bool(passed)
        rows.append(row)
    return rows


def run_analyze(config: ScenarioConfig) -> dict:
    """Structure plus the exact covariance report; no simulation."""
    ctx = config.context()
    report = compute_report(ctx)
    verdict = positivity_verdict(ctx, report)
    return {
        "name": config.name,
        "family": _family_summary(ctx),
        "report": report.serialize(),
        "positivity": verdict.serialize(),
        "density": _density_rows(config, ctx, empirical=False),
    }


def run_simulate(config: ScenarioConfig, threads: int = 1) -> dict:
    ctx = config.context()
    report = compute_report(ctx)
    try:
        simulation = replicate_stats(ctx, report, config.plan, threads=threads)
    except DegenerateVariance:
        plan = dataclasses.replace(config.plan, normality=False)
        simulation = replicate_stats(ctx, report, plan, threads=threads)
    return {
        "name": config.name,
        "family": _family_summary(ctx),
        "report": report.serialize(),
        "simulation": simulation.serialize(),
    }


def run_verify(config: ScenarioConfig, threads: int = 1) -> tuple[dict, bool]:
    """Analysis + simulation + per-prediction judgments.

    Gates: every comparison row within |z| <= 4; normality pass when the
    limit variance is positive, a strictly decreasing variance ladder when
    it vanishes; densities within their stated tolerances.
    """
    ctx = config.context()
    report = compute_report(ctx)
    verdict = positivity_verdict(ctx, report)
    zero_variance = verdict.verdict == "zero"
    plan = config.plan
    if zero_variance and plan.normality:
        plan = dataclasses.replace(plan, normality=False)
    simulation = replicate_stats(ctx, report, plan, threads=threads)

    predictions = []
    failures = []
    for row in simulation.all_rows():
        if zero_variance and row.name.startswith("var_total"):
            continue  # judged by the trend check below
        ok = abs(row.z) <= Z_GATE
        predictions.append({**row.serialize(), "passed": ok})
        if not ok:
            failures.append(f"{row.name} at n={row.n}: |z| = {abs(row.z):.2f} > {Z_GATE}")

    if zero_variance:
        estimates = [(row.n, row.estimate) for row in simulation.variance_rows]
        decreasing = all(b[1] < a[1] for a, b in zip(estimates, estimates[1:]))
        predictions.append({
            "name": "variance-trend-to-zero", "n": estimates[-1][0],
            "estimate": estimates[-1][1], "std_error": 0.0, "predicted": 0.0,
            "z": 0.0, "passed": decreasing,
            "ladder": [{"n": n, "estimate": e} for n, e in estimates]})
        if not decreasing:
            failures.append("variance ladder is not decreasing although the "
                            "limit variance vanishes")
    elif simulation.normality is not None:
        predictions.append({"name": "normality", "n": max(plan.n_ladder),
                            **simulation.normality.serialize()})
        if not simulation.normality.passed:
            failures.append("normality check failed")

    density_rows = _density_rows(config, ctx, empirical=True)
    for row in density_rows:
        if not row.get("passed", True):
            failures.append(f"density of subset {row['subset']} off by more "
                            f"than {row['tolerance']}")

    result = {
        "name": config.name,
        "family": _family_summary(ctx),
        "report": report.serialize(),
        "positivity": verdict.serialize(),
        "simulation": simulation.serialize(),
        "predictions": predictions,
        "density": density_rows,
        "failures": failures,
        "passed": not failures,
    }
    return result, not failures


def run_density(config: ScenarioConfig) -> dict:
    ctx = config.context()
    return {
        "name": config.name,
        "family": _family_summary(ctx),
        "density": _density_rows(config, ctx, empirical=True),
    }


# ---------------------------------------------------------------------------
# output formatting
# ---------------------------------------------------------------------------

def _rows_to_csv(name: str, result: dict) -> str:
    lines = ["scenario,n,name,estimate,std_error,predicted,z"]
    sim = result.get("simulation", {})
    for group in ("variance", "covariances", "increments"):
        for row in sim.get(group, []):
            lines.append(f"{name},{row['n']},{row['name']},{row['estimate']!r},"
                         f"{row['std_error']!r},{row['predicted']!r},{row['z']!r}")
    for row in result.get("density", []):
        if "empirical_float" in row:
            subset = "+".join(str(i) for i in row["subset"])
            predicted = row["count"] / row["modulus"]
            lines.append(f"{name},{row.get('n_empirical', 0)},density_{subset},"
                         f"{row['empirical_float']!r},0.0,{predicted!r},0.0")
    return "\n".join(lines) + "\n"


def _emit(result: dict, args: argparse.Namespace) -> None:
    if args.format == "csv":
        text = _rows_to_csv(result.get("name", "scenario"), result)
    else:
        text = json.dumps(result, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _load_config(args: argparse.Namespace) -> ScenarioConfig:
    if args.config is None:
        raise ConfigError("--config FILE (or --config builtin:NAME) is required")
    if args.config.startswith("builtin:"):
        document = builtin_document(args.config.split(":", 1)[1])
    else:
        try:
            with open(args.config, "r", encoding="utf-8") as handle:
                document = json.load(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    config = parse_config(document)
    if args.seed is not None:
        config = dataclasses.replace(
            config, plan=dataclasses.replace(config.plan, seed=args.seed))
    if args.replicates is not None:
        config = dataclasses.replace(
            config, plan=dataclasses.replace(config.plan, replicates=args.replicates))
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nonconv-clt",
        description="Exact limit covariances and Monte-Carlo checks for "
                    "normalized sums sampled along integer-valued polynomials")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in ("analyze", "simulate", "verify", "density"):
        cmd = sub.add_parser(command)
        cmd.add_argument("--config", required=True,
                         help="scenario JSON file, or builtin:NAME")
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--replicates", type=int, default=None)
        cmd.add_argument("--threads", type=int, default=1)
        cmd.add_argument("--out", default=None)
        cmd.add_argument("--format", choices=("json", "csv"), default="json")
    dump = sub.add_parser("dump-builtin")
    dump.add_argument("name", choices=sorted(BUILTINS))
    dump.add_argument("--out", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "dump-builtin":
            config = parse_config(builtin_document(args.name))
            text = dumps_config(config)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as handle:
                    handle.write(text)
            else:
                sys.stdout.write(text)
            return 0
        config = _load_config(args)
        if args.command == "analyze":
            _emit(run_analyze(config), args)
            return 0
        if args.command == "simulate":
            _emit(run_simulate(config, threads=args.threads), args)
            return 0
        if args.command == "density":
            _emit(run_density(config), args)
            return 0
        result, passed = run_verify(config, threads=args.threads)
        _emit(result, args)
        return 0 if passed else 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 2
    except EngineAssertion as exc:
        print(f"engine bug: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
