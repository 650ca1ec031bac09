"""Command-line entry points: run, sweep, bounds, validate.

Exit codes: 0 success, 2 invalid config or inputs, 3 divergent run, 4 I/O
failure, 1 anything else. Failures print one machine-readable JSON line to
stderr with an `error` category and a `message`. The output directory defaults
to $AFLSIM_OUTPUT_DIR, then ./aflsim_out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .bounds import BoundInputError, BoundInputs, bound_report_to_json, evaluate_bounds
from .config import ConfigError, load_config, load_sweep
from .export import export_experiment, export_sweep
from .harness import crossover_report, run_experiment, sweep
from .training import DivergenceError, Rule

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def _fail(category: str, message: str, code: int) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return code


def _output_dir(cli_value: str | None, config_value: str | None) -> Path:
    if cli_value:
        return Path(cli_value)
    if config_value:
        return Path(config_value)
    return Path(os.environ.get("AFLSIM_OUTPUT_DIR", "aflsim_out"))


def _apply_overrides(config, args):
    if args.seed is not None:
        config = _replace(config, master_seed=args.seed)
    if args.runs is not None:
        config = _replace(config, monte_carlo_runs=args.runs)
    if args.rules is not None:
        names = [s.strip() for s in args.rules.split(",") if s.strip()]
        try:
            rules = tuple(Rule(n) for n in names)
        except ValueError:
            raise ConfigError(
                f"rules: unknown rule in {names!r}, expected subset of {[r.value for r in Rule]}"
            ) from None
        if not rules:
            raise ConfigError("rules: override must name at least one rule")
        config = _replace(config, rules=rules)
    return config


def _replace(config, **kwargs):
    from dataclasses import replace

    return replace(config, **kwargs)


def _cmd_run(args) -> int:
    config = load_config(args.config)
    config = _apply_overrides(config, args)
    result = run_experiment(config)
    out = _output_dir(args.output_dir, config.output_dir)
    paths = export_experiment(result, out)
    for rule, agg in result.aggregates.items():
        print(
            f"{rule.value}: mean final gap {agg.mean_final_gap:.6e} over {agg.n_runs} runs, "
            f"bound {getattr(agg.bounds, rule.value):.6e}, "
            f"radius flag {'VIOLATED' if agg.any_radius_violated else 'clear'}"
        )
    print(f"wrote {len(paths)} files to {out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    spec = load_sweep(args.config)
    if args.seed is not None or args.runs is not None or args.rules is not None:
        spec.base = _apply_overrides(spec.base, args)
    result = sweep(spec)
    report = None
    rules = set(spec.base.rules)
    if Rule.AUDG in rules and Rule.PSURDG in rules:
        report = crossover_report(result)
    out = _output_dir(args.output_dir, spec.base.output_dir)
    paths = export_sweep(result, report, out)
    for row in result.table():
        print(
            f"{row['axis']}={row['axis_value']} {row['rule']}: "
            f"mean final gap {row['mean_final_gap']:.6e}, predicted gap {row['performance_gap']:.6e}"
        )
    if report is not None:
        print(f"sign agreement rate: {report.agreement_rate:.2f}")
    print(f"wrote {len(paths)} files to {out}")
    return EXIT_OK


def _cmd_bounds(args) -> int:
    try:
        payload = json.loads(Path(args.inputs).read_text())
    except json.JSONDecodeError as exc:
        raise BoundInputError(f"inputs file is not valid JSON: {exc}") from None
    inputs = BoundInputs.from_dict(payload)
    report = evaluate_bounds(inputs)
    text = bound_report_to_json(report, inputs)
    if args.output:
        Path(args.output).write_text(text + "\n")
        print(f"wrote bound report to {args.output}")
    else:
        print(text)
    return EXIT_OK


def _cmd_validate(args) -> int:
    if args.sweep:
        load_sweep(args.config)
    else:
        load_config(args.config)
    print(f"{args.config}: valid")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aflsim",
        description="Simulate asynchronous federated gradient descent and audit its convergence bounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment config and export its tables")
    run_p.add_argument("-c", "--config", required=True, help="YAML or JSON experiment config")
    run_p.add_argument("--seed", type=int, default=None, help="override the master seed")
    run_p.add_argument("--runs", type=int, default=None, help="override the Monte Carlo run count")
    run_p.add_argument("--rules", default=None, help="comma-separated rule override (sfl,audg,psurdg)")
    run_p.add_argument("-o", "--output-dir", default=None, help="output directory")
    run_p.set_defaults(func=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a one-axis sweep config and export its tables")
    sweep_p.add_argument("-c", "--config", required=True, help="YAML or JSON sweep config")
    sweep_p.add_argument("--seed", type=int, default=None)
    sweep_p.add_argument("--runs", type=int, default=None)
    sweep_p.add_argument("--rules", default=None)
    sweep_p.add_argument("-o", "--output-dir", default=None)
    sweep_p.set_defaults(func=_cmd_sweep)

    bounds_p = sub.add_parser("bounds", help="evaluate the bounds for a JSON inputs file")
    bounds_p.add_argument("-i", "--inputs", required=True, help="JSON file with bound inputs")
    bounds_p.add_argument("-o", "--output", default=None, help="write the report here instead of stdout")
    bounds_p.set_defaults(func=_cmd_bounds)

    val_p = sub.add_parser("validate", help="validate a config file and exit")
    val_p.add_argument("-c", "--config", required=True)
    val_p.add_argument("--sweep", action="store_true", help="validate as a sweep config")
    val_p.set_defaults(func=_cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, BoundInputError, ValueError) as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except DivergenceError as exc:
        return _fail("divergence", str(exc), EXIT_DIVERGENCE)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_IO)
    except Exception as exc:  # pragma: no cover - defensive
        return _fail("internal", f"{type(exc).__name__}: {exc}", EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
