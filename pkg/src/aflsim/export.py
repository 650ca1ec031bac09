"""Result writers: CSV tables, bound-audit JSON, and run metadata.

Column orders are fixed module-level constants so downstream consumers can rely
on them; per-client columns expand in client index order. Numeric cells are
written with repr-shortest float formatting, which round-trips exactly, so a
repeated run of the same config produces byte-identical table bodies. Wall-clock
timestamps appear only in metadata.json.
"""

from __future__ import annotations

import csv
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .bounds import BoundInputs
from .delay import TransmissionTrace
from .harness import ExperimentResult, SweepResult, CrossoverReport

EXPORT_SCHEMA_VERSION = 1

PER_ITERATION_FIXED = ["rule", "run", "t", "loss", "loss_gap", "dist", "set_size", "err_norm", "err_inner"]
PER_RUN_FIXED = [
    "rule", "run", "divergent", "divergence_iteration", "final_gap", "last_gap",
    "final_dist", "max_dist", "radius_violated", "mean_set_size",
    "descent_lhs", "descent_rhs", "descent_slack", "descent_satisfied",
    "sfl_bound", "audg_bound", "psurdg_bound", "delay_degradation", "performance_gap",
]
AGGREGATE_FIXED = [
    "rule", "n_runs", "n_divergent", "mean_final_gap", "std_final_gap", "mean_last_gap",
    "mean_final_dist", "mean_set_size", "sfl_bound", "audg_bound", "psurdg_bound",
    "delay_degradation", "performance_gap", "any_radius_violated",
    "descent_all_satisfied", "min_descent_slack",
]
SWEEP_COLUMNS = [
    "axis", "axis_value", "rule", "n_runs", "n_divergent", "mean_final_gap", "std_final_gap",
    "mean_last_gap", "mean_set_size", "sfl_bound", "audg_bound", "psurdg_bound",
    "delay_degradation", "performance_gap", "any_radius_violated", "descent_all_satisfied",
]
CROSSOVER_COLUMNS = [
    "axis_value", "mean_paired_diff", "empirical_sign", "predicted_gap", "predicted_sign", "agree",
]
TRACE_COLUMNS_FIXED = ["t", "set_size"]


def per_iteration_columns(n_clients: int) -> list[str]:
    return PER_ITERATION_FIXED + [f"tau_{i}" for i in range(n_clients)] + [
        f"member_{i}" for i in range(n_clients)
    ]


def per_run_columns(n_clients: int) -> list[str]:
    cols = list(PER_RUN_FIXED)
    for name in ("m1", "m2", "m3"):
        cols += [f"{name}_{i}" for i in range(n_clients)]
    return cols


def trace_columns(n_clients: int) -> list[str]:
    return TRACE_COLUMNS_FIXED + [f"tau_{i}" for i in range(n_clients)] + [
        f"member_{i}" for i in range(n_clients)
    ]


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, columns: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def write_trace_csv(path: str | Path, trace: TransmissionTrace) -> Path:
    """One row per iteration: t, set size, per-client delays and membership flags."""
    if trace.n_iterations == 0:
        raise ValueError("refusing to export an empty trace")
    path = Path(path)
    n = trace.n_clients
    rows = []
    for k in range(trace.n_iterations):
        row = {"t": k + 1, "set_size": int(trace.set_sizes[k])}
        for i in range(n):
            row[f"tau_{i}"] = int(trace.delays[k, i])
            row[f"member_{i}"] = bool(trace.membership[k, i])
        rows.append(row)
    _write_csv(path, trace_columns(n), rows)
    return path


def write_per_iteration_csv(path: str | Path, result: ExperimentResult) -> Path:
    path = Path(path)
    live = [r for r in result.runs if not r.divergent]
    if not live:
        raise ValueError("no finished runs to export")
    n = live[0].result.trace.n_clients
    rows = []
    for rec in live:
        res = rec.result
        for k in range(res.horizon):
            row = {
                "rule": rec.rule.value,
                "run": rec.run_index,
                "t": k + 1,
                "loss": res.losses[k],
                "loss_gap": res.loss_gaps[k],
                "dist": res.dists[k],
                "set_size": int(res.trace.set_sizes[k]),
                "err_norm": res.err_norms[k],
                "err_inner": res.err_inners[k],
            }
            for i in range(n):
                row[f"tau_{i}"] = int(res.trace.delays[k, i])
                row[f"member_{i}"] = bool(res.trace.membership[k, i])
            rows.append(row)
    _write_csv(path, per_iteration_columns(n), rows)
    return path


def write_per_run_csv(path: str | Path, result: ExperimentResult) -> Path:
    path = Path(path)
    if not result.runs:
        raise ValueError("no runs to export")
    n = result.config.build_channel().n_clients
    rows = []
    for rec in result.runs:
        if rec.divergent:
            row = {c: None for c in per_run_columns(n)}
            row.update(
                {
                    "rule": rec.rule.value,
                    "run": rec.run_index,
                    "divergent": True,
                    "divergence_iteration": rec.divergence_iteration,
                }
            )
        else:
            row = {
                "rule": rec.rule.value,
                "run": rec.run_index,
                "divergent": False,
                "divergence_iteration": None,
                "final_gap": rec.result.final_gap,
                "last_gap": rec.result.last_gap,
                "final_dist": rec.result.final_dist,
                "max_dist": rec.result.max_dist,
                "radius_violated": rec.radius_violated,
                "mean_set_size": rec.moments.mean_set_size,
                "descent_lhs": rec.descent.lhs,
                "descent_rhs": rec.descent.rhs,
                "descent_slack": rec.descent.slack,
                "descent_satisfied": rec.descent.satisfied,
                "sfl_bound": rec.bounds.sfl,
                "audg_bound": rec.bounds.audg,
                "psurdg_bound": rec.bounds.psurdg,
                "delay_degradation": rec.bounds.delay_degradation,
                "performance_gap": rec.bounds.gap,
            }
            for i in range(n):
                row[f"m1_{i}"] = rec.moments.m1[i]
                row[f"m2_{i}"] = rec.moments.m2[i]
                row[f"m3_{i}"] = rec.moments.m3[i]
        rows.append(row)
    _write_csv(path, per_run_columns(n), rows)
    return path


def write_aggregate_csv(path: str | Path, result: ExperimentResult) -> Path:
    path = Path(path)
    rows = []
    for rule, agg in result.aggregates.items():
        rows.append(
            {
                "rule": rule.value,
                "n_runs": agg.n_runs,
                "n_divergent": agg.n_divergent,
                "mean_final_gap": agg.mean_final_gap,
                "std_final_gap": agg.std_final_gap,
                "mean_last_gap": agg.mean_last_gap,
                "mean_final_dist": agg.mean_final_dist,
                "mean_set_size": agg.mean_set_size,
                "sfl_bound": agg.bounds.sfl,
                "audg_bound": agg.bounds.audg,
                "psurdg_bound": agg.bounds.psurdg,
                "delay_degradation": agg.bounds.delay_degradation,
                "performance_gap": agg.bounds.gap,
                "any_radius_violated": agg.any_radius_violated,
                "descent_all_satisfied": agg.descent_all_satisfied,
                "min_descent_slack": agg.min_descent_slack,
            }
        )
    if not rows:
        raise ValueError("no aggregates to export")
    _write_csv(path, AGGREGATE_FIXED, rows)
    return path


def write_bound_audit_json(path: str | Path, result: ExperimentResult) -> Path:
    """Pooled bound inputs and reports per rule, as stable sorted JSON."""
    path = Path(path)
    payload = {"schema_version": EXPORT_SCHEMA_VERSION, "rules": {}}
    for rule, agg in result.aggregates.items():
        inputs = BoundInputs(
            constants=result.constants,
            eta=result.config.eta,
            horizon=result.config.horizon,
            weights=np.array([c["weight"] for c in _client_weights(result)]),
            delay_m1=agg.pooled_m1,
            delay_m2=agg.pooled_m2,
            delay_m3=agg.pooled_m3,
            mean_set_size=agg.mean_set_size,
            source="empirical",
        )
        payload["rules"][rule.value] = {
            "inputs": inputs.to_dict(),
            "report": agg.bounds.to_dict(),
            "mean_final_gap": agg.mean_final_gap,
        }
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def _client_weights(result: ExperimentResult) -> list[dict]:
    objective = result.config.build_objective()
    return [{"weight": float(w)} for w in objective.weights]


def write_sweep_csv(path: str | Path, sweep_result: SweepResult) -> Path:
    path = Path(path)
    rows = sweep_result.table()
    if not rows:
        raise ValueError("empty sweep result")
    _write_csv(path, SWEEP_COLUMNS, rows)
    return path


def write_crossover_csv(path: str | Path, report: CrossoverReport) -> Path:
    path = Path(path)
    if not report.rows:
        raise ValueError("empty crossover report")
    rows = [
        {
            "axis_value": r.axis_value,
            "mean_paired_diff": r.mean_paired_diff,
            "empirical_sign": r.empirical_sign,
            "predicted_gap": r.predicted_gap,
            "predicted_sign": r.predicted_sign,
            "agree": r.agree,
        }
        for r in report.rows
    ]
    _write_csv(path, CROSSOVER_COLUMNS, rows)
    return path


def write_metadata(path: str | Path, result: ExperimentResult) -> Path:
    """Run metadata: schema version, config echo, constants, and the only timestamp."""
    path = Path(path)
    cfg = result.config
    payload = {
        "schema_version": EXPORT_SCHEMA_VERSION,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "constants": result.constants.to_dict(),
        "f_star": result.f_star,
        "config": {
            "version": cfg.version,
            "objective": cfg.objective_spec,
            "channel": cfg.channel_spec,
            "init": cfg.init_spec,
            "rules": [r.value for r in cfg.rules],
            "eta": cfg.eta,
            "horizon": cfg.horizon,
            "monte_carlo_runs": cfg.monte_carlo_runs,
            "master_seed": cfg.master_seed,
            "cache_init": cfg.cache_init,
            "radius_margin": cfg.radius_margin,
            "fixed_radius": cfg.fixed_radius,
            "exclude_divergent": cfg.exclude_divergent,
        },
    }
    path.write_text(json.dumps(payload, sort_keys=True, indent=2, default=float) + "\n")
    return path


def export_experiment(
    result: ExperimentResult,
    out_dir: str | Path,
    formats: tuple[str, ...] = ("csv", "json"),
) -> dict[str, Path]:
    """Write the table set for one experiment into out_dir.

    "csv" selects the per-iteration, per-run, and aggregate tables; "json"
    selects the bound audit and metadata files.
    """
    unknown = set(formats) - {"csv", "json"}
    if unknown:
        raise ValueError(f"unknown export formats {sorted(unknown)}; expected 'csv' and/or 'json'")
    if not formats:
        raise ValueError("no export formats selected")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    if "csv" in formats:
        paths["per_iteration"] = write_per_iteration_csv(out / "per_iteration.csv", result)
        paths["per_run"] = write_per_run_csv(out / "per_run.csv", result)
        paths["aggregate"] = write_aggregate_csv(out / "aggregate.csv", result)
    if "json" in formats:
        paths["bound_audit"] = write_bound_audit_json(out / "bound_audit.json", result)
        paths["metadata"] = write_metadata(out / "metadata.json", result)
    return paths


def export_sweep(sweep_result: SweepResult, report: CrossoverReport | None, out_dir: str | Path) -> dict[str, Path]:
    """Write the sweep table (and crossover table when available) into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"sweep": write_sweep_csv(out / "sweep.csv", sweep_result)}
    if report is not None:
        paths["crossover"] = write_crossover_csv(out / "crossover.csv", report)
    return paths
