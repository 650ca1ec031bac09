"""Experiment drivers: Monte Carlo runs, sweeps, and the crossover report.

run_experiment executes every configured rule over a common set of seeded runs.
Run r of every rule sees the same channel realization (seeding is keyed by
(master_seed, r, client), never by rule), so per-run differences between rules
are paired comparisons. Each run carries its own empirical bound report and
descent-inequality check; aggregates pool the empirical delay moments across
runs and evaluate the bounds once more at the pooled values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import (
    BoundInputs,
    BoundReport,
    DescentCheck,
    descent_inequality_check,
    evaluate_bounds,
)
from .config import ExperimentConfig, SweepSpec
from .delay import DelayMoments, empirical_delay_moments
from .objective import FixedRadius, ObjectiveConstants, RadiusFromInit, compute_constants
from .training import DivergenceError, Rule, RunResult, run_training


@dataclass
class RunRecord:
    """One Monte Carlo run of one rule, with its audit artifacts."""

    rule: Rule
    run_index: int
    divergent: bool
    divergence_iteration: int | None = None
    result: RunResult | None = None
    moments: DelayMoments | None = None
    bounds: BoundReport | None = None
    descent: DescentCheck | None = None
    radius_violated: bool = False


@dataclass
class RuleAggregate:
    """Across-run summary for one rule; bounds evaluated at pooled moments."""

    rule: Rule
    n_runs: int
    n_divergent: int
    mean_final_gap: float
    std_final_gap: float
    mean_last_gap: float
    mean_final_dist: float
    mean_set_size: float
    pooled_m1: np.ndarray
    pooled_m2: np.ndarray
    pooled_m3: np.ndarray
    bounds: BoundReport
    any_radius_violated: bool
    descent_all_satisfied: bool
    min_descent_slack: float


@dataclass
class ExperimentResult:
    """Everything one experiment produced: constants, runs, per-rule aggregates."""

    config: ExperimentConfig
    constants: ObjectiveConstants
    w_star: np.ndarray
    f_star: float
    init_params: np.ndarray
    runs: list[RunRecord]
    aggregates: dict[Rule, RuleAggregate]

    def runs_for(self, rule: Rule) -> list[RunRecord]:
        return [r for r in self.runs if r.rule is rule]


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Execute every configured rule over `monte_carlo_runs` paired seeded runs.

    A divergent run raises unless the config opts into exclude_divergent, in which
    case it is recorded (flagged, metrics absent) and skipped by the aggregates.
    """
    objective = config.build_objective()
    channel = config.build_channel()
    if channel.n_clients != objective.n_clients:
        raise ValueError(
            f"channel has {channel.n_clients} clients, objective has {objective.n_clients}"
        )
    init = config.build_init(objective)
    policy = (
        FixedRadius(config.fixed_radius)
        if config.fixed_radius is not None
        else RadiusFromInit(init, config.radius_margin)
    )
    constants = compute_constants(objective, policy, probe_seed=config.master_seed)
    w_star = objective.global_optimum()
    f_star = objective.loss(w_star)

    runs: list[RunRecord] = []
    aggregates: dict[Rule, RuleAggregate] = {}
    for rule in config.rules:
        records: list[RunRecord] = []
        for r in range(config.monte_carlo_runs):
            try:
                result = run_training(
                    objective,
                    channel,
                    rule,
                    config.eta,
                    config.horizon,
                    init,
                    seed=config.master_seed,
                    run_index=r,
                    cache_init=config.cache_init,
                )
            except DivergenceError as exc:
                if not config.exclude_divergent:
                    raise
                records.append(
                    RunRecord(rule=rule, run_index=r, divergent=True, divergence_iteration=exc.iteration)
                )
                continue
            moments = empirical_delay_moments(result.trace)
            radius_violated = result.max_dist > constants.compactness_radius
            inputs = BoundInputs.from_trace(
                constants, config.eta, config.horizon, objective.weights, result.trace
            )
            records.append(
                RunRecord(
                    rule=rule,
                    run_index=r,
                    divergent=False,
                    result=result,
                    moments=moments,
                    bounds=evaluate_bounds(inputs, assumption_violated=radius_violated),
                    descent=descent_inequality_check(
                        objective, result.trajectory, result.err_inners, config.eta
                    ),
                    radius_violated=radius_violated,
                )
            )
        aggregates[rule] = _aggregate(rule, records, constants, config, objective.weights)
        runs.extend(records)
    return ExperimentResult(
        config=config,
        constants=constants,
        w_star=w_star,
        f_star=f_star,
        init_params=init,
        runs=runs,
        aggregates=aggregates,
    )


def _aggregate(
    rule: Rule,
    records: list[RunRecord],
    constants: ObjectiveConstants,
    config: ExperimentConfig,
    weights: np.ndarray,
) -> RuleAggregate:
    live = [r for r in records if not r.divergent]
    if not live:
        raise ValueError(f"every run of rule {rule.value} diverged; nothing to aggregate")
    gaps = np.array([r.result.final_gap for r in live])
    pooled_m1 = np.mean([r.moments.m1 for r in live], axis=0)
    pooled_m2 = np.mean([r.moments.m2 for r in live], axis=0)
    pooled_m3 = np.mean([r.moments.m3 for r in live], axis=0)
    mean_set = float(np.mean([r.moments.mean_set_size for r in live]))
    any_violated = any(r.radius_violated for r in live)
    pooled_inputs = BoundInputs(
        constants=constants,
        eta=config.eta,
        horizon=config.horizon,
        weights=weights,
        delay_m1=pooled_m1,
        delay_m2=pooled_m2,
        delay_m3=pooled_m3,
        mean_set_size=mean_set,
        source="empirical",
    )
    return RuleAggregate(
        rule=rule,
        n_runs=len(live),
        n_divergent=len(records) - len(live),
        mean_final_gap=float(gaps.mean()),
        std_final_gap=float(gaps.std(ddof=1)) if len(live) > 1 else 0.0,
        mean_last_gap=float(np.mean([r.result.last_gap for r in live])),
        mean_final_dist=float(np.mean([r.result.final_dist for r in live])),
        mean_set_size=mean_set,
        pooled_m1=pooled_m1,
        pooled_m2=pooled_m2,
        pooled_m3=pooled_m3,
        bounds=evaluate_bounds(pooled_inputs, assumption_violated=any_violated),
        any_radius_violated=any_violated,
        descent_all_satisfied=all(r.descent.satisfied for r in live),
        min_descent_slack=float(min(r.descent.slack for r in live)),
    )


@dataclass
class SweepPoint:
    """One axis point of a sweep: its derived config and experiment result."""

    axis: str
    value: float | int
    result: ExperimentResult


@dataclass
class SweepResult:
    spec: SweepSpec
    points: list[SweepPoint]

    def table(self) -> list[dict]:
        """Tidy rows: one per (axis point, rule), ready for CSV export."""
        rows = []
        for point in self.points:
            for rule, agg in point.result.aggregates.items():
                rows.append(
                    {
                        "axis": point.axis,
                        "axis_value": point.value,
                        "rule": rule.value,
                        "n_runs": agg.n_runs,
                        "n_divergent": agg.n_divergent,
                        "mean_final_gap": agg.mean_final_gap,
                        "std_final_gap": agg.std_final_gap,
                        "mean_last_gap": agg.mean_last_gap,
                        "mean_set_size": agg.mean_set_size,
                        "sfl_bound": agg.bounds.sfl,
                        "audg_bound": agg.bounds.audg,
                        "psurdg_bound": agg.bounds.psurdg,
                        "delay_degradation": agg.bounds.delay_degradation,
                        "performance_gap": agg.bounds.gap,
                        "any_radius_violated": agg.any_radius_violated,
                        "descent_all_satisfied": agg.descent_all_satisfied,
                    }
                )
        return rows


def sweep(spec: SweepSpec) -> SweepResult:
    """Run the base experiment at every axis value; the master seed is shared."""
    points = [
        SweepPoint(axis=spec.axis, value=value, result=run_experiment(cfg))
        for value, cfg in zip(spec.values, spec.configs())
    ]
    return SweepResult(spec=spec, points=points)


@dataclass
class CrossoverRow:
    """Sign agreement at one axis point between measurement and theory."""

    axis_value: float | int
    mean_paired_diff: float
    empirical_sign: int
    predicted_gap: float
    predicted_sign: int
    agree: bool


@dataclass
class CrossoverReport:
    rows: list[CrossoverRow]
    agreement_rate: float


def crossover_report(sweep_result: SweepResult) -> CrossoverReport:
    """Compare measured reuse-vs-drop differences against the predicted gap sign.

    At each axis point the measurement is the mean over paired runs of
    (reuse final gap - drop final gap); the prediction is the performance gap
    evaluated at that point's pooled empirical moments. Signs are compared with
    sign(0) counted as agreement with either direction.
    """
    rows = []
    for point in sweep_result.points:
        aggs = point.result.aggregates
        if Rule.AUDG not in aggs or Rule.PSURDG not in aggs:
            raise ValueError("crossover report needs both the drop rule and the reuse rule")
        audg_runs = {r.run_index: r for r in point.result.runs_for(Rule.AUDG) if not r.divergent}
        psurdg_runs = {r.run_index: r for r in point.result.runs_for(Rule.PSURDG) if not r.divergent}
        shared = sorted(set(audg_runs) & set(psurdg_runs))
        if not shared:
            raise ValueError(f"no paired runs survived at axis value {point.value}")
        diffs = [psurdg_runs[i].result.final_gap - audg_runs[i].result.final_gap for i in shared]
        mean_diff = float(np.mean(diffs))
        predicted = aggs[Rule.AUDG].bounds.gap
        emp_sign = int(math.copysign(1, mean_diff)) if mean_diff != 0 else 0
        pred_sign = int(math.copysign(1, predicted)) if predicted != 0 else 0
        agree = emp_sign == pred_sign or emp_sign == 0 or pred_sign == 0
        rows.append(
            CrossoverRow(
                axis_value=point.value,
                mean_paired_diff=mean_diff,
                empirical_sign=emp_sign,
                predicted_gap=predicted,
                predicted_sign=pred_sign,
                agree=agree,
            )
        )
    return CrossoverReport(rows=rows, agreement_rate=float(np.mean([r.agree for r in rows])))
