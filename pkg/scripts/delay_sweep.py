"""Sweep one client's average delay and compare the two stale-gradient rules.

Client 0's upload probability runs over {0.5, 0.25, 1/6, 0.125, 0.1}, i.e.
average delays {1, 3, 5, 7, 9}, while clients 1..3 stay at 0.5. The sweep is
repeated at three heterogeneity levels; each point reports the Monte Carlo
mean final loss gap per rule next to the matching theory bound, and the
crossover table checks whether the measured reuse-vs-drop sign agrees with
the predicted performance gap.

Usage:
    python3 scripts/delay_sweep.py --runs 10 --horizon 200 --out out/sweeps
"""

import argparse
from pathlib import Path

from aflsim.config import ExperimentConfig, SweepSpec
from aflsim.export import export_sweep
from aflsim.harness import crossover_report, sweep
from aflsim.training import Rule

DELAY_GRID = (0.5, 0.25, 1.0 / 6.0, 0.125, 0.1)
HETEROGENEITY_LEVELS = (0.0, 1.0, 5.0)


def base_config(target_phi: float, eta: float, horizon: int, runs: int, seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        version=1,
        objective_spec={
            "kind": "family",
            "n_clients": 4,
            "dimension": 10,
            "target_phi": target_phi,
            "seed": 13,
        },
        channel_spec={"upload_probs": [0.5, 0.5, 0.5, 0.5]},
        init_spec={"values": [2.0] * 10},
        rules=(Rule.AUDG, Rule.PSURDG),
        eta=eta,
        horizon=horizon,
        monte_carlo_runs=runs,
        master_seed=seed,
        radius_margin=3.0,
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--runs", type=int, default=10, help="Monte Carlo runs per point (default 10)")
    parser.add_argument("--horizon", type=int, default=200, help="iterations per run (default 200)")
    parser.add_argument("--eta", type=float, default=0.05, help="server step size (default 0.05)")
    parser.add_argument("--seed", type=int, default=2025, help="master seed shared across points")
    parser.add_argument("--out", default=None, help="directory for sweep.csv/crossover.csv per level")
    args = parser.parse_args()

    for het in HETEROGENEITY_LEVELS:
        spec = SweepSpec(
            base=base_config(het, args.eta, args.horizon, args.runs, args.seed),
            axis="client_delay",
            values=DELAY_GRID,
            client=0,
        )
        result = sweep(spec)
        report = crossover_report(result)

        print(f"\n=== heterogeneity {het} ===")
        print(f"{'phi_0':>7} {'rule':>7} {'mean gap':>12} {'std':>10} {'bound':>12} {'theta':>12}")
        for row in result.table():
            print(
                f"{row['axis_value']:>7.3f} {row['rule']:>7} {row['mean_final_gap']:>12.4e} "
                f"{row['std_final_gap']:>10.2e} "
                f"{row['audg_bound'] if row['rule'] == 'audg' else row['psurdg_bound']:>12.4e} "
                f"{row['performance_gap']:>12.4e}"
            )
        print("crossover sign agreement: "
              f"{report.agreement_rate:.0%} "
              f"({', '.join(f'{r.axis_value:.3f}:{r.empirical_sign:+d}/{r.predicted_sign:+d}' for r in report.rows)})")

        if args.out is not None:
            out_dir = Path(args.out) / f"het_{het:g}"
            paths = export_sweep(result, report, out_dir)
            for name, path in paths.items():
                print(f"  wrote {name}: {path}")


if __name__ == "__main__":
    main()
