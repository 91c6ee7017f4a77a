"""Race the selection mechanisms on a shared budget.

Runs the exponential-mechanism baseline, the halving tournament, the
recursive gap mechanism (scaled constants so the recursion actually fires),
the combined mechanism, and the query-everything baseline on the same
instances, then prints the error summary table.

Run:  python demos/mechanism_race.py
"""

from privsel import (
    ExperimentConfig, InstanceSpec, MechanismConstants, MechanismSpec,
    run_experiment,
)

SCALED = MechanismConstants(c_xi=1.0, p_xi=1, base_threshold_log=6)


def main():
    # beta is chosen so the scaled recursion fires but stays shallow;
    # larger beta deepens it (and slows the demo) without changing the story
    config = ExperimentConfig(
        instance=InstanceSpec("uniform", 256, scale=500.0, seed=7),
        mechanisms=(
            MechanismSpec("exponential"),
            MechanismSpec("binary_tree"),
            MechanismSpec("recursive_gap", SCALED),
            MechanismSpec("combined"),
            MechanismSpec("query_all"),
        ),
        rho=1.0,
        beta=0.005,
        trials=500,
        master_seed=42,
        failure_threshold=50.0,
        fresh_instance_per_trial=True,
    )
    print(f"uniform instances, n={config.instance.size}, rho={config.rho},"
          f" trials={config.trials}\n")
    summary = run_experiment(config)
    header = (f"{'mechanism':14s} {'mean':>8s} {'p50':>8s} {'p90':>8s}"
              f" {'p99':>8s} {'P[err>50]':>10s} {'rounds':>7s}")
    print(header)
    print("-" * len(header))
    for row in summary.rows:
        print(f"{row.mechanism:14s} {row.mean_error:8.2f} {row.p50_error:8.2f}"
              f" {row.p90_error:8.2f} {row.p99_error:8.2f}"
              f" {row.failure_frequency:10.3f} {row.mean_rounds:7.1f}")
    print("\nNotes: per-candidate querying pays a sqrt(n) noise factor, the")
    print("tournament only a polylog one; the exponential mechanism (which")
    print("sees the losses directly) sets the reference point.  At this")
    print("budget the scaled recursive mechanism is dominated by its own")
    print("subset-selection noise, which is expected: its guarantees bind")
    print("at far larger scales.")


if __name__ == "__main__":
    main()
