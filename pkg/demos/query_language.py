"""The expression language and the oracle's sensitivity audit.

Mechanisms can only see the data through expressions submitted to the
budgeted oracle.  This script builds the two query shapes the mechanisms
use, shows the structural sensitivity bound at work (including a rejected
over-sensitive query), and round-trips the canonical serialization.

Run:  python demos/query_language.py
"""

from privsel import (
    Base, BudgetOracle, Gap, LossInstance, Scale, SensitivityViolationError,
    build_bintree_query, build_tilde_loss, eval_expr, format_expr, parse_expr,
    sensitivity_bound,
)


def main():
    inst = LossInstance((3.0, 1.0, 4.0, 4.0))
    print(f"instance losses: {inst.losses}")

    print("\n== Tournament comparison query ==")
    query = build_bintree_query([0, 1], [2, 3])
    print(f"  text : {format_expr(query)}")
    print(f"  value: {eval_expr(query, inst)}   (= (min(3,1) - min(4,4)) / 2)")
    print(f"  sensitivity bound: {sensitivity_bound(query)}")

    print("\n== Derived subset-scoring loss ==")
    tilde = build_tilde_loss([1, 2], k=2, xi_value=1.5, universe=range(4))
    print(f"  text : {format_expr(tilde)}")
    print(f"  value: {eval_expr(tilde, inst):.4f}")
    print(f"  sensitivity bound: {sensitivity_bound(tilde)}")

    print("\n== The oracle audits every query ==")
    oracle = BudgetOracle(inst, total_budget=1.0, seed=0)
    answer = oracle.noisy_query(query, rho_i=0.25)
    print(f"  noisy answer at rho_i=0.25 (noise std {1/(2*0.25)**0.5:.2f}):"
          f" {answer:.4f}")
    try:
        oracle.noisy_query(Gap([0, 1]), rho_i=0.25)
    except SensitivityViolationError as exc:
        print(f"  raw gap rejected: {exc}")
    halved = Scale(0.5, Gap([0, 1]))
    print(f"  halved gap accepted: {oracle.noisy_query(halved, rho_i=0.25):.4f}")
    print(f"  budget spent so far: {oracle.spent}")
    print("\n  query log:")
    print("  " + oracle.log_csv().replace("\n", "\n  ").rstrip())

    print("== Serialization round-trips ==")
    for expr in (query, tilde, Scale(0.5, Gap([0, 3]))):
        text = format_expr(expr)
        assert format_expr(parse_expr(text)) == text
    print("  format -> parse -> format is the identity on canonical text")
    single = Base(2)
    print(f"  single-candidate query {format_expr(single)} evaluates to"
          f" {eval_expr(single, inst)}")


if __name__ == "__main__":
    main()
