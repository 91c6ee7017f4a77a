"""Selection mechanisms over a budgeted Gaussian query oracle.

Every mechanism here (except the exponential mechanism, which is a baseline
outside the query model) touches the data exclusively through the oracle's
``noisy_query``: control flow depends only on noisy answers and the
mechanism's own seeded randomness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LossInstance, MechanismConstants, DEFAULT_CONSTANTS, ceil_log2, loss_scale
from .queries import (
    AddConst, Base, Gap, GapOver, MaxOver, MinOver, Scale, Sub, base_nodes,
)

__all__ = [
    "SelectionResult", "InfeasibleConfigError", "DEFAULT_WORK_CAP",
    "binary_tree_select", "recursive_gap_select", "combined_select",
    "exponential_mechanism", "query_all_baseline",
    "binary_tree_round_bound", "recursive_gap_round_bound",
    "combined_round_bound", "query_all_round_bound",
]

# Cap on T * (largest subset size): the subsampling stage materializes about
# this many index slots, so reject configurations beyond it up front.
DEFAULT_WORK_CAP = 10**9


class InfeasibleConfigError(Exception):
    """Subsampling round count exceeds the configured work cap.

    Expected for the un-scaled constants at exponents K large enough to leave
    the base case: T grows like 2**(3*sqrt(K)).
    """


@dataclass(frozen=True)
class SelectionResult:
    winner: int
    rounds_used: int
    budget_spent: float
    recursion_depth: int = 0

    def to_json(self) -> dict:
        return {
            "winner": self.winner,
            "rounds_used": self.rounds_used,
            "budget_spent": self.budget_spent,
            "recursion_depth": self.recursion_depth,
        }


def _candidate_array(oracle, candidates) -> np.ndarray:
    if candidates is None:
        return np.arange(oracle.n_candidates, dtype=np.int64)
    if isinstance(candidates, np.ndarray) and candidates.dtype == np.int64:
        arr = candidates
        if arr.size <= 64:
            lst = arr.tolist()
            increasing = all(a < b for a, b in zip(lst, lst[1:]))
        else:
            increasing = bool((arr[1:] > arr[:-1]).all())
        if not increasing:
            arr = np.unique(arr)
    else:
        arr = np.unique(np.asarray(list(candidates), dtype=np.int64))
    if arr.size == 0:
        raise ValueError("candidate set must be non-empty")
    if arr[0] < 0 or arr[-1] >= oracle.n_candidates:
        raise IndexError("candidate index out of range")
    return arr


def _min_node(members):
    if isinstance(members, np.ndarray):
        return MinOver(base_indices=members)
    return MinOver(tuple(members))


def _gap_node(members):
    if isinstance(members, np.ndarray):
        return Gap(members)
    return GapOver(tuple(members))


def _tournament(oracle, members, rho: float) -> int:
    """Halving tournament; returns the position of the survivor in members.

    members is either an index array (base candidates) or a list of loss
    expressions (derived candidates).  Each round queries half the difference
    of the two halves' minima with budget rho/K, K fixed from the initial
    size, and keeps the right half iff the noisy answer is strictly positive.
    The survivors always form a contiguous span, so only (lo, hi) is tracked.
    """
    n = len(members)
    if n == 1:
        return 0
    k = ceil_log2(n)
    rho_round = rho / k
    is_base = isinstance(members, np.ndarray)
    lo, hi = 0, n
    while hi - lo > 1:
        mid = lo + (hi - lo + 1) // 2
        if is_base:
            query = Scale(0.5, Sub(MinOver(base_indices=members[lo:mid]),
                                   MinOver(base_indices=members[mid:hi])))
        else:
            query = Scale(0.5, Sub(MinOver(tuple(members[lo:mid])),
                                   MinOver(tuple(members[mid:hi]))))
        answer = oracle.noisy_query(query, rho_round)
        if answer > 0:
            lo = mid
        else:
            hi = mid
    return lo


def binary_tree_select(oracle, rho: float, candidates=None) -> SelectionResult:
    """Noisy halving tournament over the candidate set.

    Splits the candidates in index order into the first ceil(n/2) and the
    rest, queries which half holds the smaller minimum, descends, and repeats;
    exactly ceil(log2(n)) queries of budget rho/ceil(log2(n)) each.  A
    singleton returns immediately with no budget spent.
    """
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    idx = _candidate_array(oracle, candidates)
    spent0, rounds0 = oracle.spent, oracle.rounds_used
    pos = _tournament(oracle, idx, rho)
    return SelectionResult(
        winner=int(idx[pos]),
        rounds_used=oracle.rounds_used - rounds0,
        budget_spent=oracle.spent - spent0,
        recursion_depth=0,
    )


def _recursive_gap(oracle, members, rho, beta, consts, rng, work_cap):
    """Returns (position of winner in members, recursion depth used)."""
    n = len(members)
    if n == 1:
        return 0, 0
    k = ceil_log2(n)
    if k <= consts.base_threshold_log or beta <= 2.0 ** (-k):
        return _tournament(oracle, members, rho), 0

    log2_t = consts.t_coeff * math.sqrt(k) - 1.0
    # feasibility in log space: T * 2**(k-1) must stay under the work cap
    if log2_t + (k - 1) > math.log2(work_cap):
        raise InfeasibleConfigError(
            f"subsampling work 2**{log2_t + (k - 1):.1f} exceeds cap {work_cap}")
    t_rounds = int(math.ceil(2.0 ** log2_t))
    xi_value = loss_scale(k, rho, beta, consts)
    offset = (k + math.sqrt(k)) * xi_value
    all_min = _min_node(members)

    subsets = []
    tilde = []
    for _ in range(t_rounds):
        k_t = int(rng.integers(1, k + 1))
        size = 1 << (k - k_t)
        sel = np.sort(rng.choice(n, size=size, replace=False))
        if isinstance(members, np.ndarray):
            chosen = members[sel]
        else:
            chosen = [members[i] for i in sel]
        first = Sub(_min_node(chosen), AddConst(offset, all_min))
        second = Scale(-1.0, _gap_node(chosen))
        tilde.append(Scale(0.5, MaxOver((first, second))))
        subsets.append(sel)

    t_out, depth = _recursive_gap(
        oracle, tilde,
        consts.budget_split_recursive * rho,
        consts.beta_split_recursive * beta,
        consts, rng, work_cap)

    sel = subsets[t_out]
    if isinstance(members, np.ndarray):
        finalists = members[sel]
    else:
        finalists = [members[i] for i in sel]
    pos = _tournament(oracle, finalists, (1.0 - consts.budget_split_recursive) * rho)
    return int(sel[pos]), depth + 1


def recursive_gap_select(oracle, rho: float, beta: float,
                         consts: MechanismConstants = DEFAULT_CONSTANTS,
                         rng: np.random.Generator | None = None,
                         candidates=None, work_cap: int = DEFAULT_WORK_CAP) -> SelectionResult:
    """Recursive large-gap subset selection.

    With K = ceil(log2(n)) computed first: if K <= base_threshold_log or
    beta <= 2**-K, delegates to the halving tournament with the full budget.
    Otherwise draws T = ceil(2**(t_coeff*sqrt(K)-1)) random subsets (size
    2**(K - k_t), k_t uniform on 1..K), scores each by a derived sensitivity-1
    loss favoring subsets with large gap and small offset optimum, selects a
    subset by recursing on the derived losses with budgets (4/5*rho, 4/5*beta),
    and finishes with a tournament over the chosen subset at rho/5.

    Derived losses are expression trees composed over the current level's
    expressions, so every noisy answer still flows through the single oracle.
    """
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if rng is None:
        rng = oracle.spawn_rng()
    idx = _candidate_array(oracle, candidates)
    spent0, rounds0 = oracle.spent, oracle.rounds_used
    pos, depth = _recursive_gap(oracle, idx, rho, beta, consts, rng, work_cap)
    return SelectionResult(
        winner=int(idx[pos]),
        rounds_used=oracle.rounds_used - rounds0,
        budget_spent=oracle.spent - spent0,
        recursion_depth=depth,
    )


def combined_select(oracle, rho: float,
                    consts: MechanismConstants = DEFAULT_CONSTANTS,
                    rng: np.random.Generator | None = None) -> SelectionResult:
    """Best of the recursive mechanism and the tournament, by one comparison.

    Runs recursive_gap_select with (rho/3, beta=1/K) and binary_tree_select
    with rho/3, then spends the last rho/3 comparing the two winners' losses;
    returns the second winner iff the noisy comparison is strictly positive.
    """
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    n = oracle.n_candidates
    if n < 2:
        raise ValueError("combined_select needs at least two candidates")
    k = ceil_log2(n)
    beta = 1.0 / k
    if rng is None:
        rng = oracle.spawn_rng()
    spent0, rounds0 = oracle.spent, oracle.rounds_used
    first = recursive_gap_select(oracle, rho / 3.0, beta, consts, rng)
    second = binary_tree_select(oracle, rho / 3.0)
    compare = Scale(0.5, Sub(Base(first.winner), Base(second.winner)))
    answer = oracle.noisy_query(compare, rho / 3.0)
    winner = second.winner if answer > 0 else first.winner
    return SelectionResult(
        winner=winner,
        rounds_used=oracle.rounds_used - rounds0,
        budget_spent=oracle.spent - spent0,
        recursion_depth=first.recursion_depth,
    )


def exponential_mechanism(instance: LossInstance, rho: float,
                          rng: np.random.Generator) -> SelectionResult:
    """Classical baseline outside the query model.

    Samples a candidate with probability proportional to exp(-eps*loss/2)
    where eps = sqrt(2*rho), via a max-shifted stable softmax.
    """
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    eps = math.sqrt(2.0 * rho)
    logits = -0.5 * eps * instance.as_array()
    logits = logits - logits.max()
    weights = np.exp(logits)
    probs = weights / weights.sum()
    winner = int(rng.choice(len(probs), p=probs))
    return SelectionResult(winner=winner, rounds_used=0, budget_spent=rho)


def query_all_baseline(oracle, rho: float) -> SelectionResult:
    """Query every candidate's loss at budget rho/n; return the noisy argmin.

    Exact ties go to the lowest index.
    """
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    n = oracle.n_candidates
    spent0, rounds0 = oracle.spent, oracle.rounds_used
    answers = oracle.noisy_query_batch(base_nodes(n), rho / n)
    return SelectionResult(
        winner=int(np.argmin(answers)),
        rounds_used=oracle.rounds_used - rounds0,
        budget_spent=oracle.spent - spent0,
        recursion_depth=0,
    )


# ---------------------------------------------------------------------------
# Static round bounds, e.g. for declaring the equal-budget simulation's M.
# These are conservative: they follow the deterministic (K, beta) recursion
# path and charge every level's tournament at the full level exponent.


def binary_tree_round_bound(n: int) -> int:
    return max(ceil_log2(n), 1)


def recursive_gap_round_bound(n: int, beta: float,
                              consts: MechanismConstants = DEFAULT_CONSTANTS) -> int:
    if n == 1:
        return 1
    k = ceil_log2(n)
    total = 0
    while not (k <= consts.base_threshold_log or beta <= 2.0 ** (-k)):
        total += k  # final tournament at this level selects within a subset
        log2_t = consts.t_coeff * math.sqrt(k) - 1.0
        k = int(math.ceil(log2_t))  # ceil(log2(T)) of the derived level
        beta *= consts.beta_split_recursive
    return max(total + k, 1)


def combined_round_bound(n: int, consts: MechanismConstants = DEFAULT_CONSTANTS) -> int:
    k = max(ceil_log2(n), 1)
    return recursive_gap_round_bound(n, 1.0 / k, consts) + binary_tree_round_bound(n) + 1


def query_all_round_bound(n: int) -> int:
    return n
