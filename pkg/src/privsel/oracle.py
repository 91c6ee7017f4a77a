"""Budgeted Gaussian query oracle and the equal-budget simulation adapter.

The oracle owns the instance and is the sole gatekeeper: it verifies each
submitted expression has sensitivity bound at most 1 and a finite value,
answers with Gaussian noise of variance 1/(2*rho_i), and enforces that
declared per-query budgets never sum past the total.

Randomness contract (frozen for golden tests): all noise comes from a numpy
``Generator`` over the PCG64 bit generator, built from a ``SeedSequence``;
draws consume the stream in query order via ``Generator.normal``.  Child
streams for mechanism-internal randomness come from ``SeedSequence.spawn``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import LossInstance
from .queries import Base, LossExpr, eval_expr, sensitivity_bound

__all__ = [
    "OracleError", "BudgetExceededError", "SensitivityViolationError",
    "NonFiniteQueryError", "RoundsExceededError", "QueryRecord",
    "BudgetOracle", "EqualBudgetPlan", "plan_equal_budget",
    "EqualBudgetOracle", "EqualBudgetAdapter", "equal_budget_simulate",
    "RELATIVE_BUDGET_SLACK",
]

# Relative float slack: splits like 4*rho/5 + rho/5 must recombine.
RELATIVE_BUDGET_SLACK = 1e-9
_SENSITIVITY_TOL = 1e-12


class OracleError(Exception):
    """Base class for query-model contract violations."""


class BudgetExceededError(OracleError):
    """A query would push total spent budget past the declared total."""


class SensitivityViolationError(OracleError):
    """Submitted expression has structural sensitivity bound above 1."""


class NonFiniteQueryError(OracleError):
    """Submitted expression evaluates to +/-inf or NaN on the instance."""


class RoundsExceededError(OracleError):
    """More rounds issued than declared to the equal-budget simulation."""


@dataclass(frozen=True)
class QueryRecord:
    round_index: int
    rho_i: float
    sensitivity_bound: float
    answer: float


LOG_CSV_HEADER = "round,rho_i,sensitivity_bound,answer"


def _as_seed_seq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


class BudgetOracle:
    """Curator of one instance under a total zCDP budget.

    One oracle serves one trial on a single logical thread; run concurrent
    trials on distinct oracles.  ``noiseless=True`` is a test hook that
    answers exactly (and draws nothing from the stream).  ``record_log=False``
    skips per-query log records for bulk experiments; budget and sensitivity
    enforcement are unaffected.
    """

    def __init__(self, instance: LossInstance, total_budget: float, seed=None, *,
                 rng: np.random.Generator | None = None,
                 noiseless: bool = False, record_log: bool = True):
        if not isinstance(instance, LossInstance):
            raise TypeError("instance must be a LossInstance")
        if not total_budget > 0:
            raise ValueError(f"total_budget must be positive, got {total_budget}")
        self.instance = instance
        self.total_budget = float(total_budget)
        self.noiseless = noiseless
        self.record_log = record_log
        self.spent = 0.0
        self.rounds_used = 0
        self.log: list[QueryRecord] = []
        self._seed_seq = None if rng is not None else _as_seed_seq(seed)
        self._rng = rng
        self._eval_memo: dict = {}
        self._bound_memo: dict = {}

    @property
    def n_candidates(self) -> int:
        return len(self.instance)

    def _generator(self) -> np.random.Generator:
        if self._rng is None:
            self._rng = np.random.default_rng(self._seed_seq)
        return self._rng

    def spawn_rng(self) -> np.random.Generator:
        """Independent child stream (deterministic given the oracle seed)."""
        if self._seed_seq is not None:
            return np.random.default_rng(self._seed_seq.spawn(1)[0])
        return self._rng.spawn(1)[0]

    def _admit(self, expr: LossExpr) -> tuple[float, float]:
        bound = sensitivity_bound(expr, self._bound_memo)
        if bound > 1.0 + _SENSITIVITY_TOL:
            raise SensitivityViolationError(
                f"sensitivity bound {bound} exceeds 1")
        value = eval_expr(expr, self.instance, self._eval_memo)
        if not math.isfinite(value):
            raise NonFiniteQueryError(f"query value is {value}")
        return bound, value

    def _charge(self, amount: float) -> None:
        if self.spent + amount > self.total_budget * (1.0 + RELATIVE_BUDGET_SLACK):
            raise BudgetExceededError(
                f"spent {self.spent} + {amount} exceeds budget {self.total_budget}")
        self.spent += amount

    def noisy_query(self, expr: LossExpr, rho_i: float) -> float:
        """Answer expr(instance) + N(0, 1/(2*rho_i)), charging rho_i."""
        if not rho_i > 0:
            raise ValueError(f"rho_i must be positive, got {rho_i}")
        bound, value = self._admit(expr)
        self._charge(rho_i)
        if self.noiseless:
            answer = value
        else:
            answer = value + self._generator().normal(0.0, math.sqrt(1.0 / (2.0 * rho_i)))
        self.rounds_used += 1
        if self.record_log:
            self.log.append(QueryRecord(self.rounds_used - 1, rho_i, bound, answer))
        return answer

    def noisy_query_batch(self, exprs: Sequence[LossExpr], rho_each: float) -> np.ndarray:
        """Answer many expressions, each with budget rho_each.

        Equivalent to one noisy_query per expression; an all-Base batch is
        evaluated as a single vectorized gather.
        """
        if not rho_each > 0:
            raise ValueError(f"rho_each must be positive, got {rho_each}")
        exprs = list(exprs)
        if not exprs:
            return np.empty(0)
        if all(type(e) is Base for e in exprs):
            idx = np.fromiter((e.index for e in exprs), dtype=np.int64, count=len(exprs))
            n = self.n_candidates
            if idx.min() < 0 or idx.max() >= n:
                raise IndexError("candidate index out of range in batch")
            self._charge(rho_each * len(exprs))
            values = self.instance.as_array()[idx]
            if self.noiseless:
                answers = values.astype(np.float64)
            else:
                sigma = math.sqrt(1.0 / (2.0 * rho_each))
                answers = values + self._generator().normal(0.0, sigma, size=len(exprs))
            start = self.rounds_used
            self.rounds_used += len(exprs)
            if self.record_log:
                self.log.extend(
                    QueryRecord(start + i, rho_each, 1.0, float(a))
                    for i, a in enumerate(answers))
            return answers
        return np.asarray([self.noisy_query(e, rho_each) for e in exprs])

    def log_csv(self) -> str:
        """Query log as CSV; floats use shortest round-trip decimals."""
        lines = [LOG_CSV_HEADER]
        lines.extend(
            f"{r.round_index},{r.rho_i!r},{r.sensitivity_bound!r},{r.answer!r}"
            for r in self.log)
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Equal-budget model: every round carries the same budget rho'/M'.  A
# variable-budget run with at most M rounds and total budget rho is simulated
# with M' = 2M rounds of budget rho'/M' = rho/M (total rho' = 2*rho): each
# query is repeated m_i = ceil(M'*rho_i/rho') times, averaged, and topped up
# with independent noise so the answer is distributed exactly as
# N(value, 1/(2*rho_i)).


@dataclass(frozen=True)
class EqualBudgetPlan:
    """Per-query accounting of the equal-budget simulation."""

    m_rounds_total: int     # M' = 2 * declared round bound
    per_round_budget: float  # rho' / M'
    per_query_repeats: int   # m_i
    topup_variance: float

    def __post_init__(self):
        if self.topup_variance < 0:
            raise ValueError("topup_variance must be nonnegative")


def plan_equal_budget(rho_i: float, m_bound: int, rho: float) -> EqualBudgetPlan:
    """Repeat count and top-up variance for one variable-budget query."""
    if not (isinstance(m_bound, int) and m_bound >= 1):
        raise ValueError(f"m_bound must be a positive integer, got {m_bound}")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if not 0 < rho_i <= rho * (1.0 + RELATIVE_BUDGET_SLACK):
        raise ValueError(f"rho_i must lie in (0, rho], got {rho_i}")
    m_prime = 2 * m_bound
    rho_prime = 2.0 * rho
    ratio = m_prime * rho_i / rho_prime
    nearest = round(ratio)
    if nearest >= 1 and abs(ratio - nearest) <= 1e-12 * max(1.0, abs(ratio)):
        repeats = int(nearest)  # guard float error on exactly-integer ratios
    else:
        repeats = int(math.ceil(ratio))
    per_round_var = m_prime / (2.0 * rho_prime)
    topup = 1.0 / (2.0 * rho_i) - per_round_var / repeats
    # ceil guarantees repeats >= M'*rho_i/rho', hence topup >= 0 up to floats
    assert topup >= -1e-12 / rho_i, f"negative top-up variance {topup}"
    return EqualBudgetPlan(m_prime, rho_prime / m_prime, repeats, max(topup, 0.0))


class EqualBudgetOracle:
    """Answers rounds of one fixed budget each, up to a declared round count."""

    def __init__(self, instance: LossInstance, rounds_total: int,
                 per_round_budget: float, rng: np.random.Generator, *,
                 noiseless: bool = False):
        self.instance = instance
        self.rounds_total = rounds_total
        self.per_round_budget = per_round_budget
        self.rounds_used = 0
        self.noiseless = noiseless
        self._rng = rng
        self._eval_memo: dict = {}
        self._bound_memo: dict = {}

    def query(self, expr: LossExpr, repeats: int = 1) -> np.ndarray:
        bound = sensitivity_bound(expr, self._bound_memo)
        if bound > 1.0 + _SENSITIVITY_TOL:
            raise SensitivityViolationError(f"sensitivity bound {bound} exceeds 1")
        value = eval_expr(expr, self.instance, self._eval_memo)
        if not math.isfinite(value):
            raise NonFiniteQueryError(f"query value is {value}")
        if self.rounds_used + repeats > self.rounds_total:
            raise RoundsExceededError(
                f"{self.rounds_used} + {repeats} rounds exceeds {self.rounds_total}")
        self.rounds_used += repeats
        if self.noiseless:
            return np.full(repeats, value)
        sigma = math.sqrt(1.0 / (2.0 * self.per_round_budget))
        return value + self._rng.normal(0.0, sigma, size=repeats)


class EqualBudgetAdapter:
    """Presents the variable-budget interface on top of equal-budget rounds.

    Duck-typed like BudgetOracle (``noisy_query``, ``spent``, ``rounds_used``,
    ``n_candidates``, ``spawn_rng``), so any mechanism runs unchanged.  The
    declared contract (at most ``m_bound`` variable-budget rounds, total
    budget at most ``rho``) is enforced; the induced equal-budget round count
    then never exceeds 2 * m_bound by construction.
    """

    def __init__(self, instance: LossInstance, m_bound: int, rho: float,
                 seed=None, *, rng: np.random.Generator | None = None,
                 noiseless: bool = False, record_log: bool = True):
        if not (isinstance(m_bound, int) and m_bound >= 1):
            raise ValueError(f"m_bound must be a positive integer, got {m_bound}")
        if not rho > 0:
            raise ValueError(f"rho must be positive, got {rho}")
        self.instance = instance
        self.m_bound = m_bound
        self.rho = float(rho)
        self.spent = 0.0
        self.rounds_used = 0
        self.record_log = record_log
        self.log: list[QueryRecord] = []
        self.plans: list[EqualBudgetPlan] = []
        self._seed_seq = None if rng is not None else _as_seed_seq(seed)
        self._rng = rng if rng is not None else np.random.default_rng(self._seed_seq)
        self.inner = EqualBudgetOracle(
            instance, rounds_total=2 * m_bound, per_round_budget=rho / m_bound,
            rng=self._rng, noiseless=noiseless)
        self._bound_memo = self.inner._bound_memo

    @property
    def n_candidates(self) -> int:
        return len(self.instance)

    @property
    def inner_rounds_used(self) -> int:
        return self.inner.rounds_used

    def spawn_rng(self) -> np.random.Generator:
        if self._seed_seq is not None:
            return np.random.default_rng(self._seed_seq.spawn(1)[0])
        return self._rng.spawn(1)[0]

    def noisy_query(self, expr: LossExpr, rho_i: float) -> float:
        if not rho_i > 0:
            raise ValueError(f"rho_i must be positive, got {rho_i}")
        if self.rounds_used + 1 > self.m_bound:
            raise RoundsExceededError(
                f"mechanism exceeded its declared bound of {self.m_bound} rounds")
        if self.spent + rho_i > self.rho * (1.0 + RELATIVE_BUDGET_SLACK):
            raise BudgetExceededError(
                f"spent {self.spent} + {rho_i} exceeds budget {self.rho}")
        plan = plan_equal_budget(rho_i, self.m_bound, self.rho)
        replies = self.inner.query(expr, repeats=plan.per_query_repeats)
        answer = float(replies.mean())
        if plan.topup_variance > 0 and not self.inner.noiseless:
            answer += self._rng.normal(0.0, math.sqrt(plan.topup_variance))
        self.spent += rho_i
        self.rounds_used += 1
        self.plans.append(plan)
        if self.record_log:
            bound = sensitivity_bound(expr, self._bound_memo)
            self.log.append(QueryRecord(self.rounds_used - 1, rho_i, bound, answer))
        return answer

    def noisy_query_batch(self, exprs, rho_each: float) -> np.ndarray:
        return np.asarray([self.noisy_query(e, rho_each) for e in exprs])


def equal_budget_simulate(instance: LossInstance,
                          mechanism: Callable[[EqualBudgetAdapter], object],
                          m_bound: int, rho: float, seed=None, *,
                          noiseless: bool = False):
    """Run a mechanism against the equal-budget adapter.

    ``mechanism`` is called with the adapter as its oracle and must use at
    most ``m_bound`` rounds and total budget ``rho``.  Returns the mechanism
    output together with the adapter (for round/variance accounting).
    """
    adapter = EqualBudgetAdapter(instance, m_bound, rho, seed, noiseless=noiseless)
    result = mechanism(adapter)
    return result, adapter
