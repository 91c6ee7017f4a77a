"""Numeric and combinatorial certification of the analysis behind the mechanisms.

Three families of checks:

* Inequality certification: the closed-form loss/error scales satisfy the
  recursion inequalities that drive the high-probability error bound.  These
  are evaluated in high precision (mpmath, 60 significant digits) over a
  parameter grid; a comparison that lands within 1e-9 relative distance of
  equality is reported INCONCLUSIVE rather than pass/fail.

* Subset combinatorics: the closed-form probability that a uniform random
  subset isolates exactly one of the best candidates, against independent
  exact oracles (sequential-draw dynamic program, literal subset enumeration)
  and Monte Carlo sampling.

* Sensitivity fuzzing: random expressions evaluated on random neighboring
  loss vectors must never move by more than their structural bound.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from math import comb

import mpmath
import numpy as np

from .core import (
    DEFAULT_CONSTANTS, LossInstance, MechanismConstants, loss_scale,
)
from .queries import (
    AddConst, Base, Const, Gap, GapOver, MaxOver, MinOver, Scale, Sub,
    build_bintree_query, build_tilde_loss, eval_expr, format_expr,
    sensitivity_bound,
)

__all__ = [
    "Verdict", "CheckResult", "INCONCLUSIVE_REL",
    "gap_threshold_hp", "loss_scale_hp", "error_scale_from_log_hp",
    "derived_rounds_ceil_log",
    "check_scale_dominance", "check_error_recursion", "check_gap_margin",
    "scale_dominance_result", "error_recursion_result", "gap_margin_result",
    "GRID_KS", "GRID_BETAS", "GRID_RHOS", "appendix_grid",
    "subset_event_probability", "subset_event_probability_dp",
    "subset_event_probability_enum", "subset_event_mc",
    "check_good_subset_rate", "FuzzReport", "sensitivity_fuzz",
]

_DPS = 60
# Comparisons this close to equality (relative) are not trusted either way.
INCONCLUSIVE_REL = 1e-9


class Verdict(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class CheckResult:
    claim: str
    params: str
    verdict: Verdict
    margin: float
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS


# ---------------------------------------------------------------------------
# High-precision closed forms.  First arguments may be any positive reals
# here (the float-path functions in core restrict them to integers).


def loss_scale_hp(k, rho, beta, consts: MechanismConstants = DEFAULT_CONSTANTS):
    """mpmath twin of core.loss_scale, accepting real k > 0."""
    with mpmath.workdps(_DPS):
        k = mpmath.mpf(k)
        if not k > 0:
            raise ValueError(f"k must be positive, got {k}")
        c = mpmath.mpf(consts.c_xi)
        arg = c * (k + 1) / mpmath.mpf(beta)
        if not arg > 1:
            raise ValueError(f"log argument must exceed 1, got {arg}")
        return (c / mpmath.sqrt(rho)) \
            * (1 + mpmath.log(k, 2)) ** consts.p_xi \
            * mpmath.log(arg, 2)


def gap_threshold_hp(ceil_log_m, rho, beta):
    """mpmath twin of core.gap_threshold in terms of the ceil-log argument."""
    with mpmath.workdps(_DPS):
        k = mpmath.mpf(ceil_log_m)
        if not k > 0:
            raise ValueError(f"ceil_log_m must be positive, got {ceil_log_m}")
        inner = mpmath.log(k / mpmath.mpf(beta), 2)
        if not inner > 0:
            raise ValueError("need ceil_log_m / beta > 1")
        return 2 * mpmath.sqrt(k * inner) / mpmath.sqrt(rho)


def error_scale_from_log_hp(ceil_log_m, rho, beta,
                            consts: MechanismConstants = DEFAULT_CONSTANTS):
    """mpmath twin of core.error_scale_from_log, accepting real arguments."""
    with mpmath.workdps(_DPS):
        k = mpmath.mpf(ceil_log_m)
        return 2 * k * loss_scale_hp(k, rho, beta, consts)


def derived_rounds_ceil_log(k, consts: MechanismConstants = DEFAULT_CONSTANTS):
    """ceil(log2(T)) for the subsampling round count T = ceil(2**(t_coeff*sqrt(k)-1)).

    Equals ceil(t_coeff*sqrt(k) - 1) without materializing T.  When the
    exponent is an exact integer (e.g. k a perfect square with t_coeff = 3),
    half-ULP rounding could otherwise push ceil one step too high; that case
    is detected and resolved to the integer itself.  Returns (value, flagged).
    """
    with mpmath.workdps(_DPS):
        x = mpmath.mpf(consts.t_coeff) * mpmath.sqrt(mpmath.mpf(k)) - 1
        nearest = mpmath.nint(x)
        if abs(x - nearest) < mpmath.mpf(10) ** (-_DPS + 10):
            return int(nearest), True
        return int(mpmath.ceil(x)), False


def _verdict(favored, other) -> tuple[Verdict, float]:
    """PASS iff favored >= other, with a relative dead zone around equality."""
    with mpmath.workdps(_DPS):
        denom = max(abs(favored), abs(other))
        margin = float((favored - other) / denom) if denom > 0 else 0.0
    if abs(margin) < INCONCLUSIVE_REL:
        return Verdict.INCONCLUSIVE, margin
    return (Verdict.PASS if margin > 0 else Verdict.FAIL), margin


def _check_domain(k, rho, beta, *, integer_k: bool) -> None:
    if integer_k and not isinstance(k, int):
        raise ValueError(f"k must be an integer, got {k!r}")
    if not k >= 1000:
        raise ValueError(f"domain requires k >= 1000, got {k}")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if not 0 < beta <= 0.001:
        raise ValueError(f"domain requires beta in (0, 0.001], got {beta}")


def scale_dominance_result(k, rho, beta,
                           consts: MechanismConstants = DEFAULT_CONSTANTS) -> CheckResult:
    """Check loss_scale(k, rho, beta) >= 36 * loss_scale(3*sqrt(k), 4rho/5, 4beta/5).

    This one-step dominance of the scale function is what lets the error
    recursion telescope; k may be any real >= 1000.
    """
    _check_domain(k, rho, beta, integer_k=False)
    with mpmath.workdps(_DPS):
        lhs = loss_scale_hp(k, rho, beta, consts)
        rhs = loss_scale_hp(3 * mpmath.sqrt(mpmath.mpf(k)),
                            mpmath.mpf(rho) * 4 / 5, mpmath.mpf(beta) * 4 / 5, consts)
        verdict, margin = _verdict(lhs, 36 * rhs)
        ratio = float(lhs / rhs)
    return CheckResult("scale_dominance", f"K={k};rho={rho};beta={beta}",
                       verdict, margin, note=f"ratio={ratio!r}")


def check_scale_dominance(k, rho, beta,
                          consts: MechanismConstants = DEFAULT_CONSTANTS) -> tuple[bool, float]:
    """(inequality holds, lhs/rhs ratio of the two scale values)."""
    _check_domain(k, rho, beta, integer_k=False)
    with mpmath.workdps(_DPS):
        lhs = loss_scale_hp(k, rho, beta, consts)
        rhs = loss_scale_hp(3 * mpmath.sqrt(mpmath.mpf(k)),
                            mpmath.mpf(rho) * 4 / 5, mpmath.mpf(beta) * 4 / 5, consts)
        return bool(lhs >= 36 * rhs), float(lhs / rhs)


def error_recursion_result(k: int, rho, beta,
                           consts: MechanismConstants = DEFAULT_CONSTANTS) -> CheckResult:
    """Check K*xi + 2*gamma(T-level) <= gamma(2**K-level) on 2**k candidates.

    The derived-level error scale is evaluated through ceil(log2(T)).
    """
    _check_domain(k, rho, beta, integer_k=True)
    t_log, flagged = derived_rounds_ceil_log(k, consts)
    with mpmath.workdps(_DPS):
        rho4, beta4 = mpmath.mpf(rho) * 4 / 5, mpmath.mpf(beta) * 4 / 5
        lhs = k * loss_scale_hp(k, rho, beta, consts) \
            + 2 * error_scale_from_log_hp(t_log, rho4, beta4, consts)
        rhs = error_scale_from_log_hp(k, rho, beta, consts)
        verdict, margin = _verdict(rhs, lhs)  # PASS iff lhs <= rhs
    return CheckResult("error_recursion", f"K={k};rho={rho};beta={beta}",
                       verdict, margin,
                       note="t-exponent-integer" if flagged else "")


def check_error_recursion(k: int, rho, beta,
                          consts: MechanismConstants = DEFAULT_CONSTANTS) -> bool:
    return error_recursion_result(k, rho, beta, consts).verdict is Verdict.PASS


def gap_margin_result(k: int, rho, beta,
                      consts: MechanismConstants = DEFAULT_CONSTANTS) -> CheckResult:
    """Check sqrt(K)*xi - 2*gamma(T-level) >= gap_threshold(2**K, rho/5, beta/10).

    Guarantees the selected subset's gap clears the tournament's exact-recovery
    threshold.
    """
    _check_domain(k, rho, beta, integer_k=True)
    t_log, flagged = derived_rounds_ceil_log(k, consts)
    with mpmath.workdps(_DPS):
        rho4, beta4 = mpmath.mpf(rho) * 4 / 5, mpmath.mpf(beta) * 4 / 5
        lhs = mpmath.sqrt(k) * loss_scale_hp(k, rho, beta, consts) \
            - 2 * error_scale_from_log_hp(t_log, rho4, beta4, consts)
        rhs = gap_threshold_hp(k, mpmath.mpf(rho) / 5, mpmath.mpf(beta) / 10)
        verdict, margin = _verdict(lhs, rhs)
    return CheckResult("gap_margin", f"K={k};rho={rho};beta={beta}",
                       verdict, margin,
                       note="t-exponent-integer" if flagged else "")


def check_gap_margin(k: int, rho, beta,
                     consts: MechanismConstants = DEFAULT_CONSTANTS) -> bool:
    return gap_margin_result(k, rho, beta, consts).verdict is Verdict.PASS


GRID_KS = (1000, 2000, 5000, 10**4, 10**5, 10**6)
GRID_BETAS = tuple(1e-3 * 0.8**d for d in range(31))
GRID_RHOS = (1e-2, 1.0, 1e2)


def appendix_grid(consts: MechanismConstants = DEFAULT_CONSTANTS,
                  ks=GRID_KS, betas=GRID_BETAS, rhos=GRID_RHOS) -> list[CheckResult]:
    """All three inequality checks at every grid point."""
    results = []
    for k in ks:
        for beta in betas:
            for rho in rhos:
                results.append(scale_dominance_result(k, rho, beta, consts))
                results.append(error_recursion_result(k, rho, beta, consts))
                results.append(gap_margin_result(k, rho, beta, consts))
    return results


# ---------------------------------------------------------------------------
# Subset combinatorics.


def _validate_subset_args(k: int, i_star: int, k_star: int) -> None:
    if not (isinstance(k, int) and k >= 1):
        raise ValueError(f"k must be a positive integer, got {k}")
    if not (isinstance(i_star, int) and isinstance(k_star, int)):
        raise ValueError("i_star and k_star must be integers")
    if not 0 <= i_star < k_star <= k:
        raise ValueError(f"need 0 <= i_star < k_star <= k, got ({i_star}, {k_star}, {k})")


def _blocks(k: int, i_star: int, k_star: int) -> tuple[int, int, int, int]:
    n = 1 << k
    size = 1 << (k - k_star)
    top = 1 << i_star
    mid = (1 << k_star) - top
    return n, size, top, mid


def subset_event_probability(k: int, i_star: int, k_star: int):
    """P(uniform size-2**(k-k_star) subset of 2**k hits the top 2**i_star block
    exactly once and the next block, ranks 2**i_star+1 .. 2**k_star, not at all).

    Closed form: 2**i_star * C(2**k - 2**k_star, size - 1) / C(2**k, size).
    Exact Fraction for k <= 20, log-space float beyond.
    """
    _validate_subset_args(k, i_star, k_star)
    n, size, top, mid = _blocks(k, i_star, k_star)
    rest = n - top - mid
    if k <= 20:
        return Fraction(top * comb(rest, size - 1), comb(n, size))
    with mpmath.workdps(_DPS):
        log_p = (mpmath.log(top) + _log_comb_hp(rest, size - 1) - _log_comb_hp(n, size))
        return float(mpmath.exp(log_p))


def _log_comb_hp(n: int, r: int):
    if r < 0 or r > n:
        return mpmath.mpf("-inf")
    return (mpmath.loggamma(n + 1) - mpmath.loggamma(r + 1)
            - mpmath.loggamma(n - r + 1))


def subset_event_probability_dp(k: int, i_star: int, k_star: int) -> Fraction:
    """Same probability by an exact sequential-draw dynamic program.

    Draws the subset one element at a time, tracking only the number of
    top-block hits (0 or 1; a second hit or any middle-block hit is
    absorbing failure).  Independent of any binomial identity.
    """
    _validate_subset_args(k, i_star, k_star)
    n, size, top, mid = _blocks(k, i_star, k_star)
    p_zero, p_one = Fraction(1), Fraction(0)
    for t in range(size):
        rem = n - t
        rest_zero = n - top - mid - t        # others drawn so far: t
        rest_one = n - top - mid - (t - 1)   # one draw was a top hit
        p_one_next = p_zero * Fraction(top, rem)
        if t > 0:
            p_one_next += p_one * Fraction(rest_one, rem)
        p_zero = p_zero * Fraction(rest_zero, rem)
        p_one = p_one_next
    return p_one


def subset_event_probability_enum(k: int, i_star: int, k_star: int,
                                  max_subsets: int = 2_000_000) -> Fraction:
    """Same probability by literal enumeration of every subset.

    Only feasible when C(2**k, size) <= max_subsets.
    """
    _validate_subset_args(k, i_star, k_star)
    n, size, top, mid = _blocks(k, i_star, k_star)
    total = comb(n, size)
    if total > max_subsets:
        raise ValueError(f"C({n}, {size}) = {total} subsets exceed cap {max_subsets}")
    blocked_lo, blocked_hi = top, top + mid
    hits = 0
    for subset in itertools.combinations(range(n), size):
        top_hits = 0
        ok = True
        for y in subset:
            if y < top:
                top_hits += 1
                if top_hits > 1:
                    ok = False
                    break
            elif y < blocked_hi:
                ok = False
                break
        if ok and top_hits == 1:
            hits += 1
    return Fraction(hits, total)


def subset_event_mc(k: int, i_star: int, k_star: int, draws: int, seed=0) -> float:
    """Monte Carlo frequency of the same event over uniform random subsets.

    Samples only the sufficient statistic (hits per block) via the
    multivariate hypergeometric distribution.
    """
    _validate_subset_args(k, i_star, k_star)
    n, size, top, mid = _blocks(k, i_star, k_star)
    rng = np.random.default_rng(seed)
    counts = rng.multivariate_hypergeometric([top, mid, n - top - mid], size, size=draws)
    good = (counts[:, 0] == 1) & (counts[:, 1] == 0)
    return float(good.mean())


# ---------------------------------------------------------------------------
# Empirical rate of "good" subsets for the recursive mechanism.


def check_good_subset_rate(k: int, instance: LossInstance,
                           consts: MechanismConstants = DEFAULT_CONSTANTS,
                           rho: float = 1.0, beta: float = 0.1,
                           trials: int = 10**5, seed=0,
                           force_k: int | None = None) -> tuple[float, float]:
    """Empirical frequency of a derived loss clearing -sqrt(K)*xi/2, vs 2**(-2*sqrt(K)).

    Samples (k_t, subset) exactly as the recursive mechanism does and
    evaluates the derived loss without noise.  The derived loss of a subset S
    is max(min(S) - min - (K + sqrt(K))*xi, -gap(S)) / 2; the returned bound
    is the analytic per-draw lower bound on the event probability.

    ``force_k`` conditions every draw on a fixed subset-size exponent (test
    hook for checking the per-k conditional probabilities).
    """
    n = len(instance)
    if n != 1 << k:
        raise ValueError(f"instance must have exactly 2**{k} candidates, got {n}")
    if force_k is not None and not 1 <= force_k <= k:
        raise ValueError(f"force_k must lie in 1..{k}, got {force_k}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    xi_value = loss_scale(k, rho, beta, consts)
    offset = (k + math.sqrt(k)) * xi_value
    threshold = -math.sqrt(k) * xi_value  # event: 2 * derived loss <= threshold

    arr = instance.as_array()
    vals, counts = np.unique(arr, return_counts=True)
    rng = np.random.default_rng(seed)
    if force_k is not None:
        ks = np.full(trials, force_k, dtype=np.int64)
    else:
        ks = rng.integers(1, k + 1, size=trials)

    events = 0
    for kt in np.unique(ks):
        m = int(np.count_nonzero(ks == kt))
        size = 1 << (k - int(kt))
        if size == 1:
            picks = rng.integers(0, n, size=m)
            lvl = np.searchsorted(np.cumsum(counts), picks, side="right")
            two_l = vals[lvl] - vals[0] - offset  # singleton gap is +inf
            events += int(np.count_nonzero(two_l <= threshold))
        elif len(vals) <= 1024:
            mat = rng.multivariate_hypergeometric(counts, size, size=m)
            occupied = mat > 0
            rows = np.arange(m)
            first = occupied.argmax(axis=1)
            first_count = mat[rows, first]
            occupied[rows, first] = False
            second = occupied.argmax(axis=1)
            has_second = occupied.any(axis=1)
            gap = np.where(first_count >= 2, 0.0,
                           np.where(has_second, vals[second] - vals[first], np.inf))
            two_l = np.maximum(vals[first] - vals[0] - offset, -gap)
            events += int(np.count_nonzero(two_l <= threshold))
        else:
            for _ in range(m):
                sel = rng.choice(n, size=size, replace=False)
                sub = arr[sel]
                two = np.partition(sub, 1)[:2]
                gap = float(two[1] - two[0])
                two_l = max(float(two[0]) - vals[0] - offset, -gap)
                if two_l <= threshold:
                    events += 1
    bound = 2.0 ** (-2.0 * math.sqrt(k))
    return events / trials, bound


# ---------------------------------------------------------------------------
# Sensitivity fuzzing.


@dataclass(frozen=True)
class FuzzReport:
    trials: int
    evaluated: int
    max_ratio: float
    violations: int
    worst_expr: str


def _random_tree(rng: np.random.Generator, n: int, depth: int):
    if depth == 0 or rng.random() < 0.3:
        if rng.random() < 0.8:
            return Base(int(rng.integers(n)))
        return Const(float(rng.uniform(-5, 5)))
    kind = rng.integers(7)
    if kind == 0:
        return MinOver(tuple(_random_tree(rng, n, depth - 1)
                             for _ in range(rng.integers(1, 4))))
    if kind == 1:
        return MaxOver(tuple(_random_tree(rng, n, depth - 1)
                             for _ in range(rng.integers(1, 4))))
    if kind == 2:
        m = int(rng.integers(1, n + 1))
        return Gap(rng.choice(n, size=m, replace=False))
    if kind == 3:
        return GapOver(tuple(_random_tree(rng, n, depth - 1)
                             for _ in range(rng.integers(1, 4))))
    if kind == 4:
        return Sub(_random_tree(rng, n, depth - 1), _random_tree(rng, n, depth - 1))
    if kind == 5:
        return Scale(float(rng.uniform(-2, 2)), _random_tree(rng, n, depth - 1))
    return AddConst(float(rng.uniform(-3, 3)), _random_tree(rng, n, depth - 1))


def _random_family_expr(rng: np.random.Generator, family: str, n: int):
    if family == "bintree":
        cut = int(rng.integers(1, n))
        perm = rng.permutation(n)
        return build_bintree_query(perm[:cut], perm[cut:])
    if family == "tilde":
        m = int(rng.integers(1, n + 1))
        subset = rng.choice(n, size=m, replace=False)
        k = int(rng.integers(1, 7))
        xi_value = float(rng.uniform(0.1, 5.0))
        return build_tilde_loss(subset, k, xi_value, range(n))
    return _random_tree(rng, n, depth=4)


def sensitivity_fuzz(trials: int, seed=0,
                     families: tuple[str, ...] = ("bintree", "tilde", "random")) -> FuzzReport:
    """Fuzz the sensitivity calculus.

    Each trial draws an expression (tournament-comparison shape, derived-loss
    shape, or a random tree over all node types), a loss vector, and a
    perturbation with coordinates in [-1, 1], then compares the evaluation
    change against the structural bound.  Pairs where either evaluation is
    non-finite are skipped, matching the calculus' soundness claim.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    max_ratio = 0.0
    worst = ""
    violations = 0
    evaluated = 0
    for _ in range(trials):
        family = families[int(rng.integers(len(families)))]
        n = int(rng.integers(2, 13))
        expr = _random_family_expr(rng, family, n)
        losses = rng.uniform(-10, 10, n)
        delta = rng.uniform(-1, 1, n)
        v1 = eval_expr(expr, LossInstance(tuple(losses)))
        v2 = eval_expr(expr, LossInstance(tuple(losses + delta)))
        if not (math.isfinite(v1) and math.isfinite(v2)):
            continue
        evaluated += 1
        diff = abs(v1 - v2)
        bound = sensitivity_bound(expr)
        if bound > 0:
            ratio = diff / bound
        else:
            ratio = 0.0 if diff <= 1e-9 else math.inf
        if ratio > max_ratio:
            max_ratio = ratio
            worst = format_expr(expr)
        if ratio > 1 + 1e-9:
            violations += 1
    return FuzzReport(trials, evaluated, max_ratio, violations, worst)
