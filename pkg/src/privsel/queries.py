"""Expression trees over base losses: the only query channel to the data.

Mechanisms never see losses directly; they submit expressions from this
closed language and the oracle audits each one with the structural
sensitivity bound below before answering.

Node semantics on a loss vector l (extended-real valued):

    Base(i)            l[i]
    Const(v)           v  (v may be +/-inf)
    MinOver(es)        min of child values
    MaxOver(es)        max of child values
    Gap(S)             second order statistic minus minimum of l restricted
                       to the index set S; +inf when |S| = 1
    GapOver(es)        same, over child expression values (used when derived
                       losses are themselves re-selected recursively)
    Sub(a, b)          a - b
    Scale(c, e)        c * e
    AddConst(c, e)     e + c

Sensitivity calculus (upper bound on the change of the value between loss
vectors differing by at most 1 per coordinate):

    Base -> 1;  Const -> 0;  MinOver/MaxOver -> max of child bounds;
    Sub -> sum of child bounds;  Scale(c, e) -> |c| * bound(e);
    AddConst -> unchanged;  Gap -> 2 (0 for a singleton);
    GapOver -> 2 * max child bound (0 for a single child).

Canonical text serialization (prefix notation, whitespace separated):

    expr := (base N) | (const NUM) | (min expr+) | (max expr+)
          | (gap N+) | (gapx expr+) | (sub expr expr)
          | (scale NUM expr) | (addc NUM expr)

N is a nonnegative integer; NUM is a Python float repr, with inf/-inf
accepted.  ``gap`` carries base candidate indices, ``gapx`` the general
expression form.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .core import LossInstance

__all__ = [
    "Base", "Const", "MinOver", "MaxOver", "Gap", "GapOver", "Sub", "Scale",
    "AddConst", "LossExpr", "eval_expr", "sensitivity_bound",
    "build_bintree_query", "build_tilde_loss", "format_expr", "parse_expr",
    "ParseError", "base_nodes",
]

# Below this size, plain Python beats numpy gather on index-set nodes.
_SMALL = 64


def _index_array(indices) -> np.ndarray:
    arr = np.asarray(list(indices) if isinstance(indices, (set, frozenset)) else indices,
                     dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError("index set must be one-dimensional")
    return arr


@dataclass(frozen=True)
class Base:
    """Loss of a single candidate (a sensitivity-1 query by definition)."""

    index: int


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True, eq=False)
class MinOver:
    """Minimum over child expressions.

    For the common case of a minimum over many base candidates, pass
    ``base_indices`` instead of materializing one Base child per index;
    evaluation then runs as a single vectorized gather.
    """

    children: tuple["LossExpr", ...] | None = None
    base_indices: np.ndarray | None = None

    def __post_init__(self):
        _init_over(self)

    def resolved_children(self) -> tuple["LossExpr", ...]:
        return _resolved_children(self)


@dataclass(frozen=True, eq=False)
class MaxOver:
    """Maximum over child expressions; see MinOver for the two forms."""

    children: tuple["LossExpr", ...] | None = None
    base_indices: np.ndarray | None = None

    def __post_init__(self):
        _init_over(self)

    def resolved_children(self) -> tuple["LossExpr", ...]:
        return _resolved_children(self)


def _init_over(node) -> None:
    if (node.children is None) == (node.base_indices is None):
        raise ValueError("exactly one of children / base_indices is required")
    if node.children is not None:
        children = tuple(node.children)
        if not children:
            raise ValueError("need at least one child")
        object.__setattr__(node, "children", children)
    else:
        arr = node.base_indices
        if not (isinstance(arr, np.ndarray) and arr.dtype == np.int64 and arr.ndim == 1):
            arr = _index_array(arr)
            object.__setattr__(node, "base_indices", arr)
        if arr.size == 0:
            raise ValueError("need at least one index")


def _resolved_children(node) -> tuple["LossExpr", ...]:
    if node.children is not None:
        return node.children
    return tuple(Base(int(i)) for i in node.base_indices)


@dataclass(frozen=True, eq=False)
class Gap:
    """Gap of the instance restricted to a set of base candidate indices."""

    indices: np.ndarray

    def __post_init__(self):
        arr = np.unique(_index_array(self.indices))
        if arr.size == 0:
            raise ValueError("gap needs at least one index")
        object.__setattr__(self, "indices", arr)


@dataclass(frozen=True, eq=False)
class GapOver:
    """Gap over child expression values; +inf for a single child."""

    children: tuple["LossExpr", ...]

    def __post_init__(self):
        children = tuple(self.children)
        if not children:
            raise ValueError("gap needs at least one child")
        object.__setattr__(self, "children", children)


@dataclass(frozen=True)
class Sub:
    left: "LossExpr"
    right: "LossExpr"


@dataclass(frozen=True)
class Scale:
    factor: float
    child: "LossExpr"


@dataclass(frozen=True)
class AddConst:
    offset: float
    child: "LossExpr"


LossExpr = Union[Base, Const, MinOver, MaxOver, Gap, GapOver, Sub, Scale, AddConst]


_BASE_NODES: list[Base] = []
_BASE_NODES_LOCK = threading.Lock()


def base_nodes(n: int) -> list[Base]:
    """Shared Base nodes for indices 0..n-1 (interned across calls).

    Locked so concurrent trials can share the cache.
    """
    if len(_BASE_NODES) < n:
        with _BASE_NODES_LOCK:
            while len(_BASE_NODES) < n:
                _BASE_NODES.append(Base(len(_BASE_NODES)))
    return _BASE_NODES[:n]


def _check_bounds(arr: np.ndarray, n: int) -> None:
    lo = int(arr.min())
    hi = int(arr.max())
    if lo < 0 or hi >= n:
        raise IndexError(f"candidate index out of range: [{lo}, {hi}] vs n={n}")


def _two_smallest(values) -> tuple[float, float]:
    s1 = math.inf
    s2 = math.inf
    for v in values:
        if v < s1:
            s1, s2 = v, s1
        elif v < s2:
            s2 = v
    return s1, s2


def _min_over_indices(idx: np.ndarray, losses, arr: np.ndarray, n: int) -> float:
    if idx.size <= _SMALL:
        lst = idx.tolist()
        if min(lst) < 0:
            raise IndexError(f"negative candidate index in {lst}")
        return min(losses[i] for i in lst)
    _check_bounds(idx, n)
    return float(arr[idx].min())


def _is_min_comparison(expr) -> bool:
    """The halving tournament's query shape: Scale(c, Sub(MinOver, MinOver))
    with both minima over base index sets.  Recognized for a fast path."""
    if type(expr) is not Scale or type(expr.child) is not Sub:
        return False
    left, right = expr.child.left, expr.child.right
    return (type(left) is MinOver and left.base_indices is not None
            and type(right) is MinOver and right.base_indices is not None)


def eval_expr(expr: LossExpr, instance: LossInstance, memo: dict | None = None) -> float:
    """Evaluate an expression on an instance.

    Total: returns +/-inf where the extended-real semantics produce them
    (callers that need finite answers must check).  ``memo`` may be reused
    across calls for the same instance; values are cached per node identity
    and nodes are pinned by the cache.

    Raises IndexError for out-of-range candidate indices.
    """
    losses = instance.losses
    arr = instance.as_array()
    n = len(losses)
    if _is_min_comparison(expr):
        sub = expr.child
        return expr.factor * (
            _min_over_indices(sub.left.base_indices, losses, arr, n)
            - _min_over_indices(sub.right.base_indices, losses, arr, n))
    if memo is None:
        memo = {}

    def ev(node) -> float:
        key = id(node)
        hit = memo.get(key)
        if hit is not None:
            return hit[1]
        t = type(node)
        if t is Base:
            if not 0 <= node.index < n:
                raise IndexError(f"candidate index out of range: {node.index} vs n={n}")
            v = losses[node.index]
        elif t is Const:
            v = float(node.value)
        elif t is MinOver or t is MaxOver:
            idx = node.base_indices
            if idx is not None:
                if idx.size <= _SMALL:
                    lst = idx.tolist()
                    if min(lst) < 0:
                        raise IndexError(f"negative candidate index in {lst}")
                    vals = [losses[i] for i in lst]
                    v = min(vals) if t is MinOver else max(vals)
                else:
                    _check_bounds(idx, n)
                    sub = arr[idx]
                    v = float(sub.min() if t is MinOver else sub.max())
            else:
                vals = [ev(c) for c in node.children]
                v = min(vals) if t is MinOver else max(vals)
        elif t is Gap:
            idx = node.indices
            if idx.size == 1:
                i = int(idx[0])
                if not 0 <= i < n:
                    raise IndexError(f"candidate index out of range: {i} vs n={n}")
                v = math.inf
            elif idx.size <= _SMALL:
                lst = idx.tolist()
                if min(lst) < 0:
                    raise IndexError(f"negative candidate index in {lst}")
                s1, s2 = _two_smallest(losses[i] for i in lst)
                v = s2 - s1
            else:
                _check_bounds(idx, n)
                two = np.partition(arr[idx], 1)[:2]
                v = float(two[1] - two[0])
        elif t is GapOver:
            if len(node.children) == 1:
                ev(node.children[0])  # still validated
                v = math.inf
            else:
                s1, s2 = _two_smallest(ev(c) for c in node.children)
                v = s2 - s1
        elif t is Sub:
            v = ev(node.left) - ev(node.right)
        elif t is Scale:
            v = node.factor * ev(node.child)
        elif t is AddConst:
            v = ev(node.child) + node.offset
        else:
            raise TypeError(f"not a loss expression: {node!r}")
        memo[key] = (node, v)
        return v

    return ev(expr)


def sensitivity_bound(expr: LossExpr, memo: dict | None = None) -> float:
    """Structural upper bound on the value change between neighboring losses.

    Neighboring means coordinate-wise difference at most 1.  The bound is
    sound wherever both evaluations are finite; see the module docstring for
    the per-node rules.
    """
    if _is_min_comparison(expr):
        return abs(expr.factor) * 2.0
    if memo is None:
        memo = {}

    def bd(node) -> float:
        key = id(node)
        hit = memo.get(key)
        if hit is not None:
            return hit[1]
        t = type(node)
        if t is Base:
            b = 1.0
        elif t is Const:
            b = 0.0
        elif t is MinOver or t is MaxOver:
            if node.base_indices is not None:
                b = 1.0
            else:
                b = max(bd(c) for c in node.children)
        elif t is Gap:
            b = 0.0 if node.indices.size == 1 else 2.0
        elif t is GapOver:
            if len(node.children) == 1:
                b = 0.0
            else:
                b = 2.0 * max(bd(c) for c in node.children)
        elif t is Sub:
            b = bd(node.left) + bd(node.right)
        elif t is Scale:
            b = abs(node.factor) * bd(node.child)
        elif t is AddConst:
            b = bd(node.child)
        else:
            raise TypeError(f"not a loss expression: {node!r}")
        memo[key] = (node, b)
        return b

    return bd(expr)


def build_bintree_query(c1: Iterable[int], c2: Iterable[int]) -> LossExpr:
    """Half the difference of subtree minima: (min over c1 - min over c2) / 2.

    The halving keeps the sensitivity bound at exactly 1.
    """
    a1 = np.unique(_index_array(c1))
    a2 = np.unique(_index_array(c2))
    if a1.size == 0 or a2.size == 0:
        raise ValueError("both candidate sets must be non-empty")
    if np.intersect1d(a1, a2).size:
        raise ValueError("candidate sets must be disjoint")
    return Scale(0.5, Sub(MinOver(base_indices=a1), MinOver(base_indices=a2)))


def build_tilde_loss(subset: Iterable[int], k: int, xi_value: float,
                     universe: Iterable[int]) -> LossExpr:
    """Derived loss scoring a candidate subset by gap and offset optimum.

    Returns

        (1/2) * max( min over subset - (min over universe + (k + sqrt(k)) * xi_value),
                     -gap(subset) )

    The universe minimum realizes the optimal loss as a sensitivity-1
    function of the data, so the whole expression has sensitivity bound
    exactly 1.  A singleton subset has gap +inf, so its score reduces to the
    first branch.
    """
    if not (isinstance(k, int) and k >= 1):
        raise ValueError(f"k must be a positive integer, got {k}")
    if not xi_value > 0:
        raise ValueError(f"xi_value must be positive, got {xi_value}")
    sub = np.unique(_index_array(subset))
    uni = np.unique(_index_array(universe))
    if sub.size == 0:
        raise ValueError("subset must be non-empty")
    if np.setdiff1d(sub, uni).size:
        raise ValueError("subset must be contained in the universe")
    offset = (k + math.sqrt(k)) * xi_value
    return Scale(0.5, MaxOver((
        Sub(MinOver(base_indices=sub), AddConst(offset, MinOver(base_indices=uni))),
        Scale(-1.0, Gap(sub)),
    )))


# ---------------------------------------------------------------------------
# Canonical text serialization.


def _fmt_num(x: float) -> str:
    return repr(float(x))


def format_expr(expr: LossExpr) -> str:
    """Canonical prefix-notation text of an expression."""
    t = type(expr)
    if t is Base:
        return f"(base {expr.index})"
    if t is Const:
        return f"(const {_fmt_num(expr.value)})"
    if t is MinOver or t is MaxOver:
        tag = "min" if t is MinOver else "max"
        if expr.base_indices is not None:
            inner = " ".join(f"(base {int(i)})" for i in expr.base_indices)
        else:
            inner = " ".join(format_expr(c) for c in expr.children)
        return f"({tag} {inner})"
    if t is Gap:
        return "(gap " + " ".join(str(int(i)) for i in expr.indices) + ")"
    if t is GapOver:
        return "(gapx " + " ".join(format_expr(c) for c in expr.children) + ")"
    if t is Sub:
        return f"(sub {format_expr(expr.left)} {format_expr(expr.right)})"
    if t is Scale:
        return f"(scale {_fmt_num(expr.factor)} {format_expr(expr.child)})"
    if t is AddConst:
        return f"(addc {_fmt_num(expr.offset)} {format_expr(expr.child)})"
    raise TypeError(f"not a loss expression: {expr!r}")


class ParseError(ValueError):
    pass


def _tokenize(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def parse_expr(text: str) -> LossExpr:
    """Parse the canonical prefix notation back into an expression."""
    tokens = _tokenize(text)
    pos = 0

    def expect(tok: str) -> None:
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != tok:
            raise ParseError(f"expected {tok!r} at token {pos}")
        pos += 1

    def number() -> float:
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("unexpected end of input")
        tok = tokens[pos]
        pos += 1
        try:
            return float(tok)
        except ValueError as exc:
            raise ParseError(f"expected a number, got {tok!r}") from exc

    def integer() -> int:
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("unexpected end of input")
        tok = tokens[pos]
        pos += 1
        if not tok.lstrip("-").isdigit():
            raise ParseError(f"expected an integer, got {tok!r}")
        return int(tok)

    def expr() -> LossExpr:
        nonlocal pos
        expect("(")
        if pos >= len(tokens):
            raise ParseError("unexpected end of input")
        head = tokens[pos]
        pos += 1
        if head == "base":
            node: LossExpr = Base(integer())
        elif head == "const":
            node = Const(number())
        elif head in ("min", "max"):
            children = [expr()]
            while pos < len(tokens) and tokens[pos] == "(":
                children.append(expr())
            cls = MinOver if head == "min" else MaxOver
            node = cls(tuple(children))
        elif head == "gap":
            idx = [integer()]
            while pos < len(tokens) and tokens[pos] != ")":
                idx.append(integer())
            node = Gap(np.asarray(idx, dtype=np.int64))
        elif head == "gapx":
            children = [expr()]
            while pos < len(tokens) and tokens[pos] == "(":
                children.append(expr())
            node = GapOver(tuple(children))
        elif head == "sub":
            node = Sub(expr(), expr())
        elif head == "scale":
            node = Scale(number(), expr())
        elif head == "addc":
            node = AddConst(number(), expr())
        else:
            raise ParseError(f"unknown operator {head!r}")
        expect(")")
        return node

    node = expr()
    if pos != len(tokens):
        raise ParseError(f"trailing tokens after expression: {tokens[pos:]}")
    return node
