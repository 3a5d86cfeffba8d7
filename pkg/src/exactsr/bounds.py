"""Interval enclosures of node values and sound error lower bounds.

Interval arrays are carried as ``(lo, hi)`` numpy pairs broadcast over
observations (and, for constant fitting, over parameter boxes).  An empty
interval has ``lo > hi``.  Every operation rounds outward by one ulp.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .expr import DEFAULT_MAGNITUDE_BOUND, Binary, Const, Tree, Unary, Var
from .grammar import PartialAssignment, required_status

INF = np.inf
DEFAULT_CONST_BOX = 100.0


class ZeroTarget(ValueError):
    def __init__(self, message: str = "relative error needs nonzero targets", row: int | None = None):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    @property
    def empty(self) -> bool:
        return not self.lo <= self.hi

    def __contains__(self, v: float) -> bool:
        return self.lo <= v <= self.hi

    def hull(self, other: "Interval") -> "Interval":
        if self.empty:
            return other
        if other.empty:
            return self
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))


EMPTY = Interval(INF, -INF)
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class BoundContext:
    var_ranges: tuple[tuple[float, float], ...]
    const_box: float = DEFAULT_CONST_BOX
    magnitude: float = DEFAULT_MAGNITUDE_BOUND
    max_constants: int = 2

    def __post_init__(self):
        if not self.const_box > 0:
            raise ValueError("constant box half-width must be positive")
        if not all(np.isfinite(a) and np.isfinite(b) and a <= b for a, b in self.var_ranges):
            raise ValueError("variable ranges must be finite")

    @classmethod
    def from_data(cls, X: np.ndarray, **kw) -> "BoundContext":
        X = np.asarray(X, dtype=float)
        return cls(tuple((float(c.min()), float(c.max())) for c in X.T), **kw)


# --- interval operator rules ----------------------------------------------------

def _down(a):
    return np.nextafter(a, -INF)


def _up(a):
    return np.nextafter(a, INF)


def _empty_like(lo):
    return np.full(np.shape(lo), INF), np.full(np.shape(lo), -INF)


def _mask_empty(lo, hi, empty):
    return np.where(empty, INF, lo), np.where(empty, -INF, hi)


def iv_add(al, ah, bl, bh):
    empty = (al > ah) | (bl > bh)
    with np.errstate(invalid="ignore"):
        return _mask_empty(_down(al + bl), _up(ah + bh), empty)


def iv_sub(al, ah, bl, bh):
    empty = (al > ah) | (bl > bh)
    with np.errstate(invalid="ignore"):
        return _mask_empty(_down(al - bh), _up(ah - bl), empty)


def iv_mul(al, ah, bl, bh):
    empty = (al > ah) | (bl > bh)
    with np.errstate(invalid="ignore"):
        p = np.stack(np.broadcast_arrays(al * bl, al * bh, ah * bl, ah * bh))
        p = np.where(np.isnan(p), 0.0, p)  # 0 * inf only arises on empty operands
    return _mask_empty(_down(p.min(axis=0)), _up(p.max(axis=0)), empty)


def iv_sqrt(al, ah):
    empty = (al > ah) | (ah < 0)
    with np.errstate(invalid="ignore"):
        lo = np.sqrt(np.maximum(al, 0.0))
        hi = np.sqrt(np.maximum(ah, 0.0))
    return _mask_empty(np.maximum(_down(lo), 0.0), _up(hi), empty)


def iv_cbrt(al, ah):
    empty = al > ah
    return _mask_empty(_down(np.cbrt(al)), _up(np.cbrt(ah)), empty)


def iv_pow(al, ah, bl, bh):
    # base restricted to (0, inf); x**y is monotone in each argument there,
    # so the extremes sit at the corners of the box.
    tiny = np.finfo(float).tiny
    empty = (al > ah) | (bl > bh) | (ah <= 0)
    bal = np.maximum(al, tiny)
    bah = np.maximum(ah, tiny)
    with np.errstate(all="ignore"):
        p = np.stack(np.broadcast_arrays(bal ** bl, bal ** bh, bah ** bl, bah ** bh))
        p = np.where(np.isnan(p), 0.0, p)
    return _mask_empty(_down(p.min(axis=0)), _up(p.max(axis=0)), empty)


INTERVAL_RULES: dict[str, Callable] = {
    "add": iv_add,
    "sub": iv_sub,
    "mul": iv_mul,
    "pow": iv_pow,
    "sqrt": iv_sqrt,
    "cbrt": iv_cbrt,
}


def register_interval_rule(op_id: str, rule: Callable) -> None:
    INTERVAL_RULES[op_id] = rule


def apply_op(op, *args, magnitude=DEFAULT_MAGNITUDE_BOUND):
    try:
        rule = INTERVAL_RULES[op.id]
    except KeyError:
        raise KeyError(f"no interval rule registered for operator {op.id!r}") from None
    lo, hi = rule(*args)
    return clip(lo, hi, magnitude)


def clip(lo, hi, magnitude):
    """Intersect with [-magnitude, magnitude]; values beyond it are invalid."""
    return np.maximum(lo, -magnitude), np.minimum(hi, magnitude)


def hull(a, b):
    """Union hull of two interval arrays (either may be empty)."""
    al, ah = a
    bl, bh = b
    ae = al > ah
    be = bl > bh
    lo = np.where(ae, bl, np.where(be, al, np.minimum(al, bl)))
    hi = np.where(ae, bh, np.where(be, ah, np.maximum(ah, bh)))
    return lo, hi


# --- propagation over partial assignments -------------------------------------------

def propagate_batch(p: PartialAssignment, ctx: BoundContext, X: np.ndarray,
                    ops=None) -> dict[int, tuple[np.ndarray, np.ndarray]] | None:
    """Per-node enclosures over every completion of ``p``, at each row of ``X``.

    Returns None when some node that must be active has an empty
    enclosure at some observation (no completion is evaluable there).
    ``ops`` (an OperatorSet) supplies the labels an undecided node may
    still take; without it undecided nodes are unbounded.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return _propagate(p, ctx, X, X, ops)


def _propagate(p, ctx, xlo, xhi, ops):
    labels = p.labels
    N = len(labels)
    M = ctx.magnitude
    n_obs = xlo.shape[0]
    out: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    full = (np.full(n_obs, -M), np.full(n_obs, M))
    box = (np.full(n_obs, -ctx.const_box), np.full(n_obs, ctx.const_box))
    if xlo.shape[1]:
        var_hull = (xlo.min(axis=1), xhi.max(axis=1))
    else:
        var_hull = _empty_like(np.zeros(n_obs))
    leaf_start = (N - 1) // 2
    for n in range(N - 1, -1, -1):
        lab = labels[n]
        if lab is not None and lab.kind == "off":
            continue
        if lab is None:
            if ops is None:
                iv = full
            else:
                iv = var_hull
                if p.n_constants < ctx.max_constants:
                    iv = hull(iv, box)
                if n < leaf_start:
                    cl, cr = out.get(2 * n + 1), out.get(2 * n + 2)
                    for op in ops.all:
                        if p.op_counts.get(op.id, 0) >= ops.cap(op.id):
                            continue
                        if cl is None or (op.arity == 2 and cr is None):
                            continue
                        args = (*cl,) if op.arity == 1 else (*cl, *cr)
                        iv = hull(iv, apply_op(op, *args, magnitude=M))
        elif lab.kind == "const":
            iv = box
        elif lab.kind == "var":
            iv = (xlo[:, lab.ref], xhi[:, lab.ref])
        else:
            op = lab.ref
            cl = out[2 * n + 1]
            args = (*cl,) if op.arity == 1 else (*cl, *out[2 * n + 2])
            iv = apply_op(op, *args, magnitude=M)
        iv = clip(*iv, M)
        if (lab is not None or required_status(labels, n) == "active") and np.any(iv[0] > iv[1]):
            return None
        out[n] = iv
    return out


def propagate(p: PartialAssignment, ctx: BoundContext, x: Sequence[float] | None = None,
              ops=None) -> dict[int, Interval] | str:
    """Single-point view of :func:`propagate_batch`, or :data:`INFEASIBLE`.

    With ``x`` omitted the observed variable ranges stand in for the input.
    """
    if x is None:
        xlo = np.array([[a for a, _ in ctx.var_ranges]])
        xhi = np.array([[b for _, b in ctx.var_ranges]])
    else:
        xlo = xhi = np.asarray(x, dtype=float)[None, :]
    res = _propagate(p, ctx, xlo, xhi, ops)
    if res is None:
        return INFEASIBLE
    return {n: Interval(float(lo[0]), float(hi[0])) for n, (lo, hi) in res.items()}


# --- concrete trees with boxed constants --------------------------------------

def interval_evaluate(tree: Tree, X: np.ndarray, c_lo: np.ndarray, c_hi: np.ndarray,
                      magnitude: float = DEFAULT_MAGNITUDE_BOUND):
    """Enclose the tree's value at each row of ``X`` for constants ranging over
    boxes ``[c_lo, c_hi]`` (shape (B, k), constants in preorder).
    Returns (lo, hi) of shape (B, n)."""
    X = np.asarray(X, dtype=float)
    c_lo = np.atleast_2d(c_lo)
    c_hi = np.atleast_2d(c_hi)
    shape = (c_lo.shape[0], X.shape[0])
    k = iter(range(1 << 30))

    def ev(t):
        if isinstance(t, Const):
            i = next(k)
            return (np.broadcast_to(c_lo[:, i:i + 1], shape), np.broadcast_to(c_hi[:, i:i + 1], shape))
        if isinstance(t, Var):
            v = np.broadcast_to(X[:, t.index], shape)
            return v, v
        if isinstance(t, Unary):
            return apply_op(t.op, *ev(t.child), magnitude=magnitude)
        a = ev(t.left)
        return apply_op(t.op, *a, *ev(t.right), magnitude=magnitude)

    return ev(tree)


# --- error bounds -----------------------------------------------------------------

def relative_gap(lo, hi, y):
    """Distance from 1 of the interval [lo, hi] / y, elementwise; inf where empty."""
    y = np.asarray(y, dtype=float)
    if np.any(y == 0):
        raise ZeroTarget("relative error needs nonzero targets")
    with np.errstate(invalid="ignore", over="ignore"):
        a = lo / y
        b = hi / y
        rlo = _down(np.minimum(a, b))
        rhi = _up(np.maximum(a, b))
        gap = np.maximum(np.maximum(rlo - 1.0, 1.0 - rhi), 0.0)
    return np.where(lo > hi, INF, gap)


def error_lower_bound(lo, hi, y) -> np.ndarray | float:
    """Lower bound on sum_i (v_i / y_i - 1)^2 given v_i in [lo_i, hi_i].

    Sums over the last axis; scalar for one-dimensional input.
    """
    g = relative_gap(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float), y)
    with np.errstate(invalid="ignore", over="ignore"):
        total = np.sum(g * g, axis=-1) * (1 - 1e-12)
    return float(total) if np.ndim(total) == 0 else total


def min_complexity(p: PartialAssignment, objective: str = "node-count") -> float:
    if objective == "weighted":
        return p.min_weight()
    return p.forced_active()


def prune(p: PartialAssignment, incumbent, X: np.ndarray, y: np.ndarray, epsilon: float,
          ctx: BoundContext, ops=None, objective: str = "node-count") -> str | None:
    """Reason to discard ``p`` ("infeasible", "dominated", "bound"), or None to keep.

    ``incumbent`` is a solution (anything with ``complexity``), a bare
    complexity value, or None.
    """
    if incumbent is not None:
        best = getattr(incumbent, "complexity", incumbent)
        if min_complexity(p, objective) >= best:
            return "dominated"
    nodes = propagate_batch(p, ctx, X, ops)
    if nodes is None:
        return "infeasible"
    lo, hi = nodes[0]
    if error_lower_bound(lo, hi, y) > epsilon:
        return "bound"
    return None
