"""Fitting the constants of a fixed structure to the relative-error objective.

The objective is ``sum_i (v_i / y_i - 1)**2``.  Constants are the
structure's constant leaves in preorder.  A local multistart search finds
good values; when it cannot meet the error bound an interval
branch-and-bound over the constant box tries to prove that nothing can.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bounds import DEFAULT_CONST_BOX, ZeroTarget, error_lower_bound, interval_evaluate
from .expr import (DEFAULT_MAGNITUDE_BOUND, Const, Tree, Unary, Var, constants, evaluate_many,
                   with_constants)

START_GRID = (0.0, -0.5, 0.5, -1.0, 1.0, -2.0, 2.0, -5.0, 5.0, -10.0, 10.0, -50.0, 50.0)
MAX_STARTS = 200
MAX_ITER = 100
STEP_TOL = 1e-10
MAX_HALVINGS = 40
CERTIFY_BUDGET = 100_000
SNAP_TOL = 1e-4

FEASIBLE = "feasible"
CERTIFIED = "infeasible-certified"
HEURISTIC = "infeasible-heuristic"


class NeverEvaluable(ValueError):
    """No constants in the box give a valid evaluation on every observation."""


@dataclass(frozen=True)
class FitResult:
    constants: tuple[float, ...]
    residual: float
    status: str
    lower_bound: float | None = None

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


@dataclass(frozen=True)
class Certificate:
    status: str  # "certified" | "undecided"
    lower_bound: float
    splits: int
    feasible_point: tuple[float, ...] | None = None
    evaluable: bool = True


# --- forward-mode derivatives ------------------------------------------------------

def _d_add(a, da, b, db):
    return a + b, da + db


def _d_sub(a, da, b, db):
    return a - b, da - db


def _d_mul(a, da, b, db):
    return a * b, a[..., None] * db + b[..., None] * da


def _d_pow(a, da, b, db):
    ok = a > 0
    sa = np.where(ok, a, 1.0)
    v = np.where(ok, sa ** b, np.nan)
    dv = (b * sa ** (b - 1))[..., None] * da + (v * np.log(sa))[..., None] * db
    return v, dv


def _d_sqrt(a, da):
    v = np.sqrt(np.where(a >= 0, a, np.nan))
    return v, da / (2 * v)[..., None]


def _d_cbrt(a, da):
    v = np.cbrt(a)
    return v, da / (3 * v * v)[..., None]


DERIVATIVE_RULES: dict[str, Callable] = {
    "add": _d_add,
    "sub": _d_sub,
    "mul": _d_mul,
    "pow": _d_pow,
    "sqrt": _d_sqrt,
    "cbrt": _d_cbrt,
}


def _values_and_jacobian(tree: Tree, X: np.ndarray, C: np.ndarray, bound: float):
    """Values (S, n) and derivatives (S, n, k) with respect to the constants."""
    S, k = C.shape
    n = X.shape[0]
    counter = itertools.count()

    def ev(t):
        if isinstance(t, Const):
            i = next(counter)
            d = np.zeros((S, n, k))
            d[..., i] = 1.0
            return np.broadcast_to(C[:, i:i + 1], (S, n)), d
        if isinstance(t, Var):
            return np.broadcast_to(X[:, t.index], (S, n)), np.zeros((S, n, k))
        rule = DERIVATIVE_RULES[t.op.id]
        if isinstance(t, Unary):
            v, d = rule(*ev(t.child))
        else:
            v, d = rule(*ev(t.left), *ev(t.right))
        bad = ~(np.abs(v) <= bound)
        return np.where(bad, np.nan, v), np.where(bad[..., None], np.nan, d)

    with np.errstate(all="ignore"):
        return ev(tree)


def _values(tree, X, C, bound):
    return evaluate_many(tree, X, C, bound)


# --- objective ----------------------------------------------------------------------

def _check_targets(y):
    y = np.asarray(y, dtype=float)
    if np.any(y == 0):
        raise ZeroTarget("relative error needs nonzero targets")
    return y


def residual(tree: Tree, X: np.ndarray, y: np.ndarray, consts=None,
             bound: float = DEFAULT_MAGNITUDE_BOUND) -> float:
    """sum_i (v_i / y_i - 1)^2, or inf when the tree is not evaluable everywhere."""
    y = _check_targets(y)
    if consts is None:
        consts = constants(tree)
    C = np.asarray(consts, dtype=float).reshape(1, -1)
    return float(_objective(_values(tree, np.asarray(X, float), C, bound), y)[0])


def _objective(V, y):
    with np.errstate(all="ignore"):
        f = np.sum((V / y - 1.0) ** 2, axis=-1)
    return np.where(np.isnan(f), np.inf, f)


# --- local search --------------------------------------------------------------------

def _starts(k: int, rng: np.random.Generator) -> np.ndarray:
    n_grid = len(START_GRID) ** k
    if n_grid <= MAX_STARTS:
        return np.array(list(itertools.product(START_GRID, repeat=k)), dtype=float)
    picks = rng.choice(n_grid, size=MAX_STARTS, replace=False)
    picks.sort()
    base = len(START_GRID)
    out = np.empty((MAX_STARTS, k))
    for j in range(k - 1, -1, -1):
        out[:, j] = np.asarray(START_GRID)[picks % base]
        picks //= base
    return out


def gauss_newton(tree: Tree, X: np.ndarray, y: np.ndarray, C0: np.ndarray, box: float,
                 bound: float = DEFAULT_MAGNITUDE_BOUND, max_iter: int = MAX_ITER):
    """Damped Gauss-Newton with step halving, run from every row of ``C0`` at once.

    Returns final constants (S, k) and objective values (S,).
    """
    C = np.clip(np.array(C0, dtype=float), -box, box)
    S, k = C.shape
    V, J = _values_and_jacobian(tree, X, C, bound)
    f = _objective(V, y)
    active = np.isfinite(f) & (f > 0)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        V, J = _values_and_jacobian(tree, X, C[idx], bound)
        r = V / y - 1.0
        Jr = J / y[:, None]
        bad = ~np.isfinite(Jr).all(axis=(1, 2))
        Jr = np.where(bad[:, None, None], 0.0, Jr)
        with np.errstate(all="ignore"):
            A = np.einsum("snk,snj->skj", Jr, Jr)
            g = np.einsum("snk,sn->sk", Jr, np.nan_to_num(r))
        bad |= ~(np.isfinite(A).all(axis=(1, 2)) & np.isfinite(g).all(axis=1))
        A[bad] = np.eye(k)
        g[bad] = 0.0
        damp = 1e-12 * (np.trace(A, axis1=1, axis2=2) + 1e-300)
        A = A + damp[:, None, None] * np.eye(k)
        try:
            step = -np.linalg.solve(A, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = -np.array([np.linalg.lstsq(a, b, rcond=None)[0] for a, b in zip(A, g)])
        step[bad] = 0.0
        alpha = np.ones(idx.size)
        done = bad.copy()
        moved = np.zeros(idx.size, dtype=bool)
        for _ in range(MAX_HALVINGS):
            todo = np.flatnonzero(~done)
            if todo.size == 0:
                break
            cand = np.clip(C[idx[todo]] + alpha[todo, None] * step[todo], -box, box)
            fc = _objective(_values(tree, X, cand, bound), y)
            # Near the minimum f is flat to a few ulps, so a strict decrease test
            # would drop the final corrections; allow that much slack.
            fo = f[idx[todo]]
            better = fc <= fo + 4 * np.spacing(fo)
            acc = todo[better]
            C[idx[acc]] = cand[better]
            f[idx[acc]] = fc[better]
            moved[acc] = True
            done[acc] = True
            alpha[todo[~better]] *= 0.5
        size = np.abs(alpha[:, None] * step).max(axis=1)
        converged = ~moved | (size < STEP_TOL * (1.0 + np.abs(C[idx]).max(axis=1))) | (f[idx] == 0)
        active[idx[converged]] = False
    return C, f


def _best(C: np.ndarray, f: np.ndarray) -> int:
    """Index of the smallest objective; ties go to the lexicographically smallest vector."""
    fmin = f.min()
    tied = np.flatnonzero(f == fmin)
    if tied.size == 1:
        return int(tied[0])
    keys = C[tied]
    order = np.lexsort(keys.T[::-1])
    return int(tied[order[0]])


# --- certification ---------------------------------------------------------------------

def certify_infeasible(tree: Tree, X: np.ndarray, y: np.ndarray, epsilon: float,
                       box: float = DEFAULT_CONST_BOX, budget: int = CERTIFY_BUDGET,
                       bound: float = DEFAULT_MAGNITUDE_BOUND) -> Certificate:
    """Interval branch-and-bound over the constant box.

    "certified" means every sub-box was shown to have objective above
    ``epsilon`` (or no valid evaluation); the returned lower bound then
    holds over the whole box.  A sub-box midpoint that meets the bound is
    reported as ``feasible_point`` and ends the search undecided.
    """
    X = np.asarray(X, dtype=float)
    y = _check_targets(y)
    k = len(constants(tree))
    if k == 0:
        raise ValueError("certification needs at least one constant")
    if budget <= 0:
        return Certificate("undecided", 0.0, 0)
    lo = np.full((1, k), -box)
    hi = np.full((1, k), box)
    splits = 0
    discarded_lb = np.inf
    evaluable = False
    while True:
        vlo, vhi = interval_evaluate(tree, X, lo, hi, bound)
        lb = np.atleast_1d(error_lower_bound(vlo, vhi, y))
        evaluable = evaluable or bool(np.isfinite(lb).any())
        drop = lb > epsilon
        if drop.any():
            discarded_lb = min(discarded_lb, float(lb[drop].min()))
        lo, hi, lb = lo[~drop], hi[~drop], lb[~drop]
        if lo.shape[0] == 0:
            return Certificate("certified", discarded_lb, splits, evaluable=evaluable)
        mid = 0.5 * (lo + hi)
        fm = _objective(_values(tree, X, mid, bound), y)
        if np.isfinite(fm).any():
            evaluable = True
        if (fm <= epsilon).any():
            j = int(np.argmin(fm))
            return Certificate("undecided", min(discarded_lb, float(lb.min())), splits,
                               tuple(mid[j]), evaluable)
        if splits + lo.shape[0] > budget:
            return Certificate("undecided", min(discarded_lb, float(lb.min())), splits,
                               evaluable=evaluable)
        splits += lo.shape[0]
        width = hi - lo
        dim = np.argmax(width, axis=1)
        rows = np.arange(lo.shape[0])
        cut = mid[rows, dim]
        lo2, hi2 = lo.copy(), hi.copy()
        hi[rows, dim] = cut
        lo2[rows, dim] = cut
        lo = np.concatenate([lo, lo2])
        hi = np.concatenate([hi, hi2])


# --- fitting ------------------------------------------------------------------------------

def fit(structure: Tree, X: np.ndarray, y: np.ndarray, epsilon: float,
        box: float = DEFAULT_CONST_BOX, seed: int = 0, budget: int = CERTIFY_BUDGET,
        bound: float = DEFAULT_MAGNITUDE_BOUND, snap: bool = True) -> FitResult:
    X = np.asarray(X, dtype=float)
    y = _check_targets(y)
    k = len(constants(structure))
    if k == 0:
        r = residual(structure, X, y, bound=bound)
        if not np.isfinite(r):
            raise NeverEvaluable("structure is undefined on some observation")
        return FitResult((), r, FEASIBLE if r <= epsilon else CERTIFIED, r)

    rng = np.random.default_rng(seed)
    C, f = gauss_newton(structure, X, y, _starts(k, rng), box, bound)
    i = _best(C, f)
    best_c, best_f = C[i], float(f[i])

    if best_f > epsilon:
        cert = certify_infeasible(structure, X, y, epsilon, box, budget, bound)
        if cert.feasible_point is not None:
            C2, f2 = gauss_newton(structure, X, y, np.array([cert.feasible_point]), box, bound)
            best_c, best_f = C2[0], float(f2[0])
        elif cert.status == "certified":
            if not cert.evaluable:
                raise NeverEvaluable("no constants in the box give a valid evaluation")
            return FitResult(tuple(map(float, best_c)), best_f, CERTIFIED, cert.lower_bound)
        else:
            return FitResult(tuple(map(float, best_c)), best_f, HEURISTIC, cert.lower_bound)

    if snap:
        best_c, best_f = _snap(structure, X, y, epsilon, best_c, best_f, bound)
    return FitResult(tuple(map(float, best_c)), best_f, FEASIBLE)


def _snap(structure, X, y, epsilon, c, f, bound):
    """Round near-integer constants when the rounded model still meets the bound."""
    c = np.array(c, dtype=float)
    for j in range(c.size):
        r = round(c[j])
        if r == c[j] or abs(c[j] - r) >= SNAP_TOL * max(1.0, abs(c[j])):
            continue
        trial = c.copy()
        trial[j] = r
        ft = float(_objective(_values(structure, X, trial[None, :], bound), y)[0])
        if ft <= epsilon:
            c, f = trial, ft
    return c, f


def fitted_tree(structure: Tree, result: FitResult) -> Tree:
    return with_constants(structure, result.constants) if result.constants else structure
