import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exactsr.bounds import (INFEASIBLE, BoundContext, ZeroTarget, error_lower_bound,
                            interval_evaluate, iv_mul, propagate, propagate_batch, prune)
from exactsr.expr import (ADD, MUL, SQRT, Binary, Const, OperatorSet, Unary, Var, constants,
                          evaluate, with_constants)
from exactsr.grammar import (CONST, OFF, PartialAssignment, branch, build_template, empty_partial,
                             encode, enumerate_trees, op_label, var_label)

OPS = OperatorSet.from_names(["add", "sub", "mul", "sqrt", "cbrt"])


def partial(labels):
    return PartialAssignment(tuple(labels))


def complete_partial(tree, depth, m):
    template = build_template(depth)
    return partial(encode(tree, template, OPS, m).labels())


# --- propagate ---------------------------------------------------------------

def test_add_of_two_variables_is_a_point():
    ctx = BoundContext(((0, 10), (0, 10)))
    p = partial([op_label(ADD), var_label(0), var_label(1)])
    iv = propagate(p, ctx, (2.0, 3.0))[0]
    # [5, 5] up to the one-ulp outward rounding
    assert 5.0 in iv and iv.hi - iv.lo <= 4 * np.spacing(5.0)


def test_sqrt_of_negative_range_is_infeasible():
    ctx = BoundContext(((-4.0, -1.0),))
    p = partial([op_label(SQRT), var_label(0), OFF])
    assert propagate(p, ctx) == INFEASIBLE


def test_interval_multiplication():
    lo, hi = iv_mul(np.array(-1.0), np.array(2.0), np.array(3.0), np.array(4.0))
    assert lo <= -4.0 and hi >= 8.0
    assert lo > -4.0 - 1e-12 and hi < 8.0 + 1e-12


def test_constant_leaf_gets_the_box():
    ctx = BoundContext(((1.0, 2.0),), const_box=7.0)
    p = partial([op_label(MUL), CONST, var_label(0)])
    iv = propagate(p, ctx, (2.0,))[0]
    assert iv.lo <= -14.0 and iv.hi >= 14.0


def test_undecided_node_hull_covers_every_label():
    ctx = BoundContext(((1.0, 4.0),), const_box=3.0)
    template = build_template(1)
    p = empty_partial(template)
    root = propagate(p, ctx, (4.0,), OPS)[0]
    for child in branch(p, template, OPS, 1):
        for leaf in ([child] if child.complete else branch(child, template, OPS, 1)):
            if not leaf.complete:
                continue
            sub = propagate(leaf, ctx, (4.0,), OPS)
            if sub == INFEASIBLE:
                continue
            assert root.lo <= sub[0].lo and sub[0].hi <= root.hi


def test_fixing_a_label_never_widens():
    rng = np.random.default_rng(5)
    ctx = BoundContext(((0.5, 3.0), (0.5, 3.0)), const_box=10.0)
    template = build_template(2)
    for _ in range(40):
        p = empty_partial(template)
        x = rng.uniform(0.5, 3.0, 2)
        while not p.complete:
            kids = branch(p, template, OPS, 2)
            if not kids:
                break
            child = kids[rng.integers(len(kids))]
            before = propagate(p, ctx, x, OPS)
            after = propagate(child, ctx, x, OPS)
            if before != INFEASIBLE and after != INFEASIBLE:
                for n, iv in after.items():
                    if n in before and not iv.empty:
                        assert before[n].lo <= iv.lo and iv.hi <= before[n].hi
            p = child


# --- error_lower_bound ---------------------------------------------------------

def test_error_lower_bound_examples():
    y = np.array([2.0, 3.0])
    assert error_lower_bound(np.array([1.0, 2.0]), np.array([3.0, 4.0]), y) == 0.0
    assert error_lower_bound(np.array([3.0]), np.array([4.0]), np.array([2.0])) == pytest.approx(0.25)
    mixed = error_lower_bound(np.array([1.0, 3.3]), np.array([3.0, 4.0]), y)
    assert mixed == pytest.approx(0.01)


def test_error_lower_bound_negative_target():
    # [-1, -0.5] / -2 = [0.25, 0.5]; gap to 1 is 0.5
    assert error_lower_bound(np.array([-1.0]), np.array([-0.5]), np.array([-2.0])) == pytest.approx(0.25)


def test_error_lower_bound_zero_target():
    with pytest.raises(ZeroTarget):
        error_lower_bound(np.array([1.0]), np.array([2.0]), np.array([0.0]))


@settings(max_examples=300, deadline=None)
@given(st.floats(-50, 50), st.floats(0, 20), st.floats(0, 1), st.floats(0.1, 40), st.booleans())
def test_error_lower_bound_is_sound(lo, width, frac, y, neg):
    y = -y if neg else y
    hi = lo + width
    v = lo + frac * width
    bound = error_lower_bound(np.array([lo]), np.array([hi]), np.array([y]))
    assert bound <= (v / y - 1) ** 2 + 1e-15


# --- prune -------------------------------------------------------------------

def test_prune_dominated():
    ctx = BoundContext(((1.0, 2.0),))
    p = partial([op_label(ADD), var_label(0), var_label(0)])
    X = np.array([[1.0], [2.0]])
    y = np.array([2.0, 4.0])
    assert prune(p, 3, X, y, 0.1, ctx) == "dominated"


def test_prune_infeasible():
    ctx = BoundContext(((-3.0, -1.0),))
    p = partial([op_label(SQRT), var_label(0), OFF])
    X = np.array([[-3.0], [-1.0]])
    assert prune(p, None, X, np.array([1.0, 1.0]), 0.1, ctx) == "infeasible"


def test_prune_bound_and_keep():
    X = np.array([[1.0], [2.0]])
    ctx = BoundContext.from_data(X)
    p = partial([var_label(0)])
    assert prune(p, None, X, np.array([10.0, 20.0]), 0.1, ctx) == "bound"
    template = build_template(2)
    assert prune(empty_partial(template), None, X, np.array([10.0, 20.0]), 0.1, ctx, OPS) is None


# --- soundness over concrete trees -----------------------------------------------

def test_interval_evaluate_contains_samples():
    rng = np.random.default_rng(11)
    pool = list(enumerate_trees(2, OPS, 2, max_constants=2))
    for _ in range(200):
        t = pool[rng.integers(len(pool))]
        k = len(constants(t))
        X = rng.uniform(-3, 3, (4, 2))
        lo = rng.uniform(-5, 0, (1, k))
        hi = lo + rng.uniform(0, 5, (1, k))
        L, H = interval_evaluate(t, X, lo, hi)
        c = lo + rng.uniform(0, 1, (1, k)) * (hi - lo)
        tc = with_constants(t, list(c[0]))
        for i, x in enumerate(X):
            try:
                v = evaluate(tc, x)
            except ArithmeticError:
                continue
            assert L[0, i] <= v <= H[0, i]


def test_propagate_batch_matches_pointwise():
    X = np.array([[1.0, 2.0], [3.0, 0.5]])
    ctx = BoundContext.from_data(X)
    t = Binary(ADD, Var(0), Unary(SQRT, Var(1)))
    p = complete_partial(t, 2, 2)
    batch = propagate_batch(p, ctx, X, OPS)
    for i, x in enumerate(X):
        single = propagate(p, ctx, x, OPS)
        assert single[0].lo == batch[0][0][i] and single[0].hi == batch[0][1][i]


def test_const_as_constant_in_box():
    ctx = BoundContext(((0.0, 1.0),), const_box=2.0)
    p = complete_partial(Binary(MUL, Const(1.5), Var(0)), 1, 1)
    iv = propagate(p, ctx, (1.0,))[0]
    assert 1.5 in iv
