import math

import numpy as np
import pytest

from exactsr.bounds import ZeroTarget
from exactsr.constfit import (CERTIFIED, FEASIBLE, HEURISTIC, NeverEvaluable, certify_infeasible,
                              fit, fitted_tree, residual)
from exactsr.data_io import G, synth_pendulum
from exactsr.expr import (ADD, CBRT, MUL, SQRT, SUB, Binary, Const, OperatorSet, Unary, Var,
                          evaluate, evaluate_many, walk)
from exactsr.grammar import enumerate_trees
from exactsr.solver import epsilon_from_percent

C_SQRT = Binary(MUL, Const(1.0), Unary(SQRT, Var(0)))


def test_recovers_generator_constant(kepler_like):
    X, y = kepler_like
    r = fit(C_SQRT, X, y, 1e-6)
    assert r.status == FEASIBLE
    assert abs(r.constants[0] - 2.0) < 1e-6
    assert r.residual < 1e-10


def test_zero_constants_exact_model():
    X = np.array([[1.0], [2.0], [3.0]])
    r = fit(Var(0), X, X[:, 0].copy(), 0.01)
    assert r.feasible and r.residual == 0.0 and r.constants == ()


def test_zero_constants_matches_direct_formula():
    rng = np.random.default_rng(2)
    X = rng.uniform(0.5, 2, (7, 2))
    y = rng.uniform(0.5, 2, 7)
    t = Binary(ADD, Var(0), Unary(SQRT, Var(1)))
    v = np.array([evaluate(t, x) for x in X])
    direct = float(np.sum((v / y - 1) ** 2))
    assert fit(t, X, y, 100.0).residual == pytest.approx(direct, rel=0, abs=1e-12)
    assert residual(t, X, y) == pytest.approx(direct, abs=1e-12)


def test_pendulum_constant_times_j():
    ds = synth_pendulum(10, 0.005, 7)
    j = ds.variable_names.index("j")
    t = Binary(MUL, Const(1.0), Var(j))
    r = fit(t, ds.X, ds.y, epsilon_from_percent(5, ds.n))
    assert r.feasible
    expected = math.pi * math.sqrt(ds.column("l").mean() / G)
    assert r.constants[0] == pytest.approx(expected, rel=0.01)
    assert r.constants[0] == pytest.approx(0.540, abs=0.01)


def test_constant_only_model_certified_infeasible():
    X = np.array([[0.0], [0.0]])
    y = np.array([1.0, 2.0])
    r = fit(Const(1.0), X, y, 0.01)
    assert r.status == CERTIFIED
    # closed form: c = sum(1/y) / sum(1/y^2) = 1.5 / 1.25
    assert r.constants[0] == pytest.approx(1.2, rel=1e-8)
    assert r.residual == pytest.approx(0.2, rel=1e-8)
    assert r.lower_bound > 0.01


def test_exact_fit_never_certified():
    X = np.array([[1.0], [4.0], [9.0]])
    y = 3 * np.sqrt(X[:, 0])
    assert certify_infeasible(C_SQRT, X, y, 1e-3).status == "undecided"


def test_budget_zero_is_undecided():
    X = np.array([[0.0], [0.0]])
    y = np.array([1.0, 2.0])
    assert certify_infeasible(Const(1.0), X, y, 0.01, budget=0).status == "undecided"


def test_exhausted_budget_gives_heuristic_status():
    X = np.array([[0.0], [0.0]])
    y = np.array([1.0, 2.0])
    r = fit(Const(1.0), X, y, 0.01, budget=1)
    assert r.status == HEURISTIC


def test_zero_target():
    with pytest.raises(ZeroTarget):
        fit(C_SQRT, np.array([[1.0], [2.0]]), np.array([1.0, 0.0]), 0.1)


def test_never_evaluable():
    X = np.array([[-1.0], [-2.0]])
    with pytest.raises(NeverEvaluable):
        fit(Unary(SQRT, Var(0)), X, np.array([1.0, 1.0]), 0.1)
    with pytest.raises(NeverEvaluable):
        fit(Unary(SQRT, Binary(SUB, Var(0), Const(1.0))), X - 200, np.array([1.0, 1.0]), 0.1, budget=5000)


def test_snapping_is_feasibility_gated():
    X = np.linspace(1, 5, 6)[:, None]
    near = Binary(MUL, Const(1.0), Var(0))
    # c = 1.00002: snapped to 1 because 1 is still feasible
    y = 1.00002 * X[:, 0]
    assert fit(near, X, y, 1e-6).constants[0] == 1.0
    # c = 1.002 with a tight bound: 1 would break feasibility, so kept
    y = 1.002 * X[:, 0]
    r = fit(near, X, y, 1e-8)
    assert r.constants[0] == pytest.approx(1.002, rel=1e-9)
    assert fit(near, X, y, 1e-8, snap=False).constants[0] == pytest.approx(1.002, rel=1e-9)


def test_fit_is_deterministic_per_seed():
    rng = np.random.default_rng(4)
    X = rng.uniform(0.5, 3, (8, 2))
    y = np.cbrt(2.5 * X[:, 0]) + 0.7 * X[:, 1]
    t = Binary(ADD, Unary(CBRT, Binary(MUL, Const(1.0), Var(0))), Binary(MUL, Const(1.0), Var(1)))
    a = fit(t, X, y, 1e-6, seed=3)
    b = fit(t, X, y, 1e-6, seed=3)
    assert a == b and a.feasible
    assert a.constants == pytest.approx((2.5, 0.7), rel=1e-6)


def test_residual_matches_evaluate_recomputation():
    rng = np.random.default_rng(8)
    ops = OperatorSet.from_names(["add", "mul", "sqrt", "cbrt"])
    pool = [t for t in enumerate_trees(2, ops, 2, max_constants=2) if any(
        isinstance(s, Const) for s in walk(t))]
    for _ in range(40):
        t = pool[rng.integers(len(pool))]
        X = rng.uniform(0.5, 3, (6, 2))
        y = rng.uniform(0.5, 3, 6)
        r = fit(t, X, y, 1e9, budget=200)
        ft = fitted_tree(t, r)
        v = np.array([evaluate(ft, x) for x in X])
        assert r.residual == pytest.approx(float(np.sum((v / y - 1) ** 2)), rel=1e-12, abs=1e-15)


def test_single_constant_matches_closed_form():
    rng = np.random.default_rng(21)
    shapes = [Var(0), Unary(SQRT, Var(0)), Unary(CBRT, Binary(MUL, Var(0), Var(1))),
              Binary(ADD, Var(0), Var(1)), Binary(MUL, Var(0), Unary(SQRT, Var(1)))]
    for i in range(50):
        g = shapes[i % len(shapes)]
        X = rng.uniform(0.5, 4, (7, 2))
        y = rng.uniform(0.5, 4, 7)
        gv = evaluate_many(g, X)
        a = gv / y
        c_star = a.sum() / (a * a).sum()
        r = fit(Binary(MUL, Const(1.0), g), X, y, 1e9, snap=False)
        assert r.constants[0] == pytest.approx(c_star, rel=1e-8)


def test_certification_never_contradicts_a_feasible_point():
    rng = np.random.default_rng(99)
    ops = OperatorSet.from_names(["add", "sub", "mul", "sqrt", "cbrt"])
    pool = [t for t in enumerate_trees(2, ops, 2, max_constants=2) if any(
        isinstance(s, Const) for s in walk(t))]
    checked = 0
    while checked < 200:
        t = pool[rng.integers(len(pool))]
        X = rng.uniform(0.5, 3, (5, 2))
        y = rng.uniform(0.5, 3, 5)
        r = fit(t, X, y, 1e9, budget=0)
        if not np.isfinite(r.residual):
            continue
        eps = r.residual * 1.01 + 1e-12
        cert = certify_infeasible(t, X, y, eps, budget=2000)
        assert cert.status != "certified"
        checked += 1
