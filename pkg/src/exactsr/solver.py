"""Best-first branch-and-bound over expression structures."""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import bounds
from .bounds import BoundContext, min_complexity
from .constfit import CERTIFY_BUDGET, HEURISTIC, NeverEvaluable, fit, fitted_tree
from .data_io import Dataset
from .expr import (DEFAULT_MAGNITUDE_BOUND, DEFAULT_OPERATORS, OperatorSet, Tree, complexity,
                   constants, render, weighted_complexity)
from .grammar import (MAX_DEPTH, TooLarge, branch, build_template, canonical_key, count_structures,
                      empty_partial, enumerate_trees)

GLOBAL = "global-optimal"
UP_TO_HEURISTIC = "optimal-up-to-continuous-heuristic"
INCUMBENT_ONLY = "incumbent-only"

OBJECTIVES = ("node-count", "weighted")
SIX_HOURS = 6 * 3600.0
EXHAUSTIVE_GUARD = 200_000


class InvalidConfig(ValueError):
    pass


class NoFeasibleModel(RuntimeError):
    def __init__(self, message: str, best_residual: float, stats: "SearchStats"):
        super().__init__(message)
        self.best_residual = best_residual
        self.stats = stats


def epsilon_from_percent(percent: float, n_obs: int) -> float:
    """Bound on sum_i (v_i/y_i - 1)^2 equivalent to an RMS relative error of ``percent``."""
    return n_obs * (percent / 100.0) ** 2


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float
    depth: int = 3
    operators: OperatorSet = field(default_factory=lambda: OperatorSet.from_names(DEFAULT_OPERATORS))
    objective: str = "node-count"
    const_box: float = bounds.DEFAULT_CONST_BOX
    max_constants: int = 2
    time_limit: float = SIX_HOURS
    node_limit: int | None = None
    seed: int = 0
    prune: bool = True
    certify_budget: int = CERTIFY_BUDGET
    magnitude: float = DEFAULT_MAGNITUDE_BOUND

    def check(self) -> None:
        if not self.epsilon > 0:
            raise InvalidConfig("epsilon must be positive")
        if not 0 <= self.depth <= MAX_DEPTH:
            raise InvalidConfig(f"depth must lie in 0..{MAX_DEPTH}")
        if not self.time_limit > 0:
            raise InvalidConfig("time limit must be positive")
        if self.objective not in OBJECTIVES:
            raise InvalidConfig(f"objective must be one of {OBJECTIVES}")
        if self.max_constants < 0:
            raise InvalidConfig("max_constants must be nonnegative")
        if not self.const_box > 0:
            raise InvalidConfig("constant box must be positive")
        if self.node_limit is not None and self.node_limit < 1:
            raise InvalidConfig("node limit must be at least 1")


@dataclass
class SearchStats:
    nodes_explored: int = 0
    nodes_pruned: dict[str, int] = field(
        default_factory=lambda: {"bound": 0, "dominated": 0, "infeasible": 0})
    structures_fitted: int = 0
    duplicates_skipped: int = 0
    certified_rejections: int = 0
    heuristic_rejections: int = 0
    wall_time: float = 0.0

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "nodes_explored": self.nodes_explored,
            "nodes_pruned": dict(sorted(self.nodes_pruned.items())),
            "structures_fitted": self.structures_fitted,
            "duplicates_skipped": self.duplicates_skipped,
            "certified_rejections": self.certified_rejections,
            "heuristic_rejections": self.heuristic_rejections,
        }
        if timing:
            d["wall_time"] = self.wall_time
        return d


@dataclass(frozen=True)
class Solution:
    expression: Tree
    structure: Tree
    complexity: float
    residual: float
    certificate: str
    stats: SearchStats

    @property
    def key(self) -> str:
        return canonical_key(self.structure)

    def to_dict(self, names=None, timing: bool = False) -> dict:
        return {
            "expression": render(self.expression, names),
            "structure": render(self.structure, names, symbolic_constants=True),
            "constants": constants(self.expression),
            "canonical_key": self.key,
            "complexity": self.complexity,
            "residual": self.residual,
            "certificate": self.certificate,
            "stats": self.stats.to_dict(timing),
        }


class _Search:
    """Shared bookkeeping for solve and the exhaustive oracle."""

    def __init__(self, dataset: Dataset, config: SolverConfig):
        config.check()
        if dataset.m < 1:
            raise InvalidConfig("dataset needs at least one input variable")
        self.X = np.asarray(dataset.X, dtype=float)
        self.y = np.asarray(dataset.y, dtype=float)
        self.config = config
        self.stats = SearchStats()
        self.best: tuple | None = None  # (complexity, tree, structure, residual)
        self.heuristic_floor = np.inf
        self.best_residual = np.inf
        self.start = time.perf_counter()

    def measure(self, tree: Tree) -> float:
        if self.config.objective == "weighted":
            return weighted_complexity(tree, self.config.operators)
        return complexity(tree)

    def consider(self, structure: Tree) -> None:
        cfg = self.config
        cost = self.measure(structure)
        self.stats.structures_fitted += 1
        try:
            res = fit(structure, self.X, self.y, cfg.epsilon, cfg.const_box, cfg.seed,
                      cfg.certify_budget, cfg.magnitude)
        except NeverEvaluable:
            self.stats.certified_rejections += 1
            return
        self.best_residual = min(self.best_residual, res.residual)
        if res.feasible:
            if self.best is None or (cost, canonical_key(structure)) < (self.best[0], canonical_key(self.best[2])):
                self.best = (cost, fitted_tree(structure, res), structure, res.residual)
        elif res.status == HEURISTIC:
            self.stats.heuristic_rejections += 1
            self.heuristic_floor = min(self.heuristic_floor, cost)
        else:
            self.stats.certified_rejections += 1

    def out_of_budget(self) -> bool:
        cfg = self.config
        if cfg.node_limit is not None and self.stats.nodes_explored >= cfg.node_limit:
            return True
        return time.perf_counter() - self.start > cfg.time_limit

    def finish(self, limit_hit: bool) -> Solution:
        self.stats.wall_time = time.perf_counter() - self.start
        if self.best is None:
            why = "search limit reached before any feasible model" if limit_hit else \
                "no structure meets the error bound"
            raise NoFeasibleModel(why, self.best_residual, self.stats)
        cost, tree, structure, resid = self.best
        if limit_hit:
            cert = INCUMBENT_ONLY
        elif self.heuristic_floor < cost:
            cert = UP_TO_HEURISTIC
        else:
            cert = GLOBAL
        return Solution(tree, structure, cost, resid, cert, self.stats)


def solve(dataset: Dataset, config: SolverConfig) -> Solution:
    """Minimum-complexity expression meeting the error bound.

    Nodes leave the frontier in order of (minimum achievable complexity,
    creation order).  Once a feasible structure is known, nodes that cannot
    beat its complexity are dominated; nodes that could tie are still
    explored so that ties resolve to the smallest canonical key.
    """
    s = _Search(dataset, config)
    cfg = config
    ops = cfg.operators
    template = build_template(cfg.depth)
    ctx = BoundContext.from_data(s.X, const_box=cfg.const_box, magnitude=cfg.magnitude,
                                 max_constants=cfg.max_constants)
    seq = itertools.count()
    root = empty_partial(template)
    heap = [(min_complexity(root, cfg.objective), next(seq), root)]
    seen: set[str] = set()
    limit_hit = False
    while heap:
        if s.out_of_budget():
            limit_hit = True
            break
        lb, _, p = heapq.heappop(heap)
        if cfg.prune and s.best is not None and lb > s.best[0]:
            s.stats.nodes_pruned["dominated"] += 1 + len(heap)
            heap.clear()
            break
        s.stats.nodes_explored += 1
        if cfg.prune:
            reason = bounds.prune(p, None, s.X, s.y, cfg.epsilon, ctx, ops, cfg.objective)
            if reason is not None:
                s.stats.nodes_pruned[reason] += 1
                continue
        if p.complete:
            structure = p.tree()
            key = canonical_key(structure)
            if key in seen:
                s.stats.duplicates_skipped += 1
                continue
            seen.add(key)
            s.consider(structure)
            continue
        for child in branch(p, template, ops, dataset.m, cfg.max_constants):
            heapq.heappush(heap, (min_complexity(child, cfg.objective), next(seq), child))
    return s.finish(limit_hit)


def sweep(dataset: Dataset, config: SolverConfig, epsilons, keep_going: bool = False) -> list:
    """One solve per error bound.  With ``keep_going`` a NoFeasibleModel is
    recorded in place of the solution instead of being raised."""
    epsilons = list(epsilons)
    if not epsilons:
        raise InvalidConfig("no error bounds given")
    if any(e <= 0 for e in epsilons) or epsilons != sorted(epsilons):
        raise InvalidConfig("error bounds must be positive and ascending")
    rows = []
    for eps in epsilons:
        try:
            rows.append((eps, solve(dataset, replace(config, epsilon=eps))))
        except NoFeasibleModel as exc:
            if not keep_going:
                raise
            rows.append((eps, exc))
    return rows


def enumerate_exhaustive(dataset: Dataset, config: SolverConfig, guard: int = EXHAUSTIVE_GUARD) -> Solution:
    """Fit every valid structure, flips included, with no pruning."""
    s = _Search(dataset, config)
    cfg = config
    try:
        count_structures(cfg.depth, cfg.operators, dataset.m, constants=cfg.max_constants > 0,
                         max_constants=cfg.max_constants, guard=guard)
    except TooLarge as exc:
        raise TooLarge(f"exhaustive enumeration refused: {exc}") from None
    trees = enumerate_trees(cfg.depth, cfg.operators, dataset.m, constants=cfg.max_constants > 0,
                            max_constants=cfg.max_constants)
    ordered = sorted(trees, key=lambda t: (s.measure(t), canonical_key(t)))
    limit_hit = False
    for structure in ordered:
        if s.out_of_budget():
            limit_hit = True
            break
        s.stats.nodes_explored += 1
        s.consider(structure)
    return s.finish(limit_hit)
