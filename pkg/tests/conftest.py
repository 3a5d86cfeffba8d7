import numpy as np
import pytest

from exactsr.data_io import Dataset
from exactsr.expr import Binary, Const, OperatorSet, Var, evaluate_many, with_constants
from exactsr.grammar import enumerate_trees
from exactsr.solver import SolverConfig, epsilon_from_percent

ORACLE_OPS = ("add", "mul")


def random_oracle_case(seed: int, n: int = 6, m: int = 2, noise: float = 0.002):
    """A dataset drawn from a random depth-2 structure, plus a matching config."""
    rng = np.random.default_rng(seed)
    ops = OperatorSet.from_names(ORACLE_OPS)
    trees = list(enumerate_trees(2, ops, m, constants=True, max_constants=1))
    while True:
        t = trees[rng.integers(len(trees))]
        k = sum(1 for _ in _consts(t))
        t = with_constants(t, list(rng.uniform(0.5, 3.0, k)))
        X = rng.uniform(0.5, 3.0, (n, m))
        y = evaluate_many(t, X) * (1 + rng.uniform(-noise, noise, n))
        if np.all(np.isfinite(y)) and np.all(np.abs(y) > 1e-6):
            break
    ds = Dataset(tuple(f"x{i + 1}" for i in range(m)), X, y, provenance=f"oracle-case-{seed}")
    cfg = SolverConfig(epsilon=epsilon_from_percent(1.0, n), depth=2, operators=ops,
                       max_constants=1, seed=seed)
    return ds, cfg, t


def _consts(t):
    from exactsr.expr import walk
    return (s for s in walk(t) if isinstance(s, Const))


@pytest.fixture
def kepler_like():
    """Five points of y = 2 sqrt(tau)."""
    tau = np.array([0.5, 1.0, 2.0, 4.0, 9.0])
    return tau[:, None], 2 * np.sqrt(tau)


def identity_dataset(n: int = 5) -> Dataset:
    x = np.linspace(0.5, 3.0, n)
    return Dataset(("x1",), x[:, None], x.copy())


__all__ = ["Binary", "Const", "Var", "identity_dataset", "random_oracle_case"]
