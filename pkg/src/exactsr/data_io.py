"""Datasets: CSV ingestion, column normalisation and synthetic generators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .bounds import ZeroTarget

G = 9.81


class ParseError(ValueError):
    def __init__(self, row: int, col: int | str, message: str):
        super().__init__(f"row {row}, column {col}: {message}")
        self.row = row
        self.col = col


class MissingColumn(KeyError):
    pass


class ZeroDivisor(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    variable_names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    target_name: str = "y"
    provenance: str = ""
    normalization: tuple[tuple[str, float], ...] = field(default=())

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y disagree on the number of rows")
        if X.shape[1] != len(self.variable_names):
            raise ValueError("X width does not match variable_names")
        if y.size == 0:
            raise ValueError("dataset is empty")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("dataset contains missing or non-finite values")
        zero = np.flatnonzero(y == 0)
        if zero.size:
            raise ZeroTarget(f"row {int(zero[0]) + 1}: target is zero", row=int(zero[0]) + 1)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "variable_names", tuple(self.variable_names))

    @property
    def m(self) -> int:
        return len(self.variable_names)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def rows(self) -> list[tuple[tuple[float, ...], float]]:
        return [(tuple(map(float, x)), float(t)) for x, t in zip(self.X, self.y)]

    def column(self, name: str) -> np.ndarray:
        if name == self.target_name:
            return self.y
        return self.X[:, self.variable_names.index(name)]

    def summary(self) -> dict:
        return {"m": self.m, "n": self.n, "variables": list(self.variable_names),
                "target": self.target_name, "provenance": self.provenance,
                "normalization": dict(self.normalization)}


def load_csv(path: str | Path, target_column: str) -> Dataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(1, 1, "missing header row") from None
        if target_column not in header:
            raise MissingColumn(f"target column {target_column!r} not in header {header}")
        t = header.index(target_column)
        xs, ys = [], []
        for r, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(r, len(row), f"expected {len(header)} fields, got {len(row)}")
            vals = []
            for c, cell in enumerate(row, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(r, c, f"not a number: {cell!r}") from None
            if vals[t] == 0:
                raise ZeroTarget(f"row {r}: target is zero", row=r)
            ys.append(vals[t])
            xs.append(vals[:t] + vals[t + 1:])
    if not ys:
        raise ParseError(2, 1, "no data rows")
    names = tuple(h for i, h in enumerate(header) if i != t)
    return Dataset(names, np.array(xs), np.array(ys), target_column, f"csv:{path}")


def write_csv(ds: Dataset, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*ds.variable_names, ds.target_name])
        for x, t in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(t))])


def normalize(ds: Dataset, divisors: Mapping[str, float]) -> Dataset:
    """Divide the named columns (target included) by the given factors."""
    X = ds.X.copy()
    y = ds.y.copy()
    norm = dict(ds.normalization)
    for name, d in divisors.items():
        if d == 0:
            raise ZeroDivisor(f"divisor for {name!r} is zero")
        if name == ds.target_name:
            y = y / d
        elif name in ds.variable_names:
            j = ds.variable_names.index(name)
            X[:, j] = X[:, j] / d
        else:
            raise MissingColumn(name)
        norm[name] = norm.get(name, 1.0) * d
    return replace(ds, X=X, y=y, normalization=tuple(sorted(norm.items())))


def synth_kepler(n_systems: int = 8, noise_rel: float = 0.01, seed: int = 42) -> Dataset:
    """Orbits obeying d^3 = tau^2 M, with multiplicative noise on d.

    tau in [0.1, 30] (years), M in [0.5, 2] (solar masses); planet mass m
    is at most 1e-3 M and plays no part in d.
    """
    if n_systems < 3:
        raise ValueError("need at least 3 systems")
    if noise_rel < 0:
        raise ValueError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    tau = rng.uniform(0.1, 30.0, n_systems)
    M = rng.uniform(0.5, 2.0, n_systems)
    m = M * rng.uniform(0.0, 1e-3, n_systems)
    eta = rng.uniform(-noise_rel, noise_rel, n_systems)
    d = np.cbrt(tau**2 * M) * (1 + eta)
    return Dataset(("tau", "M", "m"), np.column_stack([tau, M, m]), d, "d",
                   f"synth_kepler(n_systems={n_systems}, noise_rel={noise_rel}, seed={seed})")


def pendulum_time(length, crossing):
    """Time of the given midpoint crossing: pi * j * sqrt(l / g)."""
    return math.pi * np.asarray(crossing) * np.sqrt(np.asarray(length) / G)


def synth_pendulum(n_tuples: int = 10, noise_abs_seconds: float = 0.005, seed: int = 7) -> Dataset:
    """Tuples (l, i, t_i, j) -> t_j for pendulums of length 0.28 to 0.307 m.

    ``t_i`` is redundant given l and i; both timestamps carry independent
    additive noise uniform in +-noise_abs_seconds.
    """
    if n_tuples < 3:
        raise ValueError("need at least 3 tuples")
    rng = np.random.default_rng(seed)
    length = rng.uniform(0.28, 0.307, n_tuples)
    j = rng.integers(2, 61, n_tuples)
    i = np.array([rng.integers(1, jj) for jj in j])
    t_i = pendulum_time(length, i) + rng.uniform(-noise_abs_seconds, noise_abs_seconds, n_tuples)
    t_j = pendulum_time(length, j) + rng.uniform(-noise_abs_seconds, noise_abs_seconds, n_tuples)
    return Dataset(("l", "i", "t_i", "j"), np.column_stack([length, i, t_i, j]), t_j, "t_j",
                   f"synth_pendulum(n_tuples={n_tuples}, noise_abs_seconds={noise_abs_seconds}, seed={seed})")

