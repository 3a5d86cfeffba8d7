"""Minimum-complexity symbolic regression with an optimality certificate."""

__version__ = "0.1.0"

from .data_io import Dataset, load_csv, synth_kepler, synth_pendulum
from .expr import evaluate, parse, render
from .solver import (NoFeasibleModel, Solution, SolverConfig, enumerate_exhaustive,
                     epsilon_from_percent, solve, sweep)

__all__ = [
    "Dataset", "NoFeasibleModel", "Solution", "SolverConfig", "enumerate_exhaustive",
    "epsilon_from_percent", "evaluate", "load_csv", "parse", "render", "solve", "sweep",
    "synth_kepler", "synth_pendulum",
]
