"""Combinatorial multi-bandit laboratory for max-min demand-response assignment."""

from .core import EpisodeRecord, RegretLedger, SampleStore, regret, reward
from .optimizer import Solver, SolverConfig, SolveReport, objective_value, solve_exact, \
    solve_local_search
from .simulator import SimParams, Simulator, build_action_set, sample_population

__version__ = "0.1.0"
