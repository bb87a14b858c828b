"""Episode-by-episode action selection.

* Single Episode (SE): solve the one-scenario program on blended sample means.
* Multi Episode (ME): solve the N-scenario program on tables resampled from
  the observed curves.
* random: uniform per actor (baseline).

SE and ME share the exploration knobs: ``tau`` initial random episodes and
per-actor epsilon-greedy replacement.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import SampleStore
from .errors import ConfigError
from .optimizer import SolveReport, Solver, as_table
from .simulator import Simulator, estimate_expected_reward

POLICY_KINDS = ("SE", "ME", "random")


@dataclass
class PolicyConfig:
    kind: str = "SE"
    beta: float = 0.0
    epsilon: float = 0.0
    tau: int = 0
    n_scenarios: int = 1
    initial_value_w: float = 2000.0

    def validate(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"policy.kind must be one of {POLICY_KINDS}")
        if self.beta < 0:
            raise ConfigError("policy.beta must be >= 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("policy.epsilon must lie in [0, 1]")
        if self.tau < 0:
            raise ConfigError("policy.tau must be >= 0")
        if self.n_scenarios < 1:
            raise ConfigError("policy.n_scenarios must be >= 1")

    def label(self) -> str:
        if self.kind == "SE":
            return f"SE beta={self.beta:g} eps={self.epsilon:g} tau={self.tau}"
        if self.kind == "ME":
            return f"ME N={self.n_scenarios} eps={self.epsilon:g} tau={self.tau}"
        return "random"


class Selection(NamedTuple):
    assignment: tuple
    report: Optional[SolveReport]


def initial_table(initial, n: int, k: int, H: int) -> np.ndarray:
    """Optimistic initial curves I(i, j, h) as an (n, k, H) array."""
    return np.broadcast_to(np.asarray(initial, dtype=float), (n, k, H)).copy()


def random_select(action_counts, rng: np.random.Generator) -> tuple:
    counts = np.asarray(action_counts, dtype=np.int64)
    return tuple(int(x) for x in rng.integers(0, counts))


def _explore(assignment, action_counts, epsilon, rng):
    # both draws happen every episode so the stream does not depend on epsilon
    n = len(assignment)
    flip = rng.random(n) < epsilon
    repl = rng.integers(0, np.asarray(action_counts, dtype=np.int64))
    return tuple(int(r) if f else int(a) for a, f, r in zip(assignment, flip, repl))


def _initial(store, config, initial):
    if initial is None:
        initial = config.initial_value_w
    return initial_table(initial, store.n, store.k_max, store.H)


def se_table(store: SampleStore, beta: float, initial) -> np.ndarray:
    return store.mean_table(beta, initial)[None]


def _select(table_fn, store, config, solver, rng, t, solver_rng):
    if t <= config.tau:
        return Selection(random_select(store.action_counts, rng), None)
    report = solver.solve(table_fn(), rng=solver_rng if solver_rng is not None else rng)
    return Selection(_explore(report.assignment, store.action_counts, config.epsilon, rng), report)


def se_select(store: SampleStore, config: PolicyConfig, solver: Solver, rng: np.random.Generator,
              t: int, initial=None, solver_rng=None) -> Selection:
    """Single Episode selection for episode ``t`` (1-based)."""
    init = _initial(store, config, initial)
    return _select(lambda: se_table(store, config.beta, init), store, config, solver, rng, t,
                   solver_rng)


def me_build_scenarios(store: SampleStore, N: int, initial, rng: np.random.Generator) -> np.ndarray:
    """N sample episodes built by drawing each (i, j) curve without replacement.

    A cell's samples are reshuffled only after all of them have been used, so
    per-curve usage counts differ by at most one. Unvisited cells hold the
    initial value in every scenario.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    init = initial_table(initial, store.n, store.k_max, store.H)
    table = np.broadcast_to(init, (N,) + init.shape).copy()
    for i in range(store.n):
        for j in range(store.action_counts[i]):
            samples = store.samples[i][j]
            m = len(samples)
            if m == 0:
                continue
            picks = np.concatenate([rng.permutation(m) for _ in range(-(-N // m))])[:N]
            table[:, i, j, :] = np.asarray(samples)[picks]
    return table


def me_select(store: SampleStore, config: PolicyConfig, solver: Solver, rng: np.random.Generator,
              t: int, initial=None, scenario_rng=None, solver_rng=None) -> Selection:
    """Multi Episode selection; ``scenario_rng`` feeds the resampling (defaults to ``rng``)."""
    init = _initial(store, config, initial)
    srng = rng if scenario_rng is None else scenario_rng
    return _select(lambda: me_build_scenarios(store, config.n_scenarios, init, srng),
                   store, config, solver, rng, t, solver_rng)


class Policy:
    """A configured policy bound to its own random streams.

    Exploration, scenario resampling and the solver draw from separate
    generators so that, for example, SE and ME see identical epsilon draws
    under the same seed.
    """

    def __init__(self, config: PolicyConfig, solver: Optional[Solver] = None, seed=None,
                 initial=None):
        config.validate()
        self.config = config
        self.solver = solver or Solver()
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        explore, scenario, solve = ss.spawn(3)
        self.rng = np.random.default_rng(explore)
        self.scenario_rng = np.random.default_rng(scenario)
        self.solver_rng = np.random.default_rng(solve)
        self.initial = initial

    def table(self, store: SampleStore) -> np.ndarray:
        """The scenario table this policy would hand to the solver now."""
        init = _initial(store, self.config, self.initial)
        if self.config.kind == "ME":
            return me_build_scenarios(store, self.config.n_scenarios, init, self.scenario_rng)
        return se_table(store, self.config.beta, init)

    def select(self, store: SampleStore, t: int) -> Selection:
        cfg = self.config
        if cfg.kind == "random":
            return Selection(random_select(store.action_counts, self.rng), None)
        if cfg.kind == "SE":
            return se_select(store, cfg, self.solver, self.rng, t, self.initial, self.solver_rng)
        return me_select(store, cfg, self.solver, self.rng, t, self.initial, self.scenario_rng,
                         self.solver_rng)


class OfflineOptimum(NamedTuple):
    assignment: tuple
    value: float            # re-estimated on fresh episodes
    stderr: float
    in_sample_value: float  # objective on the training scenarios
    report: SolveReport


def offline_optimal(sim: Simulator, n_scenarios: int, solver: Solver, rng: np.random.Generator,
                    eval_samples: int = 200, eval_rng: Optional[np.random.Generator] = None
                    ) -> OfflineOptimum:
    """Reference assignment from ground-truth scenarios, scored on fresh episodes."""
    table = as_table(sim.ground_truth_scenario(rng, n_scenarios))
    report = solver.solve(table, rng=rng)
    eval_rng = rng if eval_rng is None else eval_rng
    value, se = estimate_expected_reward(sim, report.assignment, eval_samples, eval_rng)
    return OfflineOptimum(report.assignment, value, se, report.value, report)
