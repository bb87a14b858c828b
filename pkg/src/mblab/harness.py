"""Experiment configuration, execution, sweeps and CSV output.

A run draws a consumer population per repetition, computes the offline
optimal assignment once, then plays ``episodes`` rounds of the configured
policy. Every episode is scored by a Monte Carlo estimate of the expected
reward of the applied assignment, evaluated on common random numbers so
that regret differences between assignments are not swamped by noise.
"""
from __future__ import annotations

import csv
import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .bounds import BanditInstance, expected_reward, optimal_set
from .core import RegretLedger, SampleStore
from .errors import ConfigError, MBLabError
from .optimizer import BACKENDS, Solver, SolverConfig
from .policies import OfflineOptimum, Policy, PolicyConfig, offline_optimal
from .simulator import (SimParams, Simulator, estimate_expected_reward, sample_population)

CSV_HEADER = ["run_id", "episode", "policy", "reward_w", "opt_reward_w", "regret_w",
              "norm_regret", "cum_norm_regret", "backend", "solver_moves_or_ms", "solver_gap"]
SWEEP_AXES = {"beta": "policy", "epsilon": "policy", "tau": "policy",
              "n_scenarios": "policy", "sigma_u": "sim"}
SEED_ENV = "MBLAB_SEED"


@dataclass
class RunConfig:
    episodes: int = 365
    repetitions: int = 1
    master_seed: int = 0
    eval_samples: int = 200
    offline_scenarios: int = 20
    offline_backend: str = ""   # empty: same backend as the policy's solver
    out_dir: str = "out"
    name: str = "run"
    plot: bool = True

    def validate(self):
        if self.episodes < 1:
            raise ConfigError("run.episodes must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("run.repetitions must be >= 1")
        if self.eval_samples < 1:
            raise ConfigError("run.eval_samples must be >= 1")
        if self.offline_scenarios < 1:
            raise ConfigError("run.offline_scenarios must be >= 1")
        if self.offline_backend and self.offline_backend not in BACKENDS:
            raise ConfigError(f"run.offline_backend must be one of {BACKENDS}")


@dataclass
class ExperimentConfig:
    sim: SimParams = field(default_factory=SimParams)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    optimizer: SolverConfig = field(default_factory=SolverConfig)
    run: RunConfig = field(default_factory=RunConfig)

    SECTIONS = ("sim", "policy", "optimizer", "run")

    def validate(self) -> "ExperimentConfig":
        try:
            self.sim.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.policy.validate()
        if self.optimizer.backend not in BACKENDS:
            raise ConfigError(f"optimizer.backend must be one of {BACKENDS}")
        if self.optimizer.backend == "external" and not self.optimizer.external_cmd:
            raise ConfigError("optimizer.external_cmd is required for the external backend")
        self.run.validate()
        return self

    def replace(self, section: str, **changes) -> "ExperimentConfig":
        new = dataclasses.replace(self)
        setattr(new, section, dataclasses.replace(getattr(self, section), **changes))
        return new

    def to_text(self) -> str:
        lines = []
        for sec in self.SECTIONS:
            for f in dataclasses.fields(getattr(self, sec)):
                lines.append(f"{sec}.{f.name} = {getattr(getattr(self, sec), f.name)}")
        return "\n".join(lines) + "\n"


def _coerce(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_config(text: str, env: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """Parse ``section.key = value`` lines; ``#`` starts a comment.

    Unknown sections or keys are errors. ``MBLAB_SEED`` in ``env`` (default
    ``os.environ``) overrides ``run.master_seed``.
    """
    cfg = ExperimentConfig()
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"line {no}: key {key!r} must look like section.key")
        sec, name = key.split(".")
        if sec not in ExperimentConfig.SECTIONS:
            raise ConfigError(f"line {no}: unknown section {sec!r}")
        block = getattr(cfg, sec)
        names = {f.name for f in dataclasses.fields(block)}
        if name not in names:
            raise ConfigError(f"line {no}: unknown key {key!r}")
        setattr(block, name, _coerce(value, getattr(block, name), f"line {no}"))
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg.run.master_seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return cfg.validate()


def load_config(path, env=None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), env)


# ---------------------------------------------------------------- single run

@dataclass
class Repetition:
    run_id: str
    ledger: RegretLedger
    offline: OfflineOptimum
    rows: List[list]
    assignments: List[tuple]


@dataclass
class RunResult:
    config: ExperimentConfig
    repetitions: List[Repetition]
    csv_path: Optional[Path] = None
    plot_path: Optional[Path] = None
    error: Optional[str] = None

    @property
    def final_cum_norm_regret(self) -> np.ndarray:
        return np.array([r.ledger.records[-1].cum_norm_regret for r in self.repetitions])


def _g(x) -> str:
    return "" if x is None else f"{x:.6g}"


def _seeds(master_seed: int, rep: int):
    pop, offline, ev, policy, env = np.random.SeedSequence([int(master_seed), rep]).spawn(5)
    return pop, offline, ev, policy, env


def build_simulator(cfg: ExperimentConfig, rep: int = 0) -> Simulator:
    pop_ss = _seeds(cfg.run.master_seed, rep)[0]
    consumers = sample_population(cfg.sim.n, cfg.sim.H, cfg.sim, np.random.default_rng(pop_ss))
    return Simulator(consumers, cfg.sim.H, cfg.sim.recurrence_mode)


class RewardCache:
    """Expected-reward estimates keyed by assignment, all on the same evaluation episodes."""

    def __init__(self, sim: Simulator, samples: int, seed: np.random.SeedSequence):
        self.sim, self.samples, self.seed = sim, samples, seed
        self._cache: Dict[tuple, tuple] = {}

    def __call__(self, assignment) -> tuple:
        key = tuple(assignment)
        if key not in self._cache:
            # a fresh generator from the same seed gives every assignment the same noise
            rng = np.random.default_rng(self.seed)
            self._cache[key] = estimate_expected_reward(self.sim, key, self.samples, rng)
        return self._cache[key]


def run_repetition(cfg: ExperimentConfig, rep: int, solver: Optional[Solver] = None,
                   offline_solver: Optional[Solver] = None) -> Repetition:
    run = cfg.run
    _, off_ss, eval_ss, pol_ss, env_ss = _seeds(run.master_seed, rep)
    sim = build_simulator(cfg, rep)
    solver = solver or Solver(cfg.optimizer)
    if offline_solver is None:
        offline_solver = solver if not run.offline_backend else Solver(
            dataclasses.replace(cfg.optimizer, backend=run.offline_backend))
    scores = RewardCache(sim, run.eval_samples, eval_ss)
    off = offline_optimal(sim, run.offline_scenarios, offline_solver,
                          np.random.default_rng(off_ss), run.eval_samples,
                          np.random.default_rng(eval_ss))
    opt_w = off.value
    run_id = f"{run.name}-r{rep}"
    ledger = RegretLedger(run_id, run.eval_samples)
    policy = Policy(cfg.policy, solver, seed=pol_ss, initial=cfg.policy.initial_value_w)
    env_rng = np.random.default_rng(env_ss)
    store = SampleStore(sim.n, sim.k, sim.H)
    label = cfg.policy.label()
    rows, assignments = [], []
    for t in range(1, run.episodes + 1):
        sel = policy.select(store, t)
        store.record(sel.assignment, sim.episode(sel.assignment, env_rng))
        reward_w, _ = scores(sel.assignment)
        rec = ledger.add(reward_w, opt_w)
        rep_ = sel.report
        rows.append([run_id, t, label, _g(rec.reward), _g(rec.opt_reward), _g(rec.regret),
                     _g(rec.norm_regret), _g(rec.cum_norm_regret),
                     rep_.backend if rep_ else "none",
                     str(rep_.effort) if rep_ else "", _g(rep_.gap) if rep_ else ""])
        assignments.append(sel.assignment)
    return Repetition(run_id, ledger, off, rows, assignments)


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(rows)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> RunResult:
    """All repetitions of one configuration; writes ``<name>.csv``, ``.cfg`` and ``.svg``.

    A solver or model failure stops the run; the CSV then ends with a
    diagnostic row (backend ``error``, message in the last column) and the
    error text is returned in ``RunResult.error``.
    """
    cfg.validate()
    run = cfg.run
    solver = Solver(cfg.optimizer)
    offline_solver = solver if not run.offline_backend else Solver(
        dataclasses.replace(cfg.optimizer, backend=run.offline_backend))
    result = RunResult(cfg, [])
    rows = []
    for rep in range(run.repetitions):
        try:
            r = run_repetition(cfg, rep, solver, offline_solver)
        except (MBLabError, ValueError, OSError) as exc:
            msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
            rows.append([f"{run.name}-r{rep}", "", cfg.policy.label(), "", "", "", "", "",
                         "error", "", msg])
            result.error = msg
            break
        result.repetitions.append(r)
        rows.extend(r.rows)
    if write:
        out = Path(run.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.csv_path = out / f"{run.name}.csv"
        _write_csv(result.csv_path, rows)
        (out / f"{run.name}.cfg").write_text(cfg.to_text())
        if run.plot and result.repetitions:
            from .plotting import emit_plot
            result.plot_path = out / f"{run.name}.svg"
            emit_plot([result.csv_path], result.plot_path)
    return result


def read_ledgers(csv_path) -> Dict[str, RegretLedger]:
    """Rebuild per-run ledgers from a run CSV (diagnostic rows are skipped)."""
    ledgers: Dict[str, RegretLedger] = {}
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["backend"] == "error":
                continue
            led = ledgers.setdefault(row["run_id"], RegretLedger(row["run_id"]))
            led.add(float(row["reward_w"]), float(row["opt_reward_w"]))
    return ledgers


# ---------------------------------------------------------------- sweeps

def _axis_value(axis: str, raw):
    default = getattr(PolicyConfig() if SWEEP_AXES[axis] == "policy" else SimParams(), axis)
    return _coerce(str(raw), default, f"--values entry for {axis}")


def run_sweep(cfg: ExperimentConfig, axis: str, values: Sequence, write: bool = True):
    """One run per axis value with seed ``master_seed XOR index``.

    Returns the per-value results and the summary rows
    ``(axis, value, seed, mean, std)`` of final cumulative normalized regret,
    also written to ``<name>_<axis>_summary.csv``.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {sorted(SWEEP_AXES)}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    results, summary = [], []
    for idx, raw in enumerate(values):
        value = _axis_value(axis, raw)
        seed = int(cfg.run.master_seed) ^ idx
        sub = cfg.replace(SWEEP_AXES[axis], **{axis: value})
        sub = sub.replace("run", master_seed=seed, name=f"{cfg.run.name}_{axis}={value:g}")
        res = run_experiment(sub, write=write)
        results.append(res)
        finals = res.final_cum_norm_regret
        summary.append([axis, _g(value), seed,
                        _g(float(finals.mean())) if finals.size else "",
                        _g(float(finals.std(ddof=1))) if finals.size > 1 else ""])
    if write:
        out = Path(cfg.run.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{cfg.run.name}_{axis}_summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["axis", "value", "seed", "final_cum_norm_regret_mean",
                        "final_cum_norm_regret_std"])
            w.writerows(summary)
    return results, summary


# ---------------------------------------------------------------- explicit instances

def run_on_instance(instance: BanditInstance, config: PolicyConfig, episodes: int, seed=0,
                    solver: Optional[Solver] = None) -> RegretLedger:
    """Play a policy against an explicit instance, scoring with exact expected rewards."""
    if len(set(instance.action_counts)) != 1:
        raise ValueError("policies need the same action count for every actor")
    opt = optimal_set(instance)
    values = opt.values
    best = opt.best_value
    env_ss, pol_ss = np.random.SeedSequence(seed).spawn(2)
    env_rng = np.random.default_rng(env_ss)
    policy = Policy(config, solver or Solver(SolverConfig(backend="exact")), seed=pol_ss,
                    initial=config.initial_value_w)
    store = SampleStore(instance.n, instance.action_counts, instance.H)
    ledger = RegretLedger("instance")
    for t in range(1, episodes + 1):
        a = policy.select(store, t).assignment
        store.record(a, instance.sample(a, env_rng))
        ledger.add(values[a], best)
    return ledger


def regret_over_log_t_diagnostic(ledger: RegretLedger, rho_star: float):
    """Rows ``(t, R(t) / log t, rho_star)`` for t >= 2; purely descriptive."""
    cum = ledger.cumulative_regret
    return [(t, float(cum[t - 1]) / math.log(t), float(rho_star))
            for t in range(2, len(cum) + 1)]


def snapshot_table(cfg: ExperimentConfig, episode: int = 0) -> np.ndarray:
    """Scenario table for LP export.

    ``episode = 0`` gives the offline ground-truth table of repetition 0.
    Otherwise the policy is played for ``episode - 1`` rounds and the table it
    would solve at ``episode`` is returned.
    """
    cfg.validate()
    _, off_ss, _, pol_ss, env_ss = _seeds(cfg.run.master_seed, 0)
    sim = build_simulator(cfg, 0)
    if episode <= 0:
        return sim.ground_truth_scenario(np.random.default_rng(off_ss), cfg.run.offline_scenarios)
    policy = Policy(cfg.policy, Solver(cfg.optimizer), seed=pol_ss,
                    initial=cfg.policy.initial_value_w)
    env_rng = np.random.default_rng(env_ss)
    store = SampleStore(sim.n, sim.k, sim.H)
    for t in range(1, episode):
        a = policy.select(store, t).assignment
        store.record(a, sim.episode(a, env_rng))
    return policy.table(store)
