"""Domain types shared by every module: load curves, assignments, sample
storage, the max-min reward and regret bookkeeping.

Actor and action indices are 0-based in the Python API. Slots inside a
load curve are 0-based array positions; interval actions and text file
formats use the 1-based slot numbering of the target interval ``1..H``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError


def as_curve(values, H: Optional[int] = None) -> np.ndarray:
    """Validate and return a load curve as a 1-D float array (watts)."""
    curve = np.asarray(values, dtype=float)
    if curve.ndim != 1 or curve.size == 0:
        raise DimensionError(f"load curve must be a non-empty vector, got shape {curve.shape}")
    if H is not None and curve.size != H:
        raise DimensionError(f"load curve has length {curve.size}, expected {H}")
    if not np.all(np.isfinite(curve)):
        raise ValueError("load curve entries must be finite")
    return curve


def as_assignment(actions, action_counts: Optional[Sequence[int]] = None) -> tuple:
    """Validate an action assignment and return it as a tuple of ints."""
    assignment = tuple(int(a) for a in actions)
    if action_counts is not None:
        if len(assignment) != len(action_counts):
            raise DimensionError(
                f"assignment has {len(assignment)} entries for {len(action_counts)} actors")
        for i, (a, k) in enumerate(zip(assignment, action_counts)):
            if not 0 <= a < k:
                raise IndexError(f"action {a} out of range for actor {i} with {k} actions")
    return assignment


def reward(curves) -> float:
    """Max-min objective: the smallest per-slot sum of the actors' curves."""
    if isinstance(curves, np.ndarray):
        arr = np.asarray(curves, dtype=float)
        if arr.ndim != 2:
            raise DimensionError(f"expected an (n, H) array, got shape {arr.shape}")
    else:
        rows = [np.asarray(c, dtype=float) for c in curves]
        if not rows:
            raise DimensionError("reward needs at least one curve")
        lengths = {r.shape for r in rows}
        if len(lengths) != 1 or rows[0].ndim != 1:
            raise DimensionError(f"curves have mismatched lengths {sorted(r.size for r in rows)}")
        arr = np.vstack(rows)
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionError("reward needs n >= 1 curves of length H >= 1")
    return float(arr.sum(axis=0).min())


def regret(expected_opt: float, expected_a: float) -> float:
    # negative values are legitimate when the optimum is itself an estimate
    return float(expected_opt) - float(expected_a)


class SampleStore:
    """Observed load curves per (actor, action) plus pull counters.

    Curves are kept in insertion order; duplicates are kept (multiset).
    A running mean (updated as m += (x - m) / c) makes ``mean_table`` cheap
    and stays bit-exact when the same curve is observed repeatedly.
    """

    def __init__(self, n: int, k, H: int):
        self.n = int(n)
        self.action_counts = [int(k)] * self.n if np.isscalar(k) else [int(x) for x in k]
        if len(self.action_counts) != self.n:
            raise DimensionError("need one action count per actor")
        self.H = int(H)
        self.k_max = max(self.action_counts)
        self.samples = [[[] for _ in range(kk)] for kk in self.action_counts]
        self.counts = np.zeros((self.n, self.k_max), dtype=np.int64)
        self._means = np.zeros((self.n, self.k_max, self.H))
        self.episode = 0

    def record(self, assignment, curves) -> "SampleStore":
        assignment = as_assignment(assignment, self.action_counts)
        curves = np.asarray(curves, dtype=float)
        if curves.shape != (self.n, self.H):
            raise DimensionError(f"expected curves of shape {(self.n, self.H)}, got {curves.shape}")
        for i, j in enumerate(assignment):
            curve = curves[i].copy()
            self.samples[i][j].append(curve)
            self.counts[i, j] += 1
            self._means[i, j] += (curve - self._means[i, j]) / self.counts[i, j]
        self.episode += 1
        return self

    def count(self, i: int, j: int) -> int:
        return int(self.counts[i, j])

    def weighted_mean_curve(self, i: int, j: int, beta: float, initial) -> np.ndarray:
        """Blend of the initial value (weight ``beta``) with the observed samples (weight 1 each)."""
        initial = as_curve(initial, self.H)
        c = self.counts[i, j]
        if c == 0:
            return initial.copy()
        # equals (beta * I + sum) / (beta + c); exactly the sample mean when beta = 0
        mean = self._means[i, j]
        return mean + beta * (initial - mean) / (beta + c)

    def mean_table(self, beta: float, initial) -> np.ndarray:
        """``weighted_mean_curve`` for every (i, j) at once, shape (n, k, H).

        ``initial`` may be a scalar, an H-vector or a full (n, k, H) array.
        """
        init = np.broadcast_to(np.asarray(initial, dtype=float), (self.n, self.k_max, self.H))
        c = self.counts[:, :, None].astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            blended = self._means + beta * (init - self._means) / (beta + c)
        return np.where(c > 0, blended, init)


@dataclass
class EpisodeRecord:
    episode: int
    reward: float
    opt_reward: float
    regret: float
    norm_regret: Optional[float]
    cum_regret: float
    cum_norm_regret: float


@dataclass
class RegretLedger:
    """Per-episode regret bookkeeping with running cumulative sums.

    ``reward`` and ``opt_reward`` are Monte Carlo estimates; ``eval_samples``
    records how many simulated episodes back each of them.
    """

    run_id: str = ""
    eval_samples: int = 0
    records: list = field(default_factory=list)

    def add(self, reward_w: float, opt_reward_w: float) -> EpisodeRecord:
        rho = regret(opt_reward_w, reward_w)
        norm = rho / opt_reward_w if opt_reward_w > 0 else None
        prev = self.records[-1] if self.records else None
        cum = (prev.cum_regret if prev else 0.0) + rho
        cum_norm = (prev.cum_norm_regret if prev else 0.0) + (norm if norm is not None else 0.0)
        rec = EpisodeRecord(len(self.records) + 1, float(reward_w), float(opt_reward_w),
                            rho, norm, cum, cum_norm)
        self.records.append(rec)
        return rec

    def __len__(self):
        return len(self.records)

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.array([r.cum_regret for r in self.records])

    @property
    def cumulative_norm_regret(self) -> np.ndarray:
        return np.array([r.cum_norm_regret for r in self.records])

    def recompute_cumulative(self) -> np.ndarray:
        """Cumulative regret summed from scratch (for consistency checks)."""
        return np.array([math.fsum(r.regret for r in self.records[:t + 1])
                         for t in range(len(self.records))])
