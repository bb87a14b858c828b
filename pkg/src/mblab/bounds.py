"""Exact analysis of small explicit multi-bandit instances.

Every (actor, action) pair carries an explicit outcome distribution over load
curves: categorical (finite support) or diagonal Gaussian. From these we get
exact expected rewards, the optimal assignments, KL divergences and the
asymptotic regret constant: the cheapest mixed assignment that pulls every
suboptimal action at least 1/KL times (per log t).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .errors import (DimensionError, InfeasibleLPError, SizeLimitError, UnboundedLPError,
                     ZeroDivergenceError)

MAX_ATOMS = 1_000_000
MAX_ASSIGNMENTS = 1_000_000
OPT_TOL = 1e-9


@dataclass(frozen=True)
class Categorical:
    atoms: np.ndarray   # (m, H)
    probs: np.ndarray   # (m,)

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        probs = np.asarray(self.probs, dtype=float).ravel()
        if atoms.shape[0] != probs.size:
            raise DimensionError("one probability per atom required")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities must be >= 0 and sum to 1, got sum {probs.sum()!r}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @property
    def H(self):
        return self.atoms.shape[1]

    @property
    def mean(self):
        return self.probs @ self.atoms


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.var, dtype=float))
        if mean.shape != var.shape or mean.ndim != 1:
            raise DimensionError("mean and variance must be vectors of equal length")
        if np.any(var < 0):
            raise ValueError("variances must be >= 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def H(self):
        return self.mean.size


@dataclass
class BanditInstance:
    dists: List[List[object]]

    def __post_init__(self):
        if not self.dists or any(not row for row in self.dists):
            raise DimensionError("need at least one actor with at least one action")
        hs = {d.H for row in self.dists for d in row}
        if len(hs) != 1:
            raise DimensionError(f"all outcome distributions must share H, got {sorted(hs)}")

    @property
    def n(self):
        return len(self.dists)

    @property
    def action_counts(self):
        return [len(row) for row in self.dists]

    @property
    def H(self):
        return self.dists[0][0].H

    def assignments(self):
        total = math.prod(self.action_counts)
        if total > MAX_ASSIGNMENTS:
            raise SizeLimitError(f"{total} assignments exceed the enumeration limit")
        return list(itertools.product(*(range(k) for k in self.action_counts)))

    def sample(self, assignment, rng: np.random.Generator) -> np.ndarray:
        """One episode of outcome curves, shape (n, H)."""
        out = np.empty((self.n, self.H))
        for i, j in enumerate(assignment):
            d = self.dists[i][j]
            if isinstance(d, Categorical):
                out[i] = d.atoms[rng.choice(d.probs.size, p=d.probs)]
            else:
                out[i] = d.mean + np.sqrt(d.var) * rng.standard_normal(d.H)
        return out


# ---------------------------------------------------------------- expected rewards

def expected_reward_exact(instance: BanditInstance, assignment, max_atoms: int = MAX_ATOMS) -> float:
    """E[r(o) | a] by enumerating the joint outcome support.

    Exact for categorical outcomes and, for any distribution type, when H = 1
    (the reward is then the plain sum). Gaussian outcomes with H > 1 need
    :func:`expected_reward_mc`.
    """
    dists = [instance.dists[i][j] for i, j in enumerate(assignment)]
    if instance.H == 1:
        return float(sum(float(d.mean[0]) if isinstance(d, Gaussian) else float(d.mean[0])
                         for d in dists))
    if not all(isinstance(d, Categorical) for d in dists):
        raise ValueError("exact evaluation needs categorical outcomes when H > 1")
    support = math.prod(d.probs.size for d in dists)
    if support > max_atoms:
        raise SizeLimitError(f"joint support of {support} atoms exceeds {max_atoms}")
    sums = np.zeros((1, instance.H))
    probs = np.ones(1)
    for d in dists:
        sums = (sums[:, None, :] + d.atoms[None, :, :]).reshape(-1, instance.H)
        probs = (probs[:, None] * d.probs[None, :]).ravel()
    return float(probs @ sums.min(axis=1))


def expected_reward_mc(instance: BanditInstance, assignment, samples: int,
                       rng: np.random.Generator):
    """Monte Carlo mean and standard error of the reward."""
    rewards = np.array([instance.sample(assignment, rng).sum(axis=0).min()
                        for _ in range(samples)])
    return float(rewards.mean()), float(rewards.std(ddof=1) / math.sqrt(samples))


def expected_reward(instance: BanditInstance, assignment, samples: int = 100_000, seed: int = 0):
    """Exact value with zero standard error where possible, else a seeded estimate."""
    try:
        return expected_reward_exact(instance, assignment), 0.0
    except ValueError:
        return expected_reward_mc(instance, assignment, samples, np.random.default_rng(seed))


class OptimalSet(NamedTuple):
    optimal: List[tuple]
    suboptimal: List[set]           # per actor
    values: Dict[tuple, float]

    @property
    def best_value(self):
        return self.values[self.optimal[0]]

    def optimal_actions(self, i: int) -> List[int]:
        return sorted({a[i] for a in self.optimal})


def optimal_set(instance: BanditInstance) -> OptimalSet:
    """All maximisers of the expected reward (within 1e-9) and the suboptimal actions."""
    values = {a: expected_reward(instance, a)[0] for a in instance.assignments()}
    best = max(values.values())
    tol = OPT_TOL * max(1.0, abs(best))
    optimal = sorted(a for a, v in values.items() if v >= best - tol)
    used = [{a[i] for a in optimal} for i in range(instance.n)]
    subopt = [set(range(k)) - used[i] for i, k in enumerate(instance.action_counts)]
    return OptimalSet(optimal, subopt, values)


# ---------------------------------------------------------------- divergences

def kl_gaussian(m1, v1, m2, v2) -> float:
    """KL(N(m1, v1) || N(m2, v2)), summed over independent slots."""
    m1, v1, m2, v2 = (np.atleast_1d(np.asarray(x, dtype=float)) for x in (m1, v1, m2, v2))
    if np.any(v1 <= 0) or np.any(v2 <= 0):
        raise ValueError("Gaussian KL needs strictly positive variances")
    per_slot = 0.5 * np.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / (2.0 * v2) - 0.5
    return float(per_slot.sum())


def kl_categorical(p, q) -> float:
    """sum p log(p / q) with 0 log 0 = 0; ``math.inf`` when q misses mass of p."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionError("p and q must have the same length")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _aligned(d1: Categorical, d2: Categorical):
    index = {}
    for atom in itertools.chain(d1.atoms, d2.atoms):
        index.setdefault(tuple(atom), len(index))
    p = np.zeros(len(index))
    q = np.zeros(len(index))
    for atom, pr in zip(d1.atoms, d1.probs):
        p[index[tuple(atom)]] += pr
    for atom, pr in zip(d2.atoms, d2.probs):
        q[index[tuple(atom)]] += pr
    return p, q


def kl_outcome(d1, d2) -> float:
    """KL between two outcome distributions of the same family."""
    if isinstance(d1, Categorical) and isinstance(d2, Categorical):
        return kl_categorical(*_aligned(d1, d2))
    if isinstance(d1, Gaussian) and isinstance(d2, Gaussian):
        return kl_gaussian(d1.mean, d1.var, d2.mean, d2.var)
    raise ValueError("KL between categorical and Gaussian outcomes is not supported")


def min_kl_to_optimal(instance: BanditInstance, opt: OptimalSet, i: int, j: int) -> float:
    """KL of action j to the closest action actor i takes in some optimal assignment."""
    return min(kl_outcome(instance.dists[i][j], instance.dists[i][o])
               for o in opt.optimal_actions(i))


# ---------------------------------------------------------------- dense simplex

class LPResult(NamedTuple):
    x: np.ndarray
    objective: float
    iterations: int


def solve_lp(costs, rows, senses, rhs, bounds=None, tol: float = 1e-9,
             max_iter: int = 100_000) -> LPResult:
    """Minimise ``costs @ x`` subject to ``rows @ x (senses) rhs`` and variable bounds.

    Two-phase dense tableau simplex with Bland's rule (smallest-index
    entering variable, smallest-index leaving variable on ratio ties), which
    cannot cycle. ``bounds`` is a list of ``(lo, hi)`` with finite ``lo``
    (default ``(0, None)``). Raises ``InfeasibleLPError`` or ``UnboundedLPError``.
    """
    c = np.asarray(costs, dtype=float).ravel()
    nv = c.size
    A = np.asarray(rows, dtype=float).reshape(-1, nv)
    b = np.asarray(rhs, dtype=float).ravel().copy()
    senses = list(senses)
    if len(senses) != A.shape[0] or b.size != A.shape[0]:
        raise DimensionError("need one sense and one right-hand side per row")
    if bounds is None:
        bounds = [(0.0, None)] * nv
    lo = np.array([0.0 if bd[0] is None else float(bd[0]) for bd in bounds])
    if not np.all(np.isfinite(lo)):
        raise ValueError("lower bounds must be finite")
    b -= A @ lo
    const = float(c @ lo)
    extra = [(j, float(bd[1]) - lo[j]) for j, bd in enumerate(bounds)
             if bd[1] is not None and math.isfinite(bd[1])]
    if extra:
        U = np.zeros((len(extra), nv))
        for r, (j, _) in enumerate(extra):
            U[r, j] = 1.0
        A = np.vstack([A, U])
        b = np.concatenate([b, [u for _, u in extra]])
        senses = senses + ["<="] * len(extra)

    m = A.shape[0]
    for r in range(m):
        if senses[r] not in ("<=", ">=", "="):
            raise ValueError(f"unknown constraint sense {senses[r]!r}")
        if b[r] < 0:
            A[r] = -A[r]
            b[r] = -b[r]
            senses[r] = {"<=": ">=", ">=": "<=", "=": "="}[senses[r]]

    n_slack = sum(1 for s in senses if s != "=")
    n_art = sum(1 for s in senses if s != "<=")
    ncol = nv + n_slack + n_art
    T = np.zeros((m, ncol))
    T[:, :nv] = A
    basis = [0] * m
    art_cols = []
    s_col, a_col = nv, nv + n_slack
    for r, sense in enumerate(senses):
        if sense == "<=":
            T[r, s_col] = 1.0
            basis[r] = s_col
            s_col += 1
        else:
            if sense == ">=":
                T[r, s_col] = -1.0
                s_col += 1
            T[r, a_col] = 1.0
            basis[r] = a_col
            art_cols.append(a_col)
            a_col += 1
    is_art = np.zeros(ncol, dtype=bool)
    is_art[art_cols] = True
    iters = 0

    def run(cost, allowed):
        nonlocal T, b, iters
        while True:
            red = cost - cost[basis] @ T
            enter = next((j for j in range(ncol) if allowed[j] and red[j] < -tol), None)
            if enter is None:
                return
            col = T[:, enter]
            best, leave = None, None
            for r in range(len(basis)):
                if col[r] > tol:
                    ratio = b[r] / col[r]
                    if (best is None or ratio < best - tol
                            or (abs(ratio - best) <= tol and basis[r] < basis[leave])):
                        best, leave = ratio, r
            if leave is None:
                raise UnboundedLPError("objective is unbounded below")
            pivot(leave, enter)
            iters += 1
            if iters > max_iter:
                raise RuntimeError("simplex iteration limit reached")

    def pivot(r, j):
        piv = T[r, j]
        T[r] /= piv
        b[r] /= piv
        for q in range(T.shape[0]):
            if q != r and T[q, j] != 0.0:
                f = T[q, j]
                T[q] -= f * T[r]
                b[q] -= f * b[r]
        basis[r] = j

    if art_cols:
        phase1 = is_art.astype(float)
        run(phase1, np.ones(ncol, dtype=bool))
        infeas = float(sum(b[r] for r in range(len(basis)) if is_art[basis[r]]))
        if infeas > tol * max(1.0, float(np.abs(b).max(initial=0.0))):
            raise InfeasibleLPError(f"no feasible point (phase-one residual {infeas:.3g})")
        r = 0
        while r < len(basis):
            if is_art[basis[r]]:
                j = next((j for j in range(ncol) if not is_art[j] and abs(T[r, j]) > tol), None)
                if j is None:
                    T = np.delete(T, r, axis=0)
                    b = np.delete(b, r)
                    del basis[r]
                    continue
                pivot(r, j)
            r += 1

    cost = np.zeros(ncol)
    cost[:nv] = c
    run(cost, ~is_art)
    y = np.zeros(ncol)
    for r, j in enumerate(basis):
        y[j] = b[r]
    x = lo + y[:nv]
    return LPResult(x, float(c @ y[:nv]) + const, iters)


# ---------------------------------------------------------------- lower bound

@dataclass
class CoverageLP:
    """min sum_a w(a) rho(a)  s.t.  sum_{a: a_i = j} w(a) >= 1 / KL(j, opt_i) per suboptimal (i, j)."""

    assignments: List[tuple]
    regrets: np.ndarray
    keys: List[tuple]          # (actor, suboptimal action) per row
    rows: np.ndarray
    rhs: np.ndarray
    opt: OptimalSet

    def solve(self, drop: Sequence[int] = ()) -> LPResult:
        keep = [r for r in range(len(self.keys)) if r not in set(drop)]
        if not keep:
            return LPResult(np.zeros(len(self.assignments)), 0.0, 0)
        return solve_lp(self.regrets, self.rows[keep], [">="] * len(keep), self.rhs[keep])


def coverage_lp(instance: BanditInstance) -> CoverageLP:
    opt = optimal_set(instance)
    assignments = sorted(opt.values)
    best = opt.best_value
    # optimal assignments may sit a hair above best within tolerance; regret is >= 0
    regrets = np.array([max(0.0, best - opt.values[a]) for a in assignments])
    keys, rhs = [], []
    for i in range(instance.n):
        for j in sorted(opt.suboptimal[i]):
            kl = min_kl_to_optimal(instance, opt, i, j)
            if kl == 0.0:
                raise ZeroDivergenceError(
                    f"actor {i + 1} action {j + 1} is suboptimal but has zero KL to the optimum")
            keys.append((i, j))
            rhs.append(0.0 if math.isinf(kl) else 1.0 / kl)
    rows = np.array([[1.0 if a[i] == j else 0.0 for a in assignments] for i, j in keys])
    return CoverageLP(assignments, regrets, keys, rows.reshape(len(keys), len(assignments)),
                      np.array(rhs), opt)


class LowerBound(NamedTuple):
    weights: Dict[tuple, float]    # mixed assignment, nonzero entries only
    rho: float
    lp: CoverageLP


def lower_bound_weights(instance: BanditInstance) -> LowerBound:
    """Cheapest feasible mixed assignment and its weighted regret rho(w*)."""
    lp = coverage_lp(instance)
    if not lp.keys:
        return LowerBound({}, 0.0, lp)
    res = lp.solve()
    weights = {a: float(x) for a, x in zip(lp.assignments, res.x) if x > 0.0}
    return LowerBound(weights, float(res.objective), lp)


def lai_robbins_bound(instance: BanditInstance) -> float:
    """Single-bandit constant: sum over suboptimal a of regret(a) / KL(a, optimum)."""
    if instance.n != 1:
        raise ValueError("the single-bandit bound needs n = 1")
    opt = optimal_set(instance)
    total = 0.0
    for j in sorted(opt.suboptimal[0]):
        kl = min_kl_to_optimal(instance, opt, 0, j)
        if kl == 0.0:
            raise ZeroDivergenceError(f"action {j + 1} is suboptimal but has zero KL to the optimum")
        total += (opt.best_value - opt.values[(j,)]) / kl
    return total


def single_actor_constants(instance: BanditInstance) -> List[float]:
    """Per-actor constants when exploring one actor at a time.

    Actor i's suboptimal actions are tried while every other actor stays at
    the lexicographically smallest optimal assignment. Their sum is the
    regret of a feasible mixed assignment, hence an upper bound on rho(w*).
    """
    opt = optimal_set(instance)
    ref = opt.optimal[0]
    out = []
    for i in range(instance.n):
        total = 0.0
        for j in sorted(opt.suboptimal[i]):
            kl = min_kl_to_optimal(instance, opt, i, j)
            if kl == 0.0:
                raise ZeroDivergenceError(f"actor {i + 1} action {j + 1} has zero KL")
            a = ref[:i] + (j,) + ref[i + 1:]
            total += (opt.best_value - opt.values[a]) / kl
        out.append(total)
    return out


# ---------------------------------------------------------------- text format

def _num(tok: str) -> float:
    return float(Fraction(tok))


def read_instance(source) -> BanditInstance:
    """Parse the line-oriented instance format.

    One distribution per line, 1-based indices::

        <actor> <action> cat <p>:<v1>,...,<vH> [<p>:<v1>,...,<vH> ...]
        <actor> <action> gauss <m1>,...,<mH> <var1>,...,<varH>

    Probabilities may be written as fractions (``9/10``). ``#`` starts a comment.
    """
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    cells = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            i, j, kind = int(parts[0]), int(parts[1]), parts[2]
            if kind == "cat":
                probs, atoms = [], []
                for tok in parts[3:]:
                    p, vals = tok.split(":")
                    probs.append(_num(p))
                    atoms.append([_num(v) for v in vals.split(",")])
                dist = Categorical(np.array(atoms), np.array(probs))
            elif kind == "gauss":
                if len(parts) != 5:
                    raise ValueError("gauss needs a mean vector and a variance vector")
                dist = Gaussian(np.array([_num(v) for v in parts[3].split(",")]),
                                np.array([_num(v) for v in parts[4].split(",")]))
            else:
                raise ValueError(f"unknown distribution kind {kind!r}")
        except (ValueError, IndexError, ZeroDivisionError) as exc:
            raise ValueError(f"line {no}: {exc}") from None
        if (i, j) in cells:
            raise ValueError(f"line {no}: duplicate entry for actor {i} action {j}")
        cells[(i, j)] = dist
    if not cells:
        raise ValueError("instance file is empty")
    n = max(i for i, _ in cells)
    dists = []
    for i in range(1, n + 1):
        k = max((j for a, j in cells if a == i), default=0)
        row = []
        for j in range(1, k + 1):
            if (i, j) not in cells:
                raise ValueError(f"missing distribution for actor {i} action {j}")
            row.append(cells[(i, j)])
        dists.append(row)
    return BanditInstance(dists)


def write_instance(instance: BanditInstance, path) -> None:
    lines = []
    for i, row in enumerate(instance.dists, 1):
        for j, d in enumerate(row, 1):
            if isinstance(d, Categorical):
                body = " ".join(f"{p!r}:" + ",".join(repr(float(v)) for v in atom)
                                for p, atom in zip(d.probs.tolist(), d.atoms))
                lines.append(f"{i} {j} cat {body}")
            else:
                lines.append(f"{i} {j} gauss " + ",".join(repr(float(v)) for v in d.mean)
                             + " " + ",".join(repr(float(v)) for v in d.var))
    Path(path).write_text("\n".join(lines) + "\n")
