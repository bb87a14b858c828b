"""Max-min action assignment over a table of sample episodes.

A scenario table ``ell`` has shape (N, n, k, H): load reduction of actor i
under action j at slot h in sample episode t. The program maximises the
average over episodes of ``min_h sum_i ell[t, i, a_i, h]``.

Backends:

``exact``     lexicographic depth-first enumeration with bound pruning;
              globally optimal, refuses when its evaluation budget runs out.
``local``     greedy and random starts refined by best-improvement single-actor swaps.
``external``  writes an LP file, runs a user command, reads the solution back.
"""
from __future__ import annotations

import math
import os
import shlex
import subprocess
import tempfile
import time
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import as_assignment
from .errors import (DimensionError, InfeasibleSolutionError, LPParseError, SizeLimitError,
                     SolverError)

BACKENDS = ("exact", "local", "external")
TIE_TOL = 1e-9
GAP_EPS = 1e-9


def as_table(table) -> np.ndarray:
    arr = np.asarray(table, dtype=float)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or 0 in arr.shape:
        raise DimensionError(f"scenario table must have shape (N, n, k, H), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("scenario table entries must be finite")
    return arr


def _tie_tol(scale: float) -> float:
    return TIE_TOL * max(1.0, abs(scale))


def objective_value(table, assignment) -> float:
    """Average over scenarios of the max-min reward under ``assignment``."""
    ell = as_table(table)
    N, n, k, H = ell.shape
    a = as_assignment(assignment, [k] * n)
    sums = ell[:, np.arange(n), list(a), :].sum(axis=1)
    return float(sums.min(axis=1).mean())


def decoupled_upper_bound(table) -> float:
    """Relaxation letting every actor take its best action separately in each slot."""
    ell = as_table(table)
    return float(ell.max(axis=2).sum(axis=1).min(axis=1).mean())


@dataclass
class SolveReport:
    assignment: tuple
    value: float
    upper_bound: float
    backend: str
    wall_time: float = 0.0
    effort: int = 0  # node evaluations (exact), moves (local) or milliseconds (external)

    @property
    def gap(self) -> float:
        return max(0.0, (self.upper_bound - self.value) / max(abs(self.upper_bound), GAP_EPS))


@dataclass
class AssignmentModel:
    """The integer program for one scenario table: n*k binaries b_ij, N free M_t."""

    table: np.ndarray

    def __post_init__(self):
        self.table = as_table(self.table)

    @property
    def dims(self):
        return self.table.shape

    @property
    def n_binaries(self):
        N, n, k, H = self.dims
        return n * k

    @property
    def n_covering(self):
        N, n, k, H = self.dims
        return N * H


# ---------------------------------------------------------------- exact

def _unique_scenarios(ell):
    N = ell.shape[0]
    flat = ell.reshape(N, -1)
    uniq, first, counts = np.unique(flat, axis=0, return_index=True, return_counts=True)
    order = np.argsort(first)
    return ell[first[order]], counts[order] / N


def _lagrange_weights(ell, w, iters=150):
    """Slot weights lam[t] on the simplex approximately minimising the Lagrangian bound.

    For any such weights, ``sum_i max_j sum_t w_t lam_t . ell[t, i, j]`` bounds
    the program from above; projected subgradient steps tighten it.
    """
    N, n, k, H = ell.shape
    lam = np.full((N, H), 1.0 / H)
    scale = max(float(np.abs(ell).max()), 1.0)
    best_val, best_lam = math.inf, lam.copy()
    for it in range(iters):
        score = np.einsum("t,tijh,th->ij", w, ell, lam)
        jstar = score.argmax(axis=1)
        val = float(score.max(axis=1).sum())
        if val < best_val:
            best_val, best_lam = val, lam.copy()
        grad = w[:, None] * ell[:, np.arange(n), jstar, :].sum(axis=1)
        step = 1.0 / (scale * n * math.sqrt(it + 1))
        lam = _project_rows_to_simplex(lam - step * grad)
    return best_lam, best_val


def _project_rows_to_simplex(v):
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, v.shape[1] + 1)
    cond = u - css / idx > 0
    rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(v.shape[0]), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def _undominated_actions(ell):
    """Per actor, actions not weakly dominated by a lower-indexed action.

    A dominated action can always be swapped for its dominator without losing
    value, and the swap makes the assignment lexicographically smaller, so the
    lexicographically smallest optimum never uses it.
    """
    N, n, k, H = ell.shape
    keep = []
    for i in range(n):
        cols = ell[:, i].transpose(1, 0, 2).reshape(k, -1)
        ge = np.all(cols[:, None, :] >= cols[None, :, :], axis=2)  # ge[j2, j] : j2 dominates j
        alive = [j for j in range(k) if not np.any(ge[:j, j])]
        keep.append(np.array(alive))
    return keep


def solve_exact(table, enumeration_limit: int = 2_000_000, seed_value: Optional[float] = None,
                refine_iters: int = 30, refine_depth: int = 0) -> SolveReport:
    """Globally optimal assignment; ties go to the lexicographically smallest.

    Actors are branched in index order and actions in ascending order, so the
    first assignment reaching the optimal value (within 1e-9 relative) is the
    lexicographically smallest one. Subtrees are cut with two valid upper
    bounds: every remaining actor taking its best action slot by slot, and a
    Lagrangian bound whose slot weights are re-tightened at each node by
    Polyak subgradient steps. ``enumeration_limit`` caps the number of
    (partial) assignments evaluated; exceeding it raises ``SizeLimitError``.
    """
    t0 = time.perf_counter()
    ell_full = as_table(table)
    N, n, k, H = ell_full.shape
    ell, w = _unique_scenarios(ell_full)
    keep = _undominated_actions(ell)
    if seed_value is None:
        seed_value = solve_local_search(ell_full, restarts=3, rng=np.random.default_rng(0)).value
    lam0, _ = _lagrange_weights(ell, w)

    # rest_max[d]: slotwise best contributions of actors d..n-1
    colmax = np.stack([ell[:, i, keep[i], :].max(axis=1) for i in range(n)])      # (n, N', H)
    rest_max = np.concatenate([np.cumsum(colmax[::-1], axis=0)[::-1],
                               np.zeros((1,) + colmax.shape[1:])])
    # weighted per-actor columns, padded with copies of the first kept action
    kk = max(len(x) for x in keep)
    cols = np.stack([ell[:, i, np.r_[keep[i], np.repeat(keep[i][:1], kk - len(keep[i]))], :]
                     for i in range(n)])                                         # (n, N', kk, H)
    wcols = cols * w[None, :, None, None]
    child_cols = [ell[:, i, keep[i], :].transpose(1, 0, 2) for i in range(n)]     # (k_i, N', H)

    tol = _tie_tol(seed_value)
    state = {"best": None, "val": -math.inf, "evals": 0}
    chosen = np.zeros(n, dtype=int)

    def threshold():
        return seed_value - tol if state["best"] is None else state["val"] + tol

    def beats(v):
        return v >= threshold() if state["best"] is None else v > threshold()

    def lagrangian(lam, partial, d):
        # value and subgradient of the bound for a node whose actors < d are fixed
        base = float(np.sum(w[:, None] * lam * partial))
        if d == n:
            return base, w[:, None] * partial
        sc = np.einsum("itjh,th->ij", wcols[d:], lam)
        jstar = sc.argmax(axis=1)
        val = base + float(sc[np.arange(n - d), jstar].sum())
        grad = w[:, None] * (partial + cols[np.arange(d, n), :, jstar, :].sum(axis=0))
        return val, grad

    def refine(lam, partial, d):
        thr = threshold()
        val, grad = lagrangian(lam, partial, d)
        best_val, best_lam = val, lam
        for _ in range(refine_iters):
            if not beats(best_val):
                break
            g2 = float(np.sum(grad * grad))
            if g2 <= 0.0:
                break
            lam = _project_rows_to_simplex(lam - ((val - thr) / g2 + 1e-12) * grad)
            val, grad = lagrangian(lam, partial, d)
            if val < best_val:
                best_val, best_lam = val, lam
        return best_val, best_lam

    def descend(d, partial, lam):
        cand = partial[None] + child_cols[d]
        state["evals"] += cand.shape[0]
        if state["evals"] > enumeration_limit:
            raise SizeLimitError(
                f"exact search exceeded enumeration_limit={enumeration_limit} evaluations")
        if d == n - 1:
            vals = cand.min(axis=2) @ w
            for c in range(cand.shape[0]):
                if beats(vals[c]):
                    chosen[d] = keep[d][c]
                    state["best"] = tuple(int(x) for x in chosen)
                    state["val"] = float(vals[c])
            return
        wl = w[:, None] * lam
        rest = float(np.einsum("itjh,th->ij", wcols[d + 1:], lam).max(axis=1).sum())
        bound = np.minimum((cand + rest_max[d + 1][None]).min(axis=2) @ w,
                           np.einsum("cth,th->c", cand, wl) + rest)
        for c in range(cand.shape[0]):
            if not beats(bound[c]):
                continue
            lam_c = lam
            if d < refine_depth:
                val, lam_c = refine(lam, cand[c], d + 1)
                if not beats(val):
                    continue
            chosen[d] = keep[d][c]
            descend(d + 1, cand[c], lam_c)

    descend(0, np.zeros((ell.shape[0], H)), lam0)
    if state["best"] is None:
        raise SolverError("exact search found no assignment reaching the seed value")
    best = state["best"]
    value = objective_value(ell_full, best)
    # a completed search certifies optimality, so the reported bound is the value itself
    return SolveReport(best, value, value, "exact", time.perf_counter() - t0, state["evals"])


# ---------------------------------------------------------------- local search

def _lex_argmax(primary, secondary) -> int:
    """First index maximising primary (within tolerance), then secondary."""
    top = primary.max()
    ok = primary >= top - _tie_tol(top)
    masked = np.where(ok, secondary, -np.inf)
    return int(np.argmax(masked))


def solve_local_search(table, restarts: int = 5, move_budget: int = 10_000,
                       rng: Optional[np.random.Generator] = None,
                       time_budget_ms: Optional[float] = None) -> SolveReport:
    """Best-improvement single-actor swaps from ``restarts`` starting points.

    The first start is a greedy construction (actors in random order, each
    taking the action that maximises the partial objective with unassigned
    actors contributing zero); the others are uniform random assignments.
    Moves are ranked by the objective, then by the mean of the lowest slot
    sums, which lets the search leave max-min plateaus. The best restart
    wins (by value, then lexicographically smallest assignment).

    ``move_budget`` caps the improving moves per restart. With
    ``time_budget_ms`` set, restarts and moves also stop once the wall-clock
    budget is spent (at least one greedy construction always completes).
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    t0 = time.perf_counter()
    rng = np.random.default_rng() if rng is None else rng
    ell = as_table(table)
    N, n, k, H = ell.shape
    by_actor = ell.transpose(1, 2, 0, 3)  # (n, k, N, H)
    deadline = None if not time_budget_ms else t0 + time_budget_ms / 1000.0

    def out_of_time():
        return deadline is not None and time.perf_counter() > deadline

    m_low = max(2, H // 2)

    def scores(sums_):
        # primary: the objective; secondary: mean of the m_low lowest slot sums,
        # which lets the search climb off max-min plateaus
        srt = np.sort(sums_, axis=-1)
        return srt[..., 0].mean(axis=-1), srt[..., :m_low].mean(axis=-1).mean(axis=-1)

    best_a, best_v, moves = None, -math.inf, 0
    for r in range(restarts):
        if r > 0 and out_of_time():
            break
        if r == 0:
            sums = np.zeros((N, H))
            a = np.zeros(n, dtype=int)
            for i in rng.permutation(n):
                prim, sec = scores(sums[None] + by_actor[i])
                j = _lex_argmax(prim, sec)
                a[i] = j
                sums += by_actor[i, j]
        else:
            # later restarts climb from a uniform random assignment; greedy alone
            # can be trapped where every improvement needs two actors to move
            a = rng.integers(0, k, n)
            sums = by_actor[np.arange(n), a].sum(axis=0)
        cur, cur2 = (float(x) for x in scores(sums))
        for _ in range(move_budget):
            if out_of_time():
                break
            sel = by_actor[np.arange(n), a]                                     # (n, N, H)
            cand = (sums[None, None] - sel[:, None]) + by_actor                 # (n, k, N, H)
            prim, sec = scores(cand)
            flat = _lex_argmax(prim.ravel(), sec.ravel())
            v, v2 = float(prim.flat[flat]), float(sec.flat[flat])
            better = v > cur + _tie_tol(cur) or (
                v >= cur - _tie_tol(cur) and v2 > cur2 + _tie_tol(cur2))
            if not better:
                break
            i, j = divmod(flat, k)
            sums += by_actor[i, j] - by_actor[i, a[i]]
            a[i] = j
            cur, cur2 = v, v2
            moves += 1
        cand_a = tuple(int(x) for x in a)
        v = objective_value(ell, cand_a)
        if (best_a is None or v > best_v + _tie_tol(best_v)
                or (abs(v - best_v) <= _tie_tol(best_v) and cand_a < best_a)):
            best_a, best_v = cand_a, v
    return SolveReport(best_a, best_v, decoupled_upper_bound(ell), "local",
                       time.perf_counter() - t0, moves)


# ---------------------------------------------------------------- LP text format

def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _open_sink(sink):
    if hasattr(sink, "write"):
        return sink, False
    return open(sink, "w"), True


def export_lp(model, sink) -> None:
    """Write the assignment program in LP text format.

    Variables are named with 1-based indices: ``b_i_j`` (actor i takes action
    j) and ``M_t`` (reward of sample episode t). ``M_t`` is declared free
    since load reductions may be negative.
    """
    if not isinstance(model, AssignmentModel):
        model = AssignmentModel(model)
    ell = model.table
    N, n, k, H = ell.shape
    out, close = _open_sink(sink)
    try:
        out.write(f"\\ max-min assignment N={N} n={n} k={k} H={H}\n")
        out.write("Maximize\n")
        out.write(" obj: " + " + ".join(f"M_{t + 1}" for t in range(N)) + "\n")
        out.write("Subject To\n")
        for t in range(N):
            for h in range(H):
                terms = []
                for i in range(n):
                    for j in range(k):
                        c = ell[t, i, j, h]
                        if c == 0:
                            continue
                        sign = "-" if c < 0 else "+"
                        terms.append(f"{sign} {_fmt(abs(c))} b_{i + 1}_{j + 1}")
                body = " ".join(terms)
                if body.startswith("+ "):
                    body = body[2:]
                out.write(f" c_{t + 1}_{h + 1}: {body} - M_{t + 1} >= 0\n".replace(":  -", ": -"))
        for i in range(n):
            out.write(f" one_{i + 1}: " + " + ".join(f"b_{i + 1}_{j + 1}" for j in range(k))
                      + " = 1\n")
        out.write("Bounds\n")
        for t in range(N):
            out.write(f" M_{t + 1} free\n")
        out.write("Binaries\n")
        for i in range(n):
            out.write(" " + " ".join(f"b_{i + 1}_{j + 1}" for j in range(k)) + "\n")
        out.write("End\n")
    finally:
        if close:
            out.close()


def import_solution(source, dims) -> tuple:
    """Read ``name value`` lines and return the 0-based assignment.

    ``dims`` is (N, n, k, H) or (n, k). Binary values are rounded at 0.5.
    Blank lines and lines starting with ``#`` are skipped; ``M_t`` and
    ``obj`` entries are accepted and ignored.
    """
    if len(dims) == 4:
        N, n, k, _ = dims
    else:
        n, k = dims
        N = None
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text()
    b = np.zeros((n, k), dtype=int)
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise LPParseError(f"expected 'name value', got {line!r}", no)
        name, val = parts
        try:
            x = float(val)
        except ValueError:
            raise LPParseError(f"value {val!r} is not a number", no) from None
        if name == "obj":
            continue
        pieces = name.split("_")
        try:
            if pieces[0] == "M" and len(pieces) == 2:
                t = int(pieces[1])
                if t < 1 or (N is not None and t > N):
                    raise ValueError
                continue
            if pieces[0] != "b" or len(pieces) != 3:
                raise ValueError
            i, j = int(pieces[1]), int(pieces[2])
        except ValueError:
            raise LPParseError(f"unknown variable {name!r}", no) from None
        if not (1 <= i <= n and 1 <= j <= k):
            raise LPParseError(f"unknown variable {name!r}", no)
        b[i - 1, j - 1] = 1 if x >= 0.5 else 0
    for i in range(n):
        if b[i].sum() != 1:
            raise InfeasibleSolutionError(
                f"actor {i + 1} has {int(b[i].sum())} selected actions, expected exactly 1")
    return tuple(int(j) for j in b.argmax(axis=1))


def solve_external(table, command: str, workdir=None) -> SolveReport:
    """Run an external solver command on an exported LP file.

    ``command`` is a shell-style template with ``{lp}`` and ``{sol}``
    placeholders; the solver must write ``name value`` lines to ``{sol}``.
    """
    if not command:
        raise SolverError("external backend needs optimizer.external_cmd")
    t0 = time.perf_counter()
    ell = as_table(table)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        lp = os.path.join(tmp, "model.lp")
        sol = os.path.join(tmp, "model.sol")
        export_lp(ell, lp)
        argv = [part.format(lp=lp, sol=sol) for part in shlex.split(command)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            msg = (proc.stderr or proc.stdout).strip().splitlines()
            raise SolverError(f"external solver exited with {proc.returncode}: "
                              f"{msg[-1] if msg else ''}")
        a = import_solution(sol, ell.shape)
    elapsed = time.perf_counter() - t0
    return SolveReport(a, objective_value(ell, a), decoupled_upper_bound(ell), "external",
                       elapsed, int(round(elapsed * 1000)))


# ---------------------------------------------------------------- dispatch

@dataclass
class SolverConfig:
    backend: str = "local"
    enumeration_limit: int = 2_000_000
    restarts: int = 5
    move_budget: int = 10_000
    time_budget_ms: float = 0.0
    external_cmd: str = ""
    cache_size: int = 64


class Solver:
    """Backend dispatch with a small memo for the deterministic backends."""

    def __init__(self, config: Optional[SolverConfig] = None):
        self.config = config or SolverConfig()
        if self.config.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.config.backend!r}; choose from {BACKENDS}")
        self._cache = OrderedDict()

    def solve(self, table, rng: Optional[np.random.Generator] = None) -> SolveReport:
        cfg = self.config
        ell = as_table(table)
        if cfg.backend == "local":
            return solve_local_search(ell, cfg.restarts, cfg.move_budget, rng,
                                      cfg.time_budget_ms or None)
        key = (ell.shape, ell.tobytes())
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        if cfg.backend == "exact":
            report = solve_exact(ell, cfg.enumeration_limit)
        else:
            report = solve_external(ell, cfg.external_cmd)
        self._cache[key] = report
        if len(self._cache) > cfg.cache_size:
            self._cache.popitem(last=False)
        return report
