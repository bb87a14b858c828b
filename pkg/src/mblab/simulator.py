"""Energy-consumer population and its stochastic load-reduction responses.

Each consumer mixes three load types:

* unconditional reductions, an AR(1) Gaussian process independent of the action;
* curtailable load, suspended on every slot of the request interval;
* one shiftable block, moved to minimise overlap with the request interval
  (or curtailed outright by cooperative consumers when overlap is unavoidable).

Actions are request intervals drawn from a fixed subdivision-closed family.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .core import as_assignment
from .errors import ConfigError, DimensionError

RECURRENCE_MODES = ("exact_ar", "paper_literal")


@dataclass(frozen=True, order=True)
class IntervalAction:
    """Closed request interval of 1-based slots ``start..end``."""

    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"empty interval [{self.start}, {self.end}]")

    def mask(self, H: int) -> np.ndarray:
        if self.start < 1 or self.end > H:
            raise ValueError(f"[{self.start}, {self.end}] is not inside [1, {H}]")
        m = np.zeros(H, dtype=bool)
        m[self.start - 1:self.end] = True
        return m

    def __str__(self):
        return f"[{self.start},{self.end}]"


@dataclass(frozen=True)
class ConsumerModel:
    sigma_u: float
    z: float
    curtailable: float
    shift_magnitude: float
    window_start: int  # 1-based, may lie before slot 1
    window_len: int
    cooperative: bool

    @property
    def window_end(self) -> int:
        return self.window_start + self.window_len - 1


@dataclass
class SimParams:
    n: int = 20
    H: int = 8
    sigma_u: float = 500.0
    z: float = 0.5
    recurrence_mode: str = "exact_ar"
    curtail_min_w: float = 0.0
    curtail_max_w: float = 200.0
    shift_min_w: float = 500.0
    shift_max_w: float = 1000.0
    shift_len_min_frac: float = 0.25
    shift_len_max_frac: float = 0.5
    coop_prob: float = 0.5

    def validate(self):
        if self.n < 1 or self.H < 1:
            raise ConfigError("sim.n and sim.H must be >= 1")
        if self.sigma_u < 0:
            raise ConfigError("sim.sigma_u must be >= 0")
        if not 0.0 <= self.z <= 1.0:
            raise ConfigError("sim.z must lie in [0, 1]")
        if self.recurrence_mode not in RECURRENCE_MODES:
            raise ConfigError(f"sim.recurrence_mode must be one of {RECURRENCE_MODES}")
        if not 0.0 <= self.curtail_min_w <= self.curtail_max_w:
            raise ConfigError("bad curtailable range")
        if not 0.0 <= self.shift_min_w <= self.shift_max_w:
            raise ConfigError("bad shift magnitude range")
        if not 0.0 < self.shift_len_min_frac <= self.shift_len_max_frac:
            raise ConfigError("bad shift length range")
        if not 0.0 <= self.coop_prob <= 1.0:
            raise ConfigError("sim.coop_prob must lie in [0, 1]")


def build_action_set(H: int) -> List[IntervalAction]:
    """Smallest interval family containing [1, H] and closed under midpoint splits.

    ``[h1, h2]`` spawns ``[h1, m]`` and ``[m, h2]`` with ``m = ceil((h1 + h2) / 2)``.
    Sorted by (start, end).
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    seen = {(1, H)}
    stack = [(1, H)]
    while stack:
        h1, h2 = stack.pop()
        m = (h1 + h2 + 1) // 2
        for child in ((h1, m), (m, h2)):
            if child not in seen:
                seen.add(child)
                stack.append(child)
    return [IntervalAction(a, b) for a, b in sorted(seen)]


def shift_length_bounds(H: int, lo_frac=0.25, hi_frac=0.5):
    lo = max(1, math.ceil(lo_frac * H))
    hi = max(lo, math.floor(hi_frac * H))
    return lo, hi


def sample_consumer(H: int, params: SimParams, rng: np.random.Generator) -> ConsumerModel:
    curtail = rng.uniform(params.curtail_min_w, params.curtail_max_w)
    magnitude = rng.uniform(params.shift_min_w, params.shift_max_w)
    length_real = rng.uniform(params.shift_len_min_frac * H, params.shift_len_max_frac * H)
    lo, hi = shift_length_bounds(H, params.shift_len_min_frac, params.shift_len_max_frac)
    # round half up, then clip: plain rounding can leave the [ceil, floor] slot range
    length = int(min(max(math.floor(length_real + 0.5), lo), hi))
    start_real = rng.uniform(-0.5 * length, H - 0.5 * length)
    cooperative = bool(rng.random() < params.coop_prob)
    # continuous time t in [h - 1, h) belongs to slot h
    return ConsumerModel(
        sigma_u=float(params.sigma_u),
        z=float(params.z),
        curtailable=float(curtail),
        shift_magnitude=float(magnitude),
        window_start=int(math.floor(start_real)) + 1,
        window_len=length,
        cooperative=cooperative,
    )


def sample_population(n: int, H: int, params: SimParams, rng: np.random.Generator) -> List[ConsumerModel]:
    """Draw ``n`` independent consumers; consumer i only depends on the first i draws."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return [sample_consumer(H, params, rng) for _ in range(n)]


def ar_noise(sigma, z, H: int, rng: np.random.Generator, size=(), mode: str = "exact_ar") -> np.ndarray:
    """Unconditional load reductions, shape ``size + (H,)``.

    ``sigma`` and ``z`` broadcast against ``size``. In ``exact_ar`` mode the
    innovation is scaled by sqrt(1 - z^2) so every slot is marginally
    N(0, sigma^2). ``paper_literal`` scales it by (1 - z), whose stationary
    standard deviation is sigma * sqrt((1 - z) / (1 + z)).
    """
    if mode not in RECURRENCE_MODES:
        raise ValueError(f"unknown recurrence mode {mode!r}")
    size = (int(size),) if np.isscalar(size) else tuple(size)
    eps = rng.standard_normal(size + (H,))
    sigma = np.asarray(sigma, dtype=float)[..., None]
    z = np.asarray(z, dtype=float)
    innov = np.sqrt(1.0 - z * z) if mode == "exact_ar" else (1.0 - z)
    u = np.empty_like(eps)
    u[..., 0] = eps[..., 0]
    for h in range(1, H):
        u[..., h] = z * u[..., h - 1] + innov * eps[..., h]
    return u * sigma


def unconditional_curve(consumer: ConsumerModel, H: int, rng: np.random.Generator,
                        mode: str = "exact_ar") -> np.ndarray:
    return ar_noise(consumer.sigma_u, consumer.z, H, rng, mode=mode)


def _overlap(p: int, length: int, request: IntervalAction) -> int:
    return max(0, min(p + length - 1, request.end) - max(p, request.start) + 1)


def shift_placement(consumer: ConsumerModel, request: IntervalAction, H: int):
    """Chosen block start (1-based) and whether the block is curtailed instead.

    The block may move anywhere inside the union of its original window and
    [1, H]. Minimal overlap with the request wins; the original placement is
    kept when it already attains the minimum, otherwise the smallest start.
    """
    L = consumer.window_len
    ws = consumer.window_start
    lo = min(ws, 1)
    hi = max(consumer.window_end, H)
    overlaps = {p: _overlap(p, L, request) for p in range(lo, hi - L + 2)}
    best = min(overlaps.values())
    if best > 0 and consumer.cooperative:
        return ws, True
    if overlaps[ws] == best:
        return ws, False
    return min(p for p, v in overlaps.items() if v == best), False


def shiftable_contribution_full(consumer: ConsumerModel, request: IntervalAction, H: int):
    """Contribution over the whole reachable range, including slots outside [1, H].

    Returns ``(first_slot, values)``; used to check energy balance.
    """
    L = consumer.window_len
    ws = consumer.window_start
    lo = min(ws, 1)
    hi = max(consumer.window_end, H)
    values = np.zeros(hi - lo + 1)
    p, curtailed = shift_placement(consumer, request, H)
    values[ws - lo:ws - lo + L] += consumer.shift_magnitude
    if not curtailed:
        values[p - lo:p - lo + L] -= consumer.shift_magnitude
    return lo, values


def shiftable_response(consumer: ConsumerModel, request: IntervalAction, H: int) -> np.ndarray:
    """Load-reduction contribution of the shiftable block on slots 1..H."""
    lo, values = shiftable_contribution_full(consumer, request, H)
    return values[1 - lo:1 - lo + H].copy()


def deterministic_response(consumer: ConsumerModel, request: IntervalAction, H: int) -> np.ndarray:
    """Curtailable plus shiftable contribution (everything except the noise)."""
    return consumer.curtailable * request.mask(H) + shiftable_response(consumer, request, H)


def simulate_episode(consumers: Sequence[ConsumerModel], actions: Sequence[IntervalAction], H: int,
                     rng: np.random.Generator, mode: str = "exact_ar") -> np.ndarray:
    """One episode of load-reduction curves, shape (n, H)."""
    if len(actions) != len(consumers):
        raise DimensionError("need one request interval per consumer")
    sig = np.array([c.sigma_u for c in consumers])
    z = np.array([c.z for c in consumers])
    noise = ar_noise(sig, z, H, rng, size=(len(consumers),), mode=mode)
    det = np.array([deterministic_response(c, a, H) for c, a in zip(consumers, actions)])
    return noise + det


class Simulator:
    """A fixed population together with its action set.

    The noise-free response of every (consumer, action) pair is tabulated
    once; episodes add fresh unconditional noise to the selected rows.
    """

    def __init__(self, consumers: Sequence[ConsumerModel], H: int, mode: str = "exact_ar",
                 actions: Optional[Sequence[IntervalAction]] = None):
        if mode not in RECURRENCE_MODES:
            raise ValueError(f"unknown recurrence mode {mode!r}")
        self.consumers = list(consumers)
        self.H = int(H)
        self.mode = mode
        self.actions = list(actions) if actions is not None else build_action_set(self.H)
        self.n = len(self.consumers)
        self.k = len(self.actions)
        self._sigma = np.array([c.sigma_u for c in self.consumers])
        self._z = np.array([c.z for c in self.consumers])
        self.response = np.array([[deterministic_response(c, a, self.H) for a in self.actions]
                                  for c in self.consumers])

    @property
    def action_counts(self):
        return [self.k] * self.n

    def noise(self, rng: np.random.Generator, count: Optional[int] = None) -> np.ndarray:
        size = (self.n,) if count is None else (count, self.n)
        return ar_noise(self._sigma, self._z, self.H, rng, size=size, mode=self.mode)

    def responses(self, assignment) -> np.ndarray:
        a = as_assignment(assignment, self.action_counts)
        return self.response[np.arange(self.n), list(a)]

    def episode(self, assignment, rng: np.random.Generator) -> np.ndarray:
        return self.responses(assignment) + self.noise(rng)

    def episodes(self, assignment, count: int, rng: np.random.Generator) -> np.ndarray:
        """``count`` independent episodes under a fixed assignment, shape (count, n, H)."""
        return self.responses(assignment)[None] + self.noise(rng, count)

    def ground_truth_scenario(self, rng: np.random.Generator, count: int = 1) -> np.ndarray:
        """Scenario table (count, n, k, H): one noise draw per consumer, shared by all actions."""
        u = self.noise(rng, count)
        return self.response[None] + u[:, :, None, :]


_POP_FIELDS = ("sigma_u", "z", "curtailable", "shift_magnitude", "window_start", "window_len",
               "cooperative")


def write_population(consumers: Sequence[ConsumerModel], H: int, path) -> None:
    lines = [f"# H={H}", "# " + " ".join(_POP_FIELDS)]
    for c in consumers:
        d = asdict(c)
        d["cooperative"] = int(c.cooperative)
        lines.append(" ".join(repr(d[f]) if isinstance(d[f], float) else str(d[f])
                              for f in _POP_FIELDS))
    Path(path).write_text("\n".join(lines) + "\n")


def read_population(path):
    """Inverse of :func:`write_population`; returns ``(consumers, H)``."""
    H = None
    consumers = []
    for no, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("H="):
                H = int(body[2:])
            continue
        parts = line.split()
        if len(parts) != len(_POP_FIELDS):
            raise ValueError(f"line {no}: expected {len(_POP_FIELDS)} fields, got {len(parts)}")
        consumers.append(ConsumerModel(
            sigma_u=float(parts[0]), z=float(parts[1]), curtailable=float(parts[2]),
            shift_magnitude=float(parts[3]), window_start=int(parts[4]),
            window_len=int(parts[5]), cooperative=bool(int(parts[6]))))
    if H is None:
        raise ValueError("population file lacks an '# H=' header")
    return consumers, H


def estimate_expected_reward(sim: Simulator, assignment, m: int, rng: np.random.Generator):
    """Mean and standard error of the reward over ``m`` fresh episodes.

    Noise is drawn before the assignment is applied, so two calls with
    identically seeded generators score different assignments on the same
    episodes (common random numbers).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    curves = sim.episodes(assignment, m, rng)
    rewards = curves.sum(axis=1).min(axis=1)
    # centring on the first draw keeps the noise-free case exact (mean r0, SE 0)
    dev = rewards - rewards[0]
    se = float(dev.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return float(rewards[0] + dev.mean()), se
