"""Simulation of the single-site Glauber chain.

A configuration is a byte per vertex plus a ones counter.  The chosen vertex
sees ``S = ones - x[i]`` spin-1 neighbours, so a step costs O(1) with the
update probabilities tabulated once per parameter set.  Hot loops are numba
kernels; each replica owns an xoshiro256** stream (see :mod:`vwergm.rng`).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numba
import numpy as np
from numba import njit, prange

from . import rng
from .analysis import FixedPointKind, Phase, classify_phase
from .exactchain import build_kernel
from .model import DomainError, ModelParams, SpinConfiguration, asymptotic_up_prob, update_prob_plus

__all__ = [
    "ChainState",
    "Trajectory",
    "CouplingRun",
    "BurnInResult",
    "EscapeResult",
    "DriftEstimate",
    "BudgetExceeded",
    "up_prob_table",
    "step",
    "run",
    "coupled_step",
    "coupling_time",
    "coupling_times",
    "one_step_contraction_exact",
    "empirical_contraction",
    "burn_in_time",
    "burn_in_times",
    "drift_estimate",
    "mode_escape_time",
    "mode_escape_times",
    "path_codes",
    "set_threads",
]

DEFAULT_MEMORY_BUDGET = 2 * 1024**3

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is often too old and numba warns while probing it
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

Start = Union[str, int, SpinConfiguration]


class BudgetExceeded(ValueError):
    """A run would record more data than the configured memory budget."""


@lru_cache(maxsize=256)
def _table_cached(params: ModelParams) -> np.ndarray:
    # scalar evaluation so every entry is bit-identical to update_prob_plus(params, s)
    table = np.array([float(update_prob_plus(params, s)) for s in range(params.n)])
    table.setflags(write=False)
    return table


def up_prob_table(params: ModelParams) -> np.ndarray:
    """``update_prob_plus(params, s)`` for ``s = 0..n-1``."""
    return _table_cached(params)


def set_threads(count: int | None) -> None:
    """Worker threads for replica batches (``None``: all cores)."""
    numba.set_num_threads(numba.config.NUMBA_NUM_THREADS if count is None else max(1, int(count)))


@dataclass
class ChainState:
    config: SpinConfiguration
    time: int
    rng_state: np.ndarray

    @classmethod
    def new(cls, config: SpinConfiguration, seed: int) -> "ChainState":
        return cls(config, 0, rng.seed_state(seed))


@dataclass(frozen=True)
class Trajectory:
    stride: int
    magnetizations: np.ndarray
    seed: int
    params: ModelParams

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.magnetizations.size) * self.stride


@dataclass(frozen=True)
class CouplingRun:
    tau: int | None
    seed: int
    cap: int

    @property
    def timed_out(self) -> bool:
        return self.tau is None


@dataclass(frozen=True)
class BurnInResult:
    tau0: int | None
    c_star: float
    start_c: float
    seed: int
    cap: int

    @property
    def timed_out(self) -> bool:
        return self.tau0 is None


@dataclass(frozen=True)
class EscapeResult:
    time: int | None
    start_level: int
    repellor: float
    seed: int
    cap: int

    @property
    def timed_out(self) -> bool:
        return self.time is None


@dataclass(frozen=True)
class DriftEstimate:
    mean_drift: float
    std_err: float
    exact_drift: float
    asymptotic_drift: float
    replicas: int


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _step_kernel(spins, ones, table, s, thr):
    n = spins.size
    i = rng.next_below(s, n, thr)
    xi = spins[i]
    u = rng.next_double(s)
    new = np.uint8(1) if u < table[ones - xi] else np.uint8(0)
    spins[i] = new
    return ones + np.int64(new) - np.int64(xi)


@njit(cache=True)
def _run_kernel(spins, ones, table, steps, stride, s):
    n = spins.size
    thr = rng.rejection_threshold(n)
    out = np.empty(steps // stride + 1, dtype=np.int64)
    out[0] = ones
    j = 1
    for t in range(1, steps + 1):
        i = rng.next_below(s, n, thr)
        xi = spins[i]
        u = rng.next_double(s)
        new = np.uint8(1) if u < table[ones - xi] else np.uint8(0)
        spins[i] = new
        ones += np.int64(new) - np.int64(xi)
        if t % stride == 0:
            out[j] = ones
            j += 1
    return out, ones


@njit(cache=True)
def _path_codes_kernel(spins, ones, table, steps, s):
    n = spins.size
    thr = rng.rejection_threshold(n)
    out = np.empty(steps + 1, dtype=np.int64)
    code = np.int64(0)
    for i in range(n):
        code |= np.int64(spins[i]) << i
    out[0] = code
    for t in range(1, steps + 1):
        i = rng.next_below(s, n, thr)
        xi = spins[i]
        u = rng.next_double(s)
        new = np.uint8(1) if u < table[ones - xi] else np.uint8(0)
        if new != xi:
            code ^= np.int64(1) << i
        spins[i] = new
        ones += np.int64(new) - np.int64(xi)
        out[t] = code
    return out


@njit(cache=True)
def _coupled_step_kernel(top, bot, top_ones, bot_ones, table, s, thr):
    n = top.size
    i = rng.next_below(s, n, thr)
    u = rng.next_double(s)
    ti = top[i]
    bi = bot[i]
    nt = np.uint8(1) if u < table[top_ones - ti] else np.uint8(0)
    nb = np.uint8(1) if u < table[bot_ones - bi] else np.uint8(0)
    top[i] = nt
    bot[i] = nb
    return (top_ones + np.int64(nt) - np.int64(ti), bot_ones + np.int64(nb) - np.int64(bi),
            np.int64(nt != nb) - np.int64(ti != bi))


@njit(cache=True)
def _coupling_kernel(n, table, cap, s, check_every):
    """Grand coupling from all-ones / all-zeros.  Returns tau, -1 on timeout, -2 on a broken invariant."""
    top = np.ones(n, dtype=np.uint8)
    bot = np.zeros(n, dtype=np.uint8)
    top_ones = np.int64(n)
    bot_ones = np.int64(0)
    rho = np.int64(n)
    thr = rng.rejection_threshold(n)
    for t in range(1, cap + 1):
        i = rng.next_below(s, n, thr)
        u = rng.next_double(s)
        ti = top[i]
        bi = bot[i]
        nt = np.uint8(1) if u < table[top_ones - ti] else np.uint8(0)
        nb = np.uint8(1) if u < table[bot_ones - bi] else np.uint8(0)
        top[i] = nt
        bot[i] = nb
        top_ones += np.int64(nt) - np.int64(ti)
        bot_ones += np.int64(nb) - np.int64(bi)
        rho += np.int64(nt != nb) - np.int64(ti != bi)
        if nb > nt:
            return -2
        if check_every > 0 and t % check_every == 0:
            h = np.int64(0)
            for j in range(n):
                if top[j] < bot[j]:
                    return -2
                h += np.int64(top[j] != bot[j])
            if h != rho:
                return -2
        if rho == 0:
            return t
    return -1


@njit(cache=True, parallel=True)
def _coupling_batch(n, table, cap, states, check_every):
    out = np.empty(states.shape[0], dtype=np.int64)
    for r in prange(states.shape[0]):
        out[r] = _coupling_kernel(n, table, cap, states[r], check_every)
    return out


@njit(cache=True)
def _hitting_kernel(n, table, start_k, lo, hi, cap, s):
    """First t with ``lo <= ones <= hi`` (floats), or -1 after ``cap`` steps."""
    spins = np.zeros(n, dtype=np.uint8)
    for j in range(start_k):
        spins[j] = 1
    ones = np.int64(start_k)
    if lo <= ones <= hi:
        return 0
    thr = rng.rejection_threshold(n)
    for t in range(1, cap + 1):
        i = rng.next_below(s, n, thr)
        xi = spins[i]
        u = rng.next_double(s)
        new = np.uint8(1) if u < table[ones - xi] else np.uint8(0)
        spins[i] = new
        ones += np.int64(new) - np.int64(xi)
        if lo <= ones <= hi:
            return t
    return -1


@njit(cache=True, parallel=True)
def _hitting_batch(n, table, start_k, lo, hi, cap, states):
    out = np.empty(states.shape[0], dtype=np.int64)
    for r in prange(states.shape[0]):
        out[r] = _hitting_kernel(n, table, start_k, lo, hi, cap, states[r])
    return out


@njit(cache=True)
def _drift_kernel(n, k, table, replicas, s):
    # one step from a level-k configuration; only the chosen spin's value matters
    thr = rng.rejection_threshold(n)
    total = 0.0
    total_sq = 0.0
    for _ in range(replicas):
        i = rng.next_below(s, n, thr)
        xi = 1 if i < k else 0
        u = rng.next_double(s)
        new = 1 if u < table[k - xi] else 0
        d = float(new - xi)
        total += d
        total_sq += d * d
    return total, total_sq


@njit(cache=True)
def _unit_pair_kernel(n, k, table, replicas, s):
    # X has spin 1 at vertex n-1, Y has 0; vertices 0..k-1 are 1 in both
    thr = rng.rejection_threshold(n)
    total = 0.0
    total_sq = 0.0
    for _ in range(replicas):
        i = rng.next_below(s, n, thr)
        u = rng.next_double(s)
        if i == n - 1:
            d = 0.0  # both copies see k ones elsewhere and share u
        else:
            xi = 1 if i < k else 0
            nx = u < table[k + 1 - xi]
            ny = u < table[k - xi]
            d = 1.0 + (1.0 if nx != ny else 0.0)
        total += d
        total_sq += d * d
    return total, total_sq


# ---------------------------------------------------------------------------
# public API


def _initial_config(params: ModelParams, start: Start) -> SpinConfiguration:
    n = params.n
    if isinstance(start, SpinConfiguration):
        if start.n != n:
            raise DomainError(f"start configuration has {start.n} vertices, params say {n}")
        return start.copy()
    if isinstance(start, str):
        key = start.lower().replace("_", "").replace("-", "")
        if key in ("allones", "ones"):
            return SpinConfiguration.all_ones(n)
        if key in ("allzeros", "zeros"):
            return SpinConfiguration.all_zeros(n)
        raise DomainError(f"unknown start {start!r}")
    return SpinConfiguration.from_level(n, int(start))


def step(state: ChainState, params: ModelParams) -> ChainState:
    """Advance ``state`` by one Glauber update, in place; returns ``state``."""
    cfg = state.config
    thr = rng.rejection_threshold(cfg.n)
    cfg.ones_count = int(_step_kernel(cfg.spins, np.int64(cfg.ones_count), up_prob_table(params),
                                      state.rng_state, thr))
    state.time += 1
    if __debug__:
        cfg.check()
    return state


def run(params: ModelParams, start: Start = "ones", steps: int = 0, stride: int = 1,
        seed: int = 0, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> Trajectory:
    """Magnetization recorded every ``stride`` steps, starting with step 0."""
    if steps < 0 or stride < 1:
        raise DomainError("need steps >= 0 and stride >= 1")
    records = steps // stride + 1
    if records * 8 > memory_budget:
        raise BudgetExceeded(f"{records} records ({records * 8} bytes) exceed budget of {memory_budget} bytes")
    cfg = _initial_config(params, start)
    counts, _ = _run_kernel(cfg.spins, np.int64(cfg.ones_count), up_prob_table(params),
                            int(steps), int(stride), rng.seed_state(seed))
    return Trajectory(stride, counts / params.n, seed, params)


def path_codes(params: ModelParams, start: Start, steps: int, seed: int) -> np.ndarray:
    """Full configuration (bit-packed, vertex i = bit i) after every step; n <= 62."""
    if params.n > 62:
        raise DomainError("bit-packed paths need n <= 62")
    cfg = _initial_config(params, start)
    return _path_codes_kernel(cfg.spins, np.int64(cfg.ones_count), up_prob_table(params),
                              int(steps), rng.seed_state(seed))


def coupled_step(top: ChainState, bottom: ChainState, params: ModelParams) -> tuple[ChainState, ChainState]:
    """Monotone coupled update: shared vertex and shared uniform.

    Randomness is drawn from ``top.rng_state``; ``bottom`` is left pointing at
    the same generator so the pair keeps sharing one stream.
    """
    if __debug__ and np.any(top.config.spins < bottom.config.spins):
        raise AssertionError("coupled pair is not ordered (top >= bottom)")
    n = top.config.n
    thr = rng.rejection_threshold(n)
    t_ones, b_ones, _ = _coupled_step_kernel(top.config.spins, bottom.config.spins,
                                             np.int64(top.config.ones_count),
                                             np.int64(bottom.config.ones_count),
                                             up_prob_table(params), top.rng_state, thr)
    top.config.ones_count = int(t_ones)
    bottom.config.ones_count = int(b_ones)
    bottom.rng_state = top.rng_state
    top.time += 1
    bottom.time += 1
    if __debug__ and np.any(top.config.spins < bottom.config.spins):
        raise AssertionError("monotone coupling broke the order")
    return top, bottom


def _check_code(code: int, what: str) -> None:
    if code == -2:
        raise AssertionError(f"{what}: coupled chains lost their order or rho drifted")


def coupling_time(params: ModelParams, seed: int, cap: int, check_every: int = 0) -> CouplingRun:
    """Coalescence time of the grand coupling started from all-ones and all-zeros."""
    if cap < 1:
        raise DomainError("cap must be >= 1")
    code = int(_coupling_kernel(params.n, up_prob_table(params), int(cap), rng.seed_state(seed), int(check_every)))
    _check_code(code, "coupling_time")
    return CouplingRun(None if code < 0 else code, seed, cap)


def coupling_times(params: ModelParams, seeds: Sequence[int], cap: int, check_every: int = 0) -> list[CouplingRun]:
    codes = _coupling_batch(params.n, up_prob_table(params), int(cap), rng.seed_states(seeds), int(check_every))
    runs = []
    for code, sd in zip(codes.tolist(), seeds):
        _check_code(code, "coupling_times")
        runs.append(CouplingRun(None if code < 0 else code, sd, cap))
    return runs


def one_step_contraction_exact(params: ModelParams, k: int) -> float:
    """Expected Hamming distance after one coupled step from a pair at distance 1.

    ``k`` is the number of spin-1 vertices among the ``n - 1`` vertices where
    the two configurations agree.
    """
    n = params.n
    if isinstance(k, bool) or int(k) != k or not 0 <= k <= n - 1:
        raise DomainError(f"k must lie in [0, {n - 1}]")
    f = up_prob_table(params)
    spread = 0.0
    if k > 0:
        spread += k * (f[k] - f[k - 1])
    if n - 1 - k > 0:
        spread += (n - 1 - k) * (f[k + 1] - f[k])
    return 1.0 - 1.0 / n + spread / n


def empirical_contraction(params: ModelParams, k: int, replicas: int, seed: int) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the distance in :func:`one_step_contraction_exact`."""
    n = params.n
    if isinstance(k, bool) or int(k) != k or not 0 <= k <= n - 1:
        raise DomainError(f"k must lie in [0, {n - 1}]")
    if replicas < 2:
        raise DomainError("replicas must be >= 2")
    total, total_sq = _unit_pair_kernel(n, int(k), up_prob_table(params), int(replicas), rng.seed_state(seed))
    mean = total / replicas
    var = max(total_sq / replicas - mean * mean, 0.0) * replicas / (replicas - 1)
    return mean, math.sqrt(var / replicas)


def _target_fixed_point(params: ModelParams) -> float:
    report = classify_phase(params)
    fps = report.fixed_points
    if report.phase is Phase.HIGH_TEMPERATURE or (report.phase is Phase.DEGENERATE and len(fps) == 1):
        return fps[0].c
    raise DomainError(f"no unique burn-in target in phase {report.phase.value}; pass target explicitly")


def _burn_in_window(n: int, c_star: float, band: float | None) -> tuple[float, float]:
    width = 1.0 if band is None else band * n
    # the 1e-9 slack absorbs rounding in n*c_star
    return n * c_star - width - 1e-9, n * c_star + width + 1e-9


def burn_in_time(params: ModelParams, start_c: float, seed: int, cap: int,
                 target: float | None = None, band: float | None = None) -> BurnInResult:
    """First step at which the magnetization is within ``band`` (default ``1/n``) of the target."""
    return burn_in_times(params, start_c, [seed], cap, target, band)[0]


def burn_in_times(params: ModelParams, start_c: float, seeds: Sequence[int], cap: int,
                  target: float | None = None, band: float | None = None) -> list[BurnInResult]:
    if not 0.0 <= start_c <= 1.0:
        raise DomainError("start_c must lie in [0, 1]")
    c_star = _target_fixed_point(params) if target is None else float(target)
    n = params.n
    start_k = math.floor(start_c * n)
    lo, hi = _burn_in_window(n, c_star, band)
    codes = _hitting_batch(n, up_prob_table(params), start_k, lo, hi, int(cap), rng.seed_states(seeds))
    return [BurnInResult(None if c < 0 else c, c_star, start_c, sd, cap) for c, sd in zip(codes.tolist(), seeds)]


def _escape_setup(params: ModelParams, from_attractor: str):
    report = classify_phase(params)
    if report.phase is not Phase.LOW_TEMPERATURE:
        raise DomainError(f"mode escape needs the low-temperature phase, got {report.phase.value}")
    fps = report.fixed_points
    attractors = [fp for fp in fps if fp.kind is FixedPointKind.ATTRACTOR]
    repellors = [fp for fp in fps if fp.kind is FixedPointKind.REPELLOR]
    which = from_attractor.lower()
    if which not in ("lower", "upper"):
        raise DomainError("from_attractor must be 'lower' or 'upper'")
    src = attractors[0] if which == "lower" else attractors[-1]
    rep = repellors[0].c
    n = params.n
    start_k = math.floor(src.c * n)
    if which == "lower":
        lo, hi = math.nextafter(n * rep, math.inf), math.inf
    else:
        lo, hi = -math.inf, math.nextafter(n * rep, -math.inf)
    return start_k, rep, lo, hi


def mode_escape_time(params: ModelParams, from_attractor: str, seed: int, cap: int) -> EscapeResult:
    """Steps until the magnetization first crosses the repellor, leaving the chosen well."""
    return mode_escape_times(params, from_attractor, [seed], cap)[0]


def mode_escape_times(params: ModelParams, from_attractor: str, seeds: Sequence[int], cap: int) -> list[EscapeResult]:
    start_k, rep, lo, hi = _escape_setup(params, from_attractor)
    codes = _hitting_batch(params.n, up_prob_table(params), start_k, lo, hi, int(cap), rng.seed_states(seeds))
    return [EscapeResult(None if c < 0 else c, start_k, rep, sd, cap) for c, sd in zip(codes.tolist(), seeds)]


def drift_estimate(params: ModelParams, c: float, replicas: int, seed: int) -> DriftEstimate:
    """Empirical one-step drift of the magnetization from level ``floor(c n)``."""
    if replicas < 1:
        raise DomainError("replicas must be >= 1")
    if not 0.0 <= c <= 1.0:
        raise DomainError("c must lie in [0, 1]")
    n = params.n
    k = min(math.floor(c * n), n)
    total, total_sq = _drift_kernel(n, k, up_prob_table(params), int(replicas), rng.seed_state(seed))
    mean = total / replicas
    var = max(total_sq / replicas - mean * mean, 0.0)
    kern = build_kernel(params)
    up = kern.up[k] if k < n else 0.0
    down = kern.down[k - 1] if k > 0 else 0.0
    lam = float(asymptotic_up_prob(params, k / n))
    return DriftEstimate(
        mean_drift=mean / n,
        std_err=math.sqrt(var / replicas) / n,
        exact_drift=(up - down) / n,
        asymptotic_drift=(lam - k / n) / n,
        replicas=replicas,
    )
