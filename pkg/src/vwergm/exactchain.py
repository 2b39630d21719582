"""Exact computations on the (n+1)-level magnetization chain.

The ones-count of the Glauber chain is itself a birth-death chain, so its
kernel, stationary law, spectral gap, total-variation mixing time and level-cut
conductance are all computable in O(n) memory.  :func:`full_chain_oracle`
builds the full 2^n-state chain for small n and checks the projection.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .model import (
    DomainError,
    ModelParams,
    free_energy,
    log_level_weight,
    log_level_weights,
    update_prob_minus,
    update_prob_plus,
)

__all__ = [
    "MagnetizationKernel",
    "StationaryDistribution",
    "SpectralReport",
    "MixingReport",
    "BottleneckReport",
    "OracleReport",
    "Starts",
    "CapExceeded",
    "InconsistencyError",
    "build_kernel",
    "stationary",
    "check_detailed_balance",
    "spectral_gap",
    "exact_mixing_time",
    "mixing_time_by_squaring",
    "tv_curve",
    "bottleneck_ratio",
    "full_chain_oracle",
    "stirling_residual",
]

DEFAULT_MIXING_CAP = 10**9
ORACLE_MAX_N = 12


class CapExceeded(RuntimeError):
    """Mixing iteration hit its step cap; ``d_cap`` is the distance reached."""

    def __init__(self, cap: int, d_cap: float):
        super().__init__(f"d(t) = {d_cap:.6g} still above epsilon after {cap} steps; "
                         "use spectral_gap or bottleneck_ratio for slow regimes")
        self.cap = cap
        self.d_cap = d_cap


class InconsistencyError(RuntimeError):
    """Kernel and stationary law disagree (detailed balance broken)."""


class Starts(str, enum.Enum):
    ALL = "all"
    EXTREMES = "extremes"


@dataclass(frozen=True)
class MagnetizationKernel:
    """Up/down/stay probabilities per level; ``up[k]`` is P(k -> k+1)."""

    n: int
    up: np.ndarray  # length n, levels 0..n-1
    down: np.ndarray  # length n, levels 1..n
    stay: np.ndarray  # length n+1

    def up_full(self) -> np.ndarray:
        return np.append(self.up, 0.0)

    def down_full(self) -> np.ndarray:
        return np.insert(self.down, 0, 0.0)

    def dense(self) -> np.ndarray:
        n = self.n
        P = np.diag(self.stay)
        P[np.arange(n), np.arange(1, n + 1)] = self.up
        P[np.arange(1, n + 1), np.arange(n)] = self.down
        return P

    def step(self, v: np.ndarray) -> np.ndarray:
        """Push row distribution(s) ``v`` (last axis = level) one step forward."""
        out = v * self.stay
        out[..., 1:] += v[..., :-1] * self.up
        out[..., :-1] += v[..., 1:] * self.down
        return out


@dataclass(frozen=True)
class StationaryDistribution:
    log_weights: np.ndarray
    log_z: float

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_z)

    @property
    def log_probs(self) -> np.ndarray:
        return self.log_weights - self.log_z


@dataclass(frozen=True)
class SpectralReport:
    gap: float
    relaxation_time: float
    eigenvalue_2: float


@dataclass(frozen=True)
class MixingReport:
    epsilon: float
    t_mix: int
    worst_start: int
    distances: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class BottleneckReport:
    phi_star: float
    log_phi_star: float
    argmin_cut: int
    side: str  # "bottom" (levels <= k) or "top" (levels > k)
    mixing_lower_bound: float


def build_kernel(params: ModelParams) -> MagnetizationKernel:
    n = params.n
    k = np.arange(n)
    up = (n - k) / n * update_prob_plus(params, k)
    kd = np.arange(1, n + 1)
    down = kd / n * update_prob_minus(params, kd - 1)
    stay = 1.0 - np.append(up, 0.0) - np.insert(down, 0, 0.0)
    # stay is a difference of nearly equal terms only when it is tiny; clamp the sign
    stay = np.clip(stay, 0.0, 1.0)
    return MagnetizationKernel(n, up, down, stay)


def stationary(params: ModelParams) -> StationaryDistribution:
    lw = log_level_weights(params)
    return StationaryDistribution(lw, float(logsumexp(lw)))


def check_detailed_balance(kernel: MagnetizationKernel, dist: StationaryDistribution) -> float:
    """Largest relative mismatch of ``pi_k up_k`` against ``pi_{k+1} down_{k+1}``."""
    if kernel.n == 0:
        return 0.0
    # log_z cancels; leaving it out saves a rounding on every term
    lw = dist.log_weights
    lhs = lw[:-1] + np.log(kernel.up)
    rhs = lw[1:] + np.log(kernel.down)
    return float(np.max(np.abs(np.expm1(lhs - rhs))))


def _sturm_count(diag: np.ndarray, off2: np.ndarray, x: float) -> int:
    """Number of eigenvalues of the symmetric tridiagonal matrix below ``x``."""
    count = 0
    d = diag[0] - x
    tiny = np.finfo(float).tiny
    if d < 0:
        count += 1
    for i in range(1, diag.size):
        if d == 0.0:
            d = tiny
        d = diag[i] - x - off2[i - 1] / d
        if d < 0:
            count += 1
    return count


def _smallest_eigenvalue(diag: np.ndarray, off2: np.ndarray, upper: float) -> float:
    """Bisection on the Sturm count for the smallest eigenvalue in ``[0, upper]``."""
    lo, hi = 0.0, upper
    # relative resolution: the wanted eigenvalue may be exponentially small
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _sturm_count(diag, off2, mid) >= 1:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-14 * hi:
            break
    return 0.5 * (lo + hi)


def spectral_gap(kernel: MagnetizationKernel, dist: StationaryDistribution) -> SpectralReport:
    """Spectral gap of the level chain.

    The generator ``I - P`` is symmetrised by the stationary law and written as
    ``B^T B`` with ``B`` bidiagonal (row ``k`` holds ``-sqrt(up_k)`` and
    ``sqrt(down_{k+1})``).  The nonzero spectrum of ``B^T B`` equals that of the
    positive-definite tridiagonal ``B B^T``, whose smallest eigenvalue is the
    gap.  Its entries are sums of positive terms, so a gap far below machine
    epsilon is still resolved in relative terms.
    """
    violation = check_detailed_balance(kernel, dist)
    if violation > 1e-8:
        raise InconsistencyError(f"detailed balance violated by {violation:.3e}")
    n = kernel.n
    up, down = kernel.up, kernel.down
    diag = up + down
    off2 = down[:-1] * up[1:]
    gap = _smallest_eigenvalue(diag, off2, upper=float(np.max(diag) + 2 * math.sqrt(np.max(off2, initial=0.0))))
    if n == 1:
        gap = float(diag[0])
    return SpectralReport(gap, 1.0 / gap, 1.0 - gap)


def _starts(n: int, starts: Starts) -> np.ndarray:
    return np.arange(n + 1) if Starts(starts) is Starts.ALL else np.array([0, n]) if n > 0 else np.array([0])


def tv_curve(kernel: MagnetizationKernel, dist: StationaryDistribution, t_max: int,
             starts: Starts = Starts.EXTREMES) -> np.ndarray:
    """``d(t)`` for ``t = 0..t_max``, one column per start level."""
    n = kernel.n
    levels = _starts(n, starts)
    pi = dist.probs
    v = np.zeros((levels.size, n + 1))
    v[np.arange(levels.size), levels] = 1.0
    out = np.empty((t_max + 1, levels.size))
    for t in range(t_max + 1):
        out[t] = 0.5 * np.abs(v - pi).sum(axis=1)
        v = kernel.step(v)
    return out


def exact_mixing_time(kernel: MagnetizationKernel, dist: StationaryDistribution,
                      epsilon: float = 0.25, starts: Starts = Starts.EXTREMES,
                      cap: int = DEFAULT_MIXING_CAP) -> MixingReport:
    """First ``t`` with worst-start total variation to stationarity at most ``epsilon``."""
    if not 0.0 < epsilon < 1.0:
        raise DomainError("epsilon must lie in (0, 1)")
    n = kernel.n
    levels = _starts(n, starts)
    pi = dist.probs
    v = np.zeros((levels.size, n + 1))
    v[np.arange(levels.size), levels] = 1.0
    history = []
    prev = np.full(levels.size, np.inf)
    t = 0
    while True:
        d_each = 0.5 * np.abs(v - pi).sum(axis=1)
        # total variation to a stationary law never increases
        assert np.all(d_each <= prev + 1e-12), (t, d_each, prev)
        prev = d_each
        d = float(d_each.max())
        history.append(d)
        if d <= epsilon:
            return MixingReport(epsilon, t, int(levels[int(np.argmax(d_each))]), np.array(history))
        if t >= cap:
            raise CapExceeded(cap, d)
        v = kernel.step(v)
        t += 1


def mixing_time_by_squaring(kernel: MagnetizationKernel, dist: StationaryDistribution,
                            epsilon: float = 0.25, starts: Starts = Starts.EXTREMES,
                            cap: int = DEFAULT_MIXING_CAP) -> MixingReport:
    """Same quantity as :func:`exact_mixing_time` in O(log t) dense products.

    Powers ``P^(2^j)`` bracket the answer, then a binary search over products of
    those powers pins it down; valid because worst-start ``d(t)`` never increases.
    ``distances`` holds only ``[d(t_mix - 1), d(t_mix)]``.
    """
    if not 0.0 < epsilon < 1.0:
        raise DomainError("epsilon must lie in (0, 1)")
    n = kernel.n
    levels = _starts(n, starts)
    pi = dist.probs
    dense = kernel.dense()

    def dist_of(rows: np.ndarray) -> np.ndarray:
        return 0.5 * np.abs(rows - pi).sum(axis=1)

    rows = np.eye(n + 1)[levels]
    d0 = dist_of(rows)
    if d0.max() <= epsilon:
        return MixingReport(epsilon, 0, int(levels[int(np.argmax(d0))]), np.array([d0.max(), d0.max()]))
    powers = [dense]
    # smallest power of two that already mixes
    while dist_of(rows @ powers[-1]).max() > epsilon:
        if (1 << (len(powers) - 1)) >= cap:
            raise CapExceeded(cap, float(dist_of(rows @ powers[-1]).max()))
        powers.append(powers[-1] @ powers[-1])
    # invariant: rows (= start rows times P^t_lo) is not mixed, t_lo + 2^(j+1) is
    t_lo = 0
    for j in range(len(powers) - 2, -1, -1):
        trial = rows @ powers[j]
        if dist_of(trial).max() > epsilon:
            rows = trial
            t_lo += 1 << j
    t_mix = t_lo + 1
    if t_mix > cap:
        raise CapExceeded(cap, float(dist_of(rows).max()))
    final = dist_of(rows @ dense)
    return MixingReport(epsilon, t_mix, int(levels[int(np.argmax(final))]),
                        np.array([dist_of(rows).max(), final.max()]))


def bottleneck_ratio(kernel: MagnetizationKernel, dist: StationaryDistribution) -> BottleneckReport:
    """Minimal conductance over the cuts {levels <= k} / {levels > k}.

    A cut is admissible from whichever side carries stationary mass at most 1/2;
    the flow across cut ``k`` is ``pi_k up_k``.
    """
    n = kernel.n
    lp = dist.log_probs
    log_flow = lp[:-1] + np.log(kernel.up)
    log_below = np.logaddexp.accumulate(lp)[:-1]
    log_above = np.logaddexp.accumulate(lp[::-1])[::-1][1:]
    half = math.log(0.5)
    best = (math.inf, -1, "")
    for k in range(n):
        if log_below[k] <= half + 1e-15:
            r = log_flow[k] - log_below[k]
            if r < best[0]:
                best = (r, k, "bottom")
        if log_above[k] <= half + 1e-15:
            r = log_flow[k] - log_above[k]
            if r < best[0]:
                best = (r, k, "top")
    log_phi, k, side = best
    if k < 0:
        raise InconsistencyError("no admissible cut found")
    phi = math.exp(log_phi)
    return BottleneckReport(phi, log_phi, k, side, 0.25 / phi)


# ---------------------------------------------------------------------------
# brute-force oracle


@dataclass
class OracleReport:
    n: int
    stationarity_error: float
    reversibility_error: float
    kernel_error: float
    marginal_error: float
    tv_error: float
    tolerances: dict
    passed: dict

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "stationarity_error": self.stationarity_error,
            "reversibility_error": self.reversibility_error,
            "kernel_error": self.kernel_error,
            "marginal_error": self.marginal_error,
            "tv_error": self.tv_error,
            "tolerances": self.tolerances,
            "passed": self.passed,
            "ok": self.ok,
        }


def _full_transition(params: ModelParams):
    """Sparse 2^n x 2^n Glauber kernel built directly from the per-vertex rule."""
    n = params.n
    N = 1 << n
    states = np.arange(N, dtype=np.int64)
    bits = (states[:, None] >> np.arange(n)) & 1
    ones = bits.sum(axis=1)
    rows, cols, vals = [], [], []
    diag = np.zeros(N)
    for i in range(n):
        xi = bits[:, i]
        s = ones - xi
        # direct evaluation of the single-site conditional, not the level table
        h = (params.alpha1 / n) * s + (params.alpha2 / (n * n)) * (s * (s - 1) / 2.0)
        w1 = params.p * np.exp(h)
        w0 = 1.0 - params.p
        p_one = w1 / (w1 + w0)
        p_zero = w0 / (w1 + w0)
        flipped = states ^ (1 << i)
        p_flip = np.where(xi == 1, p_zero, p_one) / n
        p_keep = np.where(xi == 1, p_one, p_zero) / n
        rows.append(states)
        cols.append(flipped)
        vals.append(p_flip)
        diag += p_keep
    rows.append(states)
    cols.append(states)
    vals.append(diag)
    P = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return P, ones


def full_chain_oracle(params: ModelParams, t_max: int = 200, stat_tol: float = 1e-10,
                      rev_tol: float = 1e-12, tv_tol: float = 1e-10,
                      kernel_tol: float = 1e-14) -> OracleReport:
    """Compare the projected chain with the full 2^n-state Glauber chain."""
    n = params.n
    if n > ORACLE_MAX_N:
        raise DomainError(f"full-chain oracle is limited to n <= {ORACLE_MAX_N}")
    P, ones = _full_transition(params)
    N = P.shape[0]

    # Gibbs weights of individual configurations, from the energy definition
    log_w = np.array([
        (params.alpha1 / n) * math.comb(int(k), 2) + (params.alpha2 / (n * n)) * math.comb(int(k), 3)
        + k * math.log(params.p) + (n - k) * math.log1p(-params.p)
        for k in ones
    ])
    pi = np.exp(log_w - logsumexp(log_w))

    stationarity = float(np.max(np.abs(P.T @ pi - pi)))

    Q = (sparse.diags(pi) @ P).tocsr()
    Q.sort_indices()
    Qt = Q.T.tocsr()
    Qt.sort_indices()
    if not (np.array_equal(Q.indptr, Qt.indptr) and np.array_equal(Q.indices, Qt.indices)):
        reversibility = math.inf
    else:
        scale = np.maximum(np.abs(Q.data), np.abs(Qt.data))
        reversibility = float(np.max(np.abs(Q.data - Qt.data) / np.where(scale > 0, scale, 1.0)))

    coo = P.tocoo()
    # projected kernel: from any state at level k, the probabilities of k+1 / k-1
    kernel = build_kernel(params)
    up_full = np.zeros(N)
    down_full = np.zeros(N)
    delta = ones[coo.col] - ones[coo.row]
    np.add.at(up_full, coo.row[delta == 1], coo.data[delta == 1])
    np.add.at(down_full, coo.row[delta == -1], coo.data[delta == -1])
    kernel_err = 0.0
    for state in range(N):
        k = ones[state]
        u = kernel.up[k] if k < n else 0.0
        d = kernel.down[k - 1] if k > 0 else 0.0
        kernel_err = max(kernel_err, abs(up_full[state] - u), abs(down_full[state] - d))

    dist = stationary(params)
    marginal = np.bincount(ones, weights=pi, minlength=n + 1)
    marginal_err = float(np.max(np.abs(marginal - dist.probs) / dist.probs))

    mu = np.zeros(N)
    mu[N - 1] = 1.0
    nu = np.zeros(n + 1)
    nu[n] = 1.0
    pi_level = dist.probs
    PT = P.T.tocsr()
    tv_err = 0.0
    for _ in range(t_max + 1):
        full_tv = 0.5 * np.abs(mu - pi).sum()
        proj_tv = 0.5 * np.abs(nu - pi_level).sum()
        tv_err = max(tv_err, abs(full_tv - proj_tv))
        mu = PT @ mu
        nu = kernel.step(nu)

    tolerances = {"stationarity": stat_tol, "reversibility": rev_tol, "kernel": kernel_tol,
                  "marginal": stat_tol, "tv": tv_tol}
    passed = {
        "stationarity": stationarity <= stat_tol,
        "reversibility": reversibility <= rev_tol,
        "kernel": kernel_err <= kernel_tol,
        "marginal": marginal_err <= stat_tol,
        "tv": tv_err <= tv_tol,
    }
    return OracleReport(n, stationarity, reversibility, kernel_err, marginal_err, tv_err, tolerances, passed)


def stirling_residual(params: ModelParams, c: float) -> float:
    """``|log a_{floor(cn)} / n - phi(c)|``."""
    if not 0.0 < c < 1.0:
        raise DomainError("c must lie in (0, 1)")
    k = math.floor(c * params.n)
    return abs(log_level_weight(params, k) / params.n - float(free_energy(params, c)))
