"""Closed-form quantities of the vertex-weighted edge/triangle Gibbs model.

Everything here is a pure function of :class:`ModelParams`.  Level weights are
kept in log space throughout; the interaction terms use the unordered
convention ``C(k, 2)`` edges and ``C(k, 3)`` triangles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import logit, xlogy

__all__ = [
    "DomainError",
    "ModelParams",
    "SpinConfiguration",
    "MomentPair",
    "local_field",
    "update_prob_plus",
    "update_prob_minus",
    "asymptotic_up_prob",
    "asymptotic_up_prob_derivative",
    "free_energy",
    "free_energy_derivative",
    "log_level_weight",
    "log_level_weights",
    "hamiltonian",
    "subgraph_count",
    "density_region",
]

# O(n) cache re-validation after each mutation; disabled under ``python -O``.
CHECK_INVARIANTS = __debug__

# Exact big-integer binomials are used up to this n; lgamma above it.
_EXACT_BINOMIAL_MAX_N = 20_000


class DomainError(ValueError):
    """An argument lies outside the domain of the requested quantity."""


@dataclass(frozen=True)
class ModelParams:
    """Vertex count ``n``, spin-1 prior ``p`` and the edge/triangle weights."""

    n: int
    p: float
    alpha1: float
    alpha2: float

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        for name in ("p", "alpha1", "alpha2"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if not 0.0 < self.p < 1.0:
            raise DomainError(f"p must lie in (0, 1), got {self.p!r}")
        if self.alpha1 < 0.0:
            raise DomainError(f"alpha1 must be >= 0, got {self.alpha1!r}")
        if self.alpha2 < 0.0:
            raise DomainError(f"alpha2 must be >= 0, got {self.alpha2!r}")

    def with_n(self, n: int) -> "ModelParams":
        return ModelParams(n, self.p, self.alpha1, self.alpha2)

    def as_dict(self) -> dict:
        return {"n": self.n, "p": self.p, "alpha1": self.alpha1, "alpha2": self.alpha2}


@dataclass
class SpinConfiguration:
    """A 0/1 spin assignment with a cached count of spin-1 vertices."""

    spins: np.ndarray
    ones_count: int = field(default=-1)

    def __post_init__(self):
        self.spins = np.ascontiguousarray(self.spins, dtype=np.uint8)
        if self.spins.ndim != 1 or self.spins.size == 0:
            raise DomainError("spins must be a non-empty 1-d sequence")
        if np.any(self.spins > 1):
            raise DomainError("spins must be 0/1 valued")
        total = int(self.spins.sum(dtype=np.int64))
        if self.ones_count == -1:
            self.ones_count = total
        elif self.ones_count != total:
            raise DomainError(f"ones_count={self.ones_count} but {total} spins are 1")

    @property
    def n(self) -> int:
        return int(self.spins.size)

    @classmethod
    def all_zeros(cls, n: int) -> "SpinConfiguration":
        return cls(np.zeros(n, dtype=np.uint8), 0)

    @classmethod
    def all_ones(cls, n: int) -> "SpinConfiguration":
        return cls(np.ones(n, dtype=np.uint8), n)

    @classmethod
    def from_level(cls, n: int, k: int) -> "SpinConfiguration":
        """The configuration whose first ``k`` vertices carry spin 1."""
        if not 0 <= k <= n:
            raise DomainError(f"level {k} outside [0, {n}]")
        spins = np.zeros(n, dtype=np.uint8)
        spins[:k] = 1
        return cls(spins, k)

    def set_spin(self, i: int, value: int) -> None:
        old = int(self.spins[i])
        value = int(value)
        if value not in (0, 1):
            raise DomainError(f"spin value must be 0 or 1, got {value}")
        self.spins[i] = value
        self.ones_count += value - old
        if CHECK_INVARIANTS:
            self.check()

    def check(self) -> None:
        total = int(self.spins.sum(dtype=np.int64))
        assert self.ones_count == total, (self.ones_count, total)
        assert 0 <= self.ones_count <= self.n

    def copy(self) -> "SpinConfiguration":
        return SpinConfiguration(self.spins.copy(), self.ones_count)

    @property
    def magnetization(self) -> float:
        return self.ones_count / self.n


@dataclass(frozen=True)
class MomentPair:
    """First and second moments of a vertex-weight law supported on [0, 1]."""

    m1: float
    m2: float

    def __post_init__(self):
        m1, m2 = float(self.m1), float(self.m2)
        if not (0.0 <= m1 <= 1.0 and 0.0 <= m2 <= 1.0):
            raise DomainError("moments must lie in [0, 1]")
        slack = 4 * np.finfo(float).eps
        if m1 * m1 > m2 + slack or m2 > m1 + slack:
            raise DomainError(f"need m1^2 <= m2 <= m1, got m1={m1}, m2={m2}")
        object.__setattr__(self, "m1", m1)
        object.__setattr__(self, "m2", m2)


def _check_other_count(params: ModelParams, s) -> None:
    s_arr = np.asarray(s)
    if np.any(s_arr < 0) or np.any(s_arr > params.n - 1):
        raise DomainError(f"count of other spin-1 vertices must lie in [0, {params.n - 1}]")


def local_field(params: ModelParams, s):
    """Change in the exponent when a vertex with ``s`` spin-1 neighbours flips to 1.

    Accepts a scalar or an integer array for ``s``.
    """
    _check_other_count(params, s)
    n = params.n
    s = np.asarray(s, dtype=np.float64) if np.ndim(s) else float(s)
    return (params.alpha1 / n) * s + (params.alpha2 / (2.0 * n * n)) * s * (s - 1.0)


def update_prob_plus(params: ModelParams, s):
    """Heat-bath probability that the chosen vertex is set to spin 1."""
    x = params.p * np.exp(local_field(params, s))
    return x / (x + (1.0 - params.p))


def update_prob_minus(params: ModelParams, s):
    """Heat-bath probability that the chosen vertex is set to spin 0."""
    x = params.p * np.exp(local_field(params, s))
    return (1.0 - params.p) / (x + (1.0 - params.p))


def _check_unit(c) -> None:
    c_arr = np.asarray(c)
    if np.any(~(c_arr >= 0.0)) or np.any(~(c_arr <= 1.0)):
        raise DomainError("magnetization must lie in [0, 1]")


def _exponent(params: ModelParams, c):
    return params.alpha1 * c + 0.5 * params.alpha2 * c * c


def asymptotic_up_prob(params: ModelParams, c):
    """Large-n probability that a chosen vertex is updated to 1 at magnetization ``c``."""
    _check_unit(c)
    c = np.asarray(c, dtype=np.float64) if np.ndim(c) else float(c)
    x = params.p * np.exp(_exponent(params, c))
    return x / (x + (1.0 - params.p))


def asymptotic_up_prob_derivative(params: ModelParams, c, order: int = 1):
    """First, second or third derivative of :func:`asymptotic_up_prob` in ``c``.

    With ``L`` the function value and ``h = alpha1 + alpha2*c``:
    ``L' = L(1-L)h``, ``L'' = L(1-L)((1-2L)h^2 + alpha2)`` and
    ``L''' = L'(1-2L)((1-2L)h^2 + alpha2) + L(1-L)(2(1-2L)h*alpha2 - 2L'h^2)``.
    """
    if order not in (1, 2, 3):
        raise DomainError(f"derivative order must be 1, 2 or 3, got {order!r}")
    lam = asymptotic_up_prob(params, c)
    a2 = params.alpha2
    h = params.alpha1 + a2 * c
    var = lam * (1.0 - lam)
    d1 = var * h
    if order == 1:
        return d1
    skew = 1.0 - 2.0 * lam
    bracket = skew * h * h + a2
    if order == 2:
        return var * bracket
    return d1 * skew * bracket + var * (2.0 * skew * h * a2 - 2.0 * d1 * h * h)


def free_energy(params: ModelParams, c):
    """Exponential growth rate of the level weight at magnetization ``c``.

    Uses ``0 log 0 = 0``, so the endpoints are finite.
    """
    _check_unit(c)
    c = np.asarray(c, dtype=np.float64) if np.ndim(c) else float(c)
    p = params.p
    entropy = -(xlogy(c, c) - xlogy(c, p)) - (xlogy(1.0 - c, 1.0 - c) - xlogy(1.0 - c, 1.0 - p))
    return 0.5 * params.alpha1 * c * c + params.alpha2 * c**3 / 6.0 + entropy


def free_energy_derivative(params: ModelParams, c, order: int = 1):
    """Closed-form derivatives of :func:`free_energy`; they diverge at 0 and 1."""
    if order not in (1, 2, 3):
        raise DomainError(f"derivative order must be 1, 2 or 3, got {order!r}")
    c_arr = np.asarray(c)
    if np.any(~(c_arr > 0.0)) or np.any(~(c_arr < 1.0)):
        raise DomainError("free-energy derivatives need 0 < c < 1")
    c = np.asarray(c, dtype=np.float64) if np.ndim(c) else float(c)
    a1, a2 = params.alpha1, params.alpha2
    if order == 1:
        return logit(params.p) + a1 * c + 0.5 * a2 * c * c - logit(c)
    q = c * (1.0 - c)
    if order == 2:
        return a1 + a2 * c - 1.0 / q
    return a2 + (1.0 - 2.0 * c) / (q * q)


@lru_cache(maxsize=64)
def _log_binomial_row(n: int) -> tuple:
    if n > _EXACT_BINOMIAL_MAX_N:
        lg = math.lgamma
        return tuple(lg(n + 1) - lg(k + 1) - lg(n - k + 1) for k in range(n + 1))
    row = []
    b = 1
    for k in range(n + 1):
        row.append(math.log(b))
        b = b * (n - k) // (k + 1)
    return tuple(row)


def _log_binomial(n: int, k: int) -> float:
    if n <= _EXACT_BINOMIAL_MAX_N:
        if n <= 4096:
            return _log_binomial_row(n)[k]
        return math.log(math.comb(n, k))
    lg = math.lgamma
    return lg(n + 1) - lg(k + 1) - lg(n - k + 1)


def _log_weight(n: int, p: float, a1: float, a2: float, k: int, log_binom: float) -> float:
    # Terms reach ~n*alpha in size; summing them exactly and rounding once keeps
    # neighbouring levels consistent to an ulp of the result.
    total = (
        Fraction(log_binom)
        + Fraction(a1) * math.comb(k, 2) / n
        + Fraction(a2) * math.comb(k, 3) / (n * n)
        + Fraction(math.log(p)) * k
        + Fraction(math.log1p(-p)) * (n - k)
    )
    return float(total)


def log_level_weight(params: ModelParams, k: int) -> float:
    """``log a_k``: unnormalised log-mass of all configurations with ``k`` ones."""
    n = params.n
    if isinstance(k, bool) or int(k) != k or not 0 <= k <= n:
        raise DomainError(f"level {k!r} outside [0, {n}]")
    k = int(k)
    return _log_weight(n, params.p, params.alpha1, params.alpha2, k, _log_binomial(n, k))


def log_level_weights(params: ModelParams) -> np.ndarray:
    """Vector of :func:`log_level_weight` for ``k = 0..n`` (identical values)."""
    n = params.n
    if n <= _EXACT_BINOMIAL_MAX_N:
        row = _log_binomial_row(n)
    else:
        row = [_log_binomial(n, k) for k in range(n + 1)]
    p, a1, a2 = params.p, params.alpha1, params.alpha2
    return np.array([_log_weight(n, p, a1, a2, k, row[k]) for k in range(n + 1)])


def hamiltonian(params: ModelParams, config: SpinConfiguration) -> float:
    """Edge-plus-triangle energy; depends on ``config`` only through its ones count."""
    n = params.n
    if config.n != n:
        raise DomainError(f"configuration has {config.n} vertices, params say {n}")
    k = config.ones_count
    return (params.alpha1 / n) * math.comb(k, 2) + (params.alpha2 / (n * n)) * math.comb(k, 3)


def subgraph_count(c1: int, m: int) -> int:
    """Number of spin-1 ``m``-cliques among ``c1`` spin-1 vertices."""
    if c1 < 0 or m < 0:
        raise DomainError("counts must be non-negative")
    return math.comb(c1, m)


def density_region(moments: MomentPair) -> tuple[float, float]:
    """Expected (edge, triangle) densities of the vertex-weighted graph."""
    return moments.m1**2, moments.m2**3
