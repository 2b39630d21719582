"""Fixed points of the asymptotic update map and the resulting phase picture.

Fixed points are the critical points of the free energy.  The third
derivative of the free energy is strictly decreasing, so its second
derivative is unimodal and has at most two roots; these split (0, 1) into at
most three pieces on which the first derivative is monotone, and each piece
holds at most one root.  That gives an exhaustive, bracket-only root search.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import logit

from .model import (
    DomainError,
    ModelParams,
    asymptotic_up_prob,
    asymptotic_up_prob_derivative,
    free_energy_derivative,
)

__all__ = [
    "FixedPointKind",
    "Phase",
    "FixedPoint",
    "PhaseReport",
    "CriticalPoint",
    "CriticalityReport",
    "BoundarySample",
    "VerificationError",
    "find_fixed_points",
    "classify_phase",
    "critical_point",
    "verify_criticality",
    "second_derivative_sign_profile",
    "inflection_location",
    "v_region_boundary",
    "phase_diagram_scan",
    "max_update_slope",
]

ROOT_TOL = 1e-12
CLASSIFY_TOL = 1e-9
MERGE_TOL = 1e-10

# innermost usable brackets; logit() stays finite on both
_LO = 1e-300
_HI = 1.0 - 2.0**-53


class VerificationError(RuntimeError):
    """A closed-form identity failed its numerical check."""


class FixedPointKind(str, enum.Enum):
    ATTRACTOR = "Attractor"
    REPELLOR = "Repellor"
    INFLECTION = "Inflection"


class Phase(str, enum.Enum):
    HIGH_TEMPERATURE = "HighTemperature"
    LOW_TEMPERATURE = "LowTemperature"
    DEGENERATE = "Degenerate"


@dataclass(frozen=True)
class FixedPoint:
    c: float
    lambda_prime: float
    kind: FixedPointKind


@dataclass(frozen=True)
class PhaseReport:
    fixed_points: tuple[FixedPoint, ...]
    phase: Phase

    @property
    def attractors(self) -> list[FixedPoint]:
        return [fp for fp in self.fixed_points if fp.kind is FixedPointKind.ATTRACTOR]

    def as_dict(self) -> dict:
        return {
            "phase": self.phase.value,
            "fixed_points": [
                {"c": fp.c, "lambda_prime": fp.lambda_prime, "kind": fp.kind.value}
                for fp in self.fixed_points
            ],
        }


@dataclass(frozen=True)
class CriticalPoint:
    cbar: float
    p_c: float
    alpha1_c: float
    alpha2: float

    def params(self, n: int) -> ModelParams:
        return ModelParams(n, self.p_c, self.alpha1_c, self.alpha2)

    def as_dict(self) -> dict:
        return {"cbar": self.cbar, "p_c": self.p_c, "alpha1_c": self.alpha1_c, "alpha2": self.alpha2}


@dataclass(frozen=True)
class CriticalityReport:
    fixed_point_residual: float
    slope_residual: float
    curvature: float
    third_derivative: float
    third_derivative_closed_form: float

    def as_dict(self) -> dict:
        return {
            "lambda_minus_c": self.fixed_point_residual,
            "lambda_prime_minus_1": self.slope_residual,
            "lambda_second": self.curvature,
            "lambda_third": self.third_derivative,
            "lambda_third_closed_form": self.third_derivative_closed_form,
        }


@dataclass(frozen=True)
class BoundarySample:
    p: float
    alpha1_lower: float
    alpha1_upper: float
    valid: bool


def _dphi(params: ModelParams, c: float) -> float:
    return float(free_energy_derivative(params, c, 1))


def _d2phi(params: ModelParams, c: float) -> float:
    return float(free_energy_derivative(params, c, 2))


def inflection_location(alpha2: float) -> float:
    """Unique root in (0, 1) of the free energy's third derivative.

    Depends on ``alpha2`` only; equals 1/2 when ``alpha2 == 0`` and increases
    towards 1 with ``alpha2``.
    """
    if alpha2 < 0:
        raise DomainError("alpha2 must be non-negative")
    if alpha2 == 0:
        return 0.5

    def g(c):
        q = c * (1.0 - c)
        return alpha2 + (1.0 - 2.0 * c) / (q * q)

    hi = 0.75
    while g(hi) > 0:
        hi = 0.5 * (hi + 1.0)
    return brentq(g, 0.5, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def _curvature_roots(params: ModelParams) -> list[float]:
    cbar = inflection_location(params.alpha2)
    top = _d2phi(params, cbar)
    if top <= 0.0:
        return []
    f = lambda c: _d2phi(params, c)
    left = brentq(f, _LO, cbar, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    right = brentq(f, cbar, _HI, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return [left, right]


def _bisect(f, a: float, b: float, fa: float) -> float:
    """Plain bisection to ``ROOT_TOL``; ``f`` changes sign on ``[a, b]``."""
    while b - a > ROOT_TOL * 0.01 and b - a > 4 * np.spacing(b):
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0.0:
            return m
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def _classify(lambda_prime: float) -> FixedPointKind:
    if lambda_prime < 1.0 - CLASSIFY_TOL:
        return FixedPointKind.ATTRACTOR
    if lambda_prime > 1.0 + CLASSIFY_TOL:
        return FixedPointKind.REPELLOR
    return FixedPointKind.INFLECTION


def _merge(params: ModelParams, roots: list[float]) -> list[float]:
    """Collapse roots that are one analytic root up to rounding."""
    merged: list[list[float]] = []
    for r in sorted(roots):
        if merged:
            prev = merged[-1][-1]
            mid = 0.5 * (prev + r)
            if r - prev <= MERGE_TOL or abs(_dphi(params, mid)) <= 64 * np.finfo(float).eps:
                merged[-1].append(r)
                continue
        merged.append([r])
    return [float(np.mean(group)) for group in merged]


def find_fixed_points(params: ModelParams) -> list[FixedPoint]:
    """All solutions of ``lambda(c) = c`` in (0, 1), ascending."""
    f = lambda c: _dphi(params, c)
    breaks = [_LO, *_curvature_roots(params), _HI]
    roots = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        fa, fb = f(a), f(b)
        if fa == 0.0:
            roots.append(a)
        elif fb == 0.0:
            roots.append(b)
        elif (fa > 0) != (fb > 0):
            roots.append(_bisect(f, a, b, fa))
    if not roots:
        # only reachable when the root hugs an endpoint beyond double resolution
        roots.append(_HI if f(_HI) > 0 else _LO)
    roots = _merge(params, roots)
    out = []
    for c in roots:
        lp = float(asymptotic_up_prob_derivative(params, c, 1))
        out.append(FixedPoint(c, lp, _classify(lp)))
    return out


def classify_phase(params: ModelParams) -> PhaseReport:
    fps = find_fixed_points(params)
    if len(fps) > 3:
        raise VerificationError(f"found {len(fps)} fixed points; at most 3 are possible")
    kinds = [fp.kind for fp in fps]
    n_attr = kinds.count(FixedPointKind.ATTRACTOR)
    if FixedPointKind.INFLECTION in kinds:
        phase = Phase.DEGENERATE
    elif len(fps) == 1 and n_attr == 1:
        phase = Phase.HIGH_TEMPERATURE
    elif n_attr >= 2:
        phase = Phase.LOW_TEMPERATURE
    else:
        phase = Phase.DEGENERATE
    return PhaseReport(tuple(fps), phase)


def critical_point(cbar: float) -> CriticalPoint:
    """Corner of the two-maximiser region for the slice whose inflection sits at ``cbar``."""
    cbar = float(cbar)
    if not 0.5 <= cbar <= 2.0 / 3.0:
        raise DomainError(f"cbar must lie in [1/2, 2/3], got {cbar}")
    q = 1.0 - cbar
    alpha2 = (2.0 * cbar - 1.0) / (cbar**2 * q**2)
    alpha1_c = (2.0 - 3.0 * cbar) / (cbar * q**2)
    w = cbar * math.exp((4.0 * cbar - 3.0) / (2.0 * q**2))
    p_c = w / (w + q)
    # 2/3 lands a hair below zero in floating point
    return CriticalPoint(cbar, p_c, max(alpha1_c, 0.0), max(alpha2, 0.0))


def verify_criticality(cp: CriticalPoint, tol: float = 1e-9) -> CriticalityReport:
    params = cp.params(1)
    c = cp.cbar
    lam = float(asymptotic_up_prob(params, c))
    d1, d2, d3 = (float(asymptotic_up_prob_derivative(params, c, k)) for k in (1, 2, 3))
    closed = (-6.0 * c * c + 6.0 * c - 2.0) / (c * c * (1.0 - c) ** 2)
    report = CriticalityReport(lam - c, d1 - 1.0, d2, d3, closed)
    failures = []
    if abs(report.fixed_point_residual) > tol:
        failures.append(f"lambda(cbar) - cbar = {report.fixed_point_residual:.3e}")
    if abs(report.slope_residual) > tol:
        failures.append(f"lambda'(cbar) - 1 = {report.slope_residual:.3e}")
    if abs(report.curvature) > tol:
        failures.append(f"lambda''(cbar) = {report.curvature:.3e}")
    if d3 > -8.0 + tol:
        failures.append(f"lambda'''(cbar) = {d3:.12g} exceeds -8")
    if abs(d3 - closed) > tol * max(1.0, abs(closed)):
        failures.append(f"lambda'''(cbar) = {d3:.12g} differs from closed form {closed:.12g}")
    if failures:
        raise VerificationError("; ".join(failures))
    return report


def second_derivative_sign_profile(params: ModelParams, grid: Sequence[float], cbar: float,
                                   slack: float = 1e-12) -> list[int]:
    """Sign of ``lambda''`` over ``grid``; values within ``slack`` of zero count as 0."""
    out = []
    for c in grid:
        v = float(asymptotic_up_prob_derivative(params, c, 2))
        out.append(0 if abs(v) <= slack else (1 if v > 0 else -1))
    return out


def _curvature_height(alpha2: float, c: float) -> float:
    # alpha1 at which the curvature of the free energy vanishes at c
    return 1.0 / (c * (1.0 - c)) - alpha2 * c


def _slope_offset(alpha2: float, c: float) -> float:
    # free-energy slope at c, minus logit(p), when alpha1 = _curvature_height(c)
    return 1.0 / (1.0 - c) - 0.5 * alpha2 * c * c - logit(c)


def v_region_boundary(alpha2: float, p: float) -> BoundarySample:
    """alpha1 interval, at fixed ``(alpha2, p)``, where the free energy has two local maxima.

    The two edges are the saddle-node values: alpha1 such that the slope and the
    curvature of the free energy vanish together, on either side of the
    inflection location.
    """
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie in (0, 1)")
    cbar = inflection_location(alpha2)
    alpha1_c = _curvature_height(alpha2, cbar)
    target = -logit(p)
    floor = _slope_offset(alpha2, cbar)
    gap = target - floor
    if abs(gap) <= 1e-12 * max(1.0, abs(target)):
        return BoundarySample(p, alpha1_c, alpha1_c, True)
    if gap < 0:
        return BoundarySample(p, math.nan, math.nan, False)
    g = lambda c: _slope_offset(alpha2, c) - target
    eps = 4 * np.finfo(float).eps
    a = brentq(g, _LO, cbar, xtol=1e-15, rtol=eps)
    b = brentq(g, cbar, _HI, xtol=1e-15, rtol=eps)
    return BoundarySample(p, _curvature_height(alpha2, b), _curvature_height(alpha2, a), True)


def phase_diagram_scan(alpha2: float, p_grid: Sequence[float], alpha1_grid: Sequence[float],
                       n: int = 1) -> list[dict]:
    """Phase of every ``(p, alpha1)`` grid point, row-major over ``p`` then ``alpha1``."""
    if len(p_grid) == 0 or len(alpha1_grid) == 0:
        raise DomainError("grids must be non-empty")
    rows = []
    for p in p_grid:
        for a1 in alpha1_grid:
            report = classify_phase(ModelParams(n, p, a1, alpha2))
            rows.append({
                "p": float(p),
                "alpha1": float(a1),
                "alpha2": float(alpha2),
                "phase": report.phase.value,
                "n_fixed_points": len(report.fixed_points),
            })
    return rows


def max_update_slope(params: ModelParams, grid_size: int = 10_001) -> tuple[float, float]:
    """Supremum of the update-map slope on ``[0, 1]`` and where it is attained.

    A uniform grid locates the best cell; a bounded scalar search refines it.
    """
    grid = np.linspace(0.0, 1.0, grid_size)
    slopes = asymptotic_up_prob_derivative(params, grid)
    j = int(np.argmax(slopes))
    best_c, best = float(grid[j]), float(slopes[j])
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid_size - 1)]
    res = minimize_scalar(lambda c: -float(asymptotic_up_prob_derivative(params, c)),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    if -res.fun > best:
        best_c, best = float(res.x), float(-res.fun)
    return best, best_c
