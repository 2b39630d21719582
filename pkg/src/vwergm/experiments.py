"""Sweeps over n, replica aggregation and scaling-law fits.

A sweep is a :class:`SweepSpec`; :func:`run_sweep` turns it into a
:class:`SweepTable` with one row per ``(n, replicate)``.  Runs that hit their
cap stay in the table as censored rows (value = cap, a lower bound) and are
left out of fits rather than imputed.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import dynamics, exactchain
from .analysis import FixedPointKind, Phase, classify_phase, critical_point
from .model import DomainError, ModelParams, free_energy
from .rng import derive_seed

__all__ = [
    "SweepKind",
    "ScalingModel",
    "SweepSpec",
    "SweepRow",
    "SweepTable",
    "ScalingFit",
    "InsufficientData",
    "Budget",
    "QUICK",
    "FULL",
    "PhaseExperimentReport",
    "CANONICAL_HIGH",
    "CANONICAL_LOW",
    "CANONICAL_CRITICAL_CBAR",
    "run_sweep",
    "fit_scaling",
    "phase_experiment",
]

CANONICAL_HIGH = ModelParams(n=100, p=0.5, alpha1=0.5, alpha2=0.5)
CANONICAL_LOW = ModelParams(n=30, p=0.05, alpha1=6.0, alpha2=0.0)
CANONICAL_CRITICAL_CBAR = 0.55

MIN_FIT_REPLICAS = 20
DEFAULT_CAP = 10**9


class InsufficientData(ValueError):
    """Fewer than three usable points for a fit."""


class SweepKind(str, enum.Enum):
    MIXING = "Mixing"
    GAP = "Gap"
    BOTTLENECK = "Bottleneck"
    COUPLING = "Coupling"
    BURN_IN = "BurnIn"
    ESCAPE = "Escape"

    @property
    def stochastic(self) -> bool:
        return self in (SweepKind.COUPLING, SweepKind.BURN_IN, SweepKind.ESCAPE)


class ScalingModel(str, enum.Enum):
    POWER_LAW = "PowerLaw"
    N_LOG_N = "NLogN"
    EXPONENTIAL = "Exponential"


@dataclass(frozen=True)
class SweepSpec:
    kind: SweepKind
    params: ModelParams  # template; n is replaced per row
    n_values: tuple[int, ...]
    replicas: int = 1
    master_seed: int = 0
    caps: int | Mapping[int, int] = DEFAULT_CAP
    start_c: float = 1.0  # BurnIn start level fraction
    target: float | None = None  # BurnIn target override
    from_attractor: str = "lower"  # Escape well
    epsilon: float = 0.25  # Mixing threshold

    def __post_init__(self):
        object.__setattr__(self, "kind", SweepKind(self.kind))
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        ns = self.n_values
        if not ns:
            raise DomainError("n_values is empty")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise DomainError("n_values must be strictly increasing")
        if ns[0] < 1:
            raise DomainError("n values must be >= 1")
        if self.replicas < 1:
            raise DomainError("replicas must be >= 1")
        for n in ns:
            if self.cap_for(n) < 1:
                raise DomainError("caps must be >= 1")

    def cap_for(self, n: int) -> int:
        if isinstance(self.caps, Mapping):
            return int(self.caps.get(n, DEFAULT_CAP))
        return int(self.caps)

    def fittable(self) -> bool:
        return len(self.n_values) >= 3 and (not self.kind.stochastic or self.replicas >= MIN_FIT_REPLICAS)

    def as_dict(self) -> dict:
        caps = {str(k): v for k, v in self.caps.items()} if isinstance(self.caps, Mapping) else self.caps
        return {
            "kind": self.kind.value, "params": self.params.as_dict(), "n_values": list(self.n_values),
            "replicas": self.replicas, "master_seed": self.master_seed, "caps": caps,
            "start_c": self.start_c, "target": self.target, "from_attractor": self.from_attractor,
            "epsilon": self.epsilon,
        }


@dataclass(frozen=True)
class SweepRow:
    n: int
    replicate: int
    value: float | None  # cap (a lower bound) when censored, None on error
    censored: bool
    seed: int | None
    error: str | None = None


@dataclass
class SweepTable:
    spec: SweepSpec
    rows: list[SweepRow]
    wall_time: float = 0.0

    def summary(self) -> list[dict]:
        """Per-n aggregates; censored runs are counted and reported as a lower bound."""
        out = []
        for n in self.spec.n_values:
            rows = [r for r in self.rows if r.n == n and r.error is None]
            vals = np.array([r.value for r in rows], dtype=float)
            cens = np.array([r.censored for r in rows], dtype=bool)
            done = vals[~cens]
            out.append({
                "n": n,
                "runs": len(rows),
                "errors": sum(1 for r in self.rows if r.n == n and r.error is not None),
                "censored": int(cens.sum()),
                "mean": float(done.mean()) if done.size and not cens.any() else None,
                "mean_lower_bound": float(vals.mean()) if vals.size else None,
                "std_err": float(done.std(ddof=1) / math.sqrt(done.size)) if done.size > 1 and not cens.any() else None,
            })
        return out

    def fit_points(self) -> list[tuple[int, float | None, bool]]:
        """``(n, mean, censored)`` per n, ready for :func:`fit_scaling`."""
        pts = []
        for s in self.summary():
            bad = s["censored"] > 0 or s["mean"] is None
            pts.append((s["n"], s["mean_lower_bound"] if bad else s["mean"], bad))
        return pts

    def csv_rows(self) -> list[tuple]:
        return [(r.n, r.replicate, r.value, int(r.censored), r.seed, r.error or "") for r in self.rows]


@dataclass(frozen=True)
class ScalingFit:
    model: ScalingModel
    coefficient: float
    exponent_or_rate: float
    r_squared: float
    ratio_spread: float  # max/min of y over the model curve at the used points
    excluded: int  # censored or unusable points left out

    @property
    def warning(self) -> bool:
        return self.excluded > 0

    def as_dict(self) -> dict:
        return {"model": self.model.value, "coefficient": self.coefficient,
                "exponent_or_rate": self.exponent_or_rate, "r_squared": self.r_squared,
                "ratio_spread": self.ratio_spread, "excluded": self.excluded}


def _r_squared(y: np.ndarray, fitted: np.ndarray) -> float:
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return min(1.0, max(0.0, 1.0 - ss_res / ss_tot))


def fit_scaling(pairs: Sequence[tuple], model: ScalingModel | str) -> ScalingFit:
    """Least-squares scaling fit.

    ``pairs`` holds ``(n, y)`` or ``(n, y, censored)``.  Transformed coordinates:
    ``log y`` on ``log n`` (PowerLaw), ``y / (n log n)`` as a constant (NLogN),
    ``log y`` on ``n`` (Exponential).
    """
    model = ScalingModel(model)
    xs, ys, excluded = [], [], 0
    for item in pairs:
        n, y = item[0], item[1]
        censored = bool(item[2]) if len(item) > 2 else False
        usable = (not censored and y is not None and math.isfinite(y) and y > 0 and n > 0
                  and not (model is ScalingModel.N_LOG_N and n <= 1))
        if usable:
            xs.append(float(n))
            ys.append(float(y))
        else:
            excluded += 1
    if len(xs) < 3:
        raise InsufficientData(f"need at least 3 usable points, have {len(xs)}")
    x = np.array(xs)
    y = np.array(ys)
    if model is ScalingModel.N_LOG_N:
        scale = x * np.log(x)
        ratios = y / scale
        coef = float(ratios.mean())
        return ScalingFit(model, coef, 1.0, _r_squared(y, coef * scale),
                          float(ratios.max() / ratios.min()), excluded)
    u = np.log(x) if model is ScalingModel.POWER_LAW else x
    v = np.log(y)
    slope, intercept = np.polyfit(u, v, 1)
    fitted = intercept + slope * u
    resid_ratio = np.exp(v - fitted)
    return ScalingFit(model, float(math.exp(intercept)), float(slope), _r_squared(v, fitted),
                      float(resid_ratio.max() / resid_ratio.min()), excluded)


def _exact_row(kind: SweepKind, spec: SweepSpec, params: ModelParams, cap: int) -> SweepRow:
    n = params.n
    kernel = exactchain.build_kernel(params)
    dist = exactchain.stationary(params)
    if kind is SweepKind.GAP:
        return SweepRow(n, 0, exactchain.spectral_gap(kernel, dist).gap, False, None)
    if kind is SweepKind.BOTTLENECK:
        return SweepRow(n, 0, exactchain.bottleneck_ratio(kernel, dist).phi_star, False, None)
    try:
        rep = exactchain.mixing_time_by_squaring(kernel, dist, spec.epsilon, cap=cap)
    except exactchain.CapExceeded:
        return SweepRow(n, 0, float(cap), True, None)
    return SweepRow(n, 0, float(rep.t_mix), False, None)


def _stochastic_rows(spec: SweepSpec, params: ModelParams, cap: int) -> list[SweepRow]:
    n = params.n
    seeds = [derive_seed(spec.master_seed, n, r) for r in range(spec.replicas)]
    if spec.kind is SweepKind.COUPLING:
        times = [run.tau for run in dynamics.coupling_times(params, seeds, cap)]
    elif spec.kind is SweepKind.BURN_IN:
        times = [run.tau0 for run in dynamics.burn_in_times(params, spec.start_c, seeds, cap, spec.target)]
    else:
        times = [run.time for run in dynamics.mode_escape_times(params, spec.from_attractor, seeds, cap)]
    return [SweepRow(n, r, float(cap) if t is None else float(t), t is None, sd)
            for r, (t, sd) in enumerate(zip(times, seeds))]


def run_sweep(spec: SweepSpec) -> SweepTable:
    """Evaluate every ``(n, replicate)`` of ``spec``; per-run failures land in the row."""
    start = time.perf_counter()
    rows: list[SweepRow] = []
    for n in spec.n_values:
        params = spec.params.with_n(n)
        cap = spec.cap_for(n)
        try:
            if spec.kind.stochastic:
                rows.extend(_stochastic_rows(spec, params, cap))
            else:
                # deterministic: replicas would all agree, so compute once and repeat
                row = _exact_row(spec.kind, spec, params, cap)
                rows.extend(replace(row, replicate=r) for r in range(spec.replicas))
        except (DomainError, ArithmeticError, RuntimeError, AssertionError) as exc:
            rows.extend(SweepRow(n, r, None, False, None, f"{type(exc).__name__}: {exc}")
                        for r in range(spec.replicas))
    return SweepTable(spec, rows, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# phase experiments


@dataclass(frozen=True)
class Budget:
    high_n: tuple[int, ...]
    low_n: tuple[int, ...]
    escape_n: tuple[int, ...]
    critical_n: tuple[int, ...]
    replicas: int
    escape_replicas: int
    cap: int = DEFAULT_CAP


QUICK = Budget(high_n=(100, 200, 400), low_n=tuple(range(30, 121, 10)), escape_n=(30, 40, 50, 60),
               critical_n=(250, 500, 1000), replicas=30, escape_replicas=30)
FULL = Budget(high_n=(100, 200, 400, 800), low_n=tuple(range(30, 121, 10)), escape_n=(30, 40, 50, 60),
              critical_n=(250, 500, 1000, 2000), replicas=100, escape_replicas=100)


@dataclass
class PhaseExperimentReport:
    phase: str
    params: ModelParams
    tables: dict[str, SweepTable] = field(default_factory=dict)
    fits: dict[str, ScalingFit] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    values: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def as_dict(self) -> dict:
        return {
            "phase": self.phase,
            "params": self.params.as_dict(),
            "fits": {k: v.as_dict() for k, v in self.fits.items()},
            "summaries": {k: t.summary() for k, t in self.tables.items()},
            "checks": dict(self.checks),
            "values": dict(self.values),
            "passed": self.passed,
        }


_EXPECTED_PHASE = {"High": Phase.HIGH_TEMPERATURE, "Low": Phase.LOW_TEMPERATURE, "Critical": Phase.DEGENERATE}


def _normalize_phase(phase: str) -> str:
    key = phase.strip().lower()
    for name in _EXPECTED_PHASE:
        if key in (name.lower(), name.lower() + "temperature"):
            return name
    raise DomainError(f"unknown phase {phase!r}; expected High, Low or Critical")


def _high(params: ModelParams, budget: Budget, seed: int) -> PhaseExperimentReport:
    rep = PhaseExperimentReport("High", params)
    mix = run_sweep(SweepSpec(SweepKind.MIXING, params, budget.high_n, caps=budget.cap))
    coup = run_sweep(SweepSpec(SweepKind.COUPLING, params, budget.high_n, budget.replicas, seed, budget.cap))
    rep.tables.update(mixing=mix, coupling=coup)
    rep.fits["mixing"] = fit_scaling(mix.fit_points(), ScalingModel.N_LOG_N)
    rep.fits["coupling"] = fit_scaling(coup.fit_points(), ScalingModel.N_LOG_N)
    # coupling means should follow t_mix up to a bounded factor
    tm = np.array([p[1] for p in mix.fit_points()])
    cm = np.array([p[1] for p in coup.fit_points()])
    track = cm / tm
    rep.values["coupling_to_mixing_spread"] = float(track.max() / track.min())
    rep.checks["mixing_ratio_spread_below_1.5"] = rep.fits["mixing"].ratio_spread < 1.5
    rep.checks["coupling_tracks_mixing_within_3"] = rep.values["coupling_to_mixing_spread"] < 3.0
    return rep


def _low(params: ModelParams, budget: Budget, seed: int) -> PhaseExperimentReport:
    rep = PhaseExperimentReport("Low", params)
    gap = run_sweep(SweepSpec(SweepKind.GAP, params, budget.low_n))
    bot = run_sweep(SweepSpec(SweepKind.BOTTLENECK, params, budget.low_n))
    mix = run_sweep(SweepSpec(SweepKind.MIXING, params, budget.low_n, caps=budget.cap))
    esc = run_sweep(SweepSpec(SweepKind.ESCAPE, params, budget.escape_n, budget.escape_replicas, seed,
                              budget.cap, from_attractor="lower"))
    rep.tables.update(gap=gap, bottleneck=bot, mixing=mix, escape=esc)
    rep.fits["inverse_gap"] = fit_scaling([(n, 1.0 / y, c) for n, y, c in gap.fit_points()],
                                          ScalingModel.EXPONENTIAL)
    rep.fits["inverse_bottleneck"] = fit_scaling([(n, 1.0 / y, c) for n, y, c in bot.fit_points()],
                                                 ScalingModel.EXPONENTIAL)
    rep.fits["escape"] = fit_scaling(esc.fit_points(), ScalingModel.EXPONENTIAL)
    bound_ok = True
    for (n, t, cens), (_, phi, _) in zip(mix.fit_points(), bot.fit_points()):
        if not cens:
            bound_ok &= t >= 0.25 / phi
    # predicted bottleneck rate: depth of the shallower well above the saddle
    report = classify_phase(params)
    wells = [float(free_energy(params, fp.c)) for fp in report.attractors]
    saddle = max(float(free_energy(params, fp.c)) for fp in report.fixed_points
                 if fp.kind is FixedPointKind.REPELLOR)
    predicted = min(wells) - saddle
    rep.values["predicted_bottleneck_rate"] = predicted
    rate = rep.fits["inverse_bottleneck"].exponent_or_rate
    for key in ("inverse_gap", "inverse_bottleneck", "escape"):
        f = rep.fits[key]
        rep.checks[f"{key}_positive_rate_r2_0.9"] = f.exponent_or_rate > 0 and f.r_squared >= 0.9
    rep.checks["mixing_above_bottleneck_bound"] = bool(bound_ok)
    rep.checks["bottleneck_rate_within_25pct"] = abs(rate - predicted) <= 0.25 * predicted
    return rep


def _critical(params: ModelParams, budget: Budget, seed: int) -> PhaseExperimentReport:
    rep = PhaseExperimentReport("Critical", params)
    crit = run_sweep(SweepSpec(SweepKind.BURN_IN, params, budget.critical_n, budget.replicas, seed, budget.cap))
    ctrl = run_sweep(SweepSpec(SweepKind.BURN_IN, CANONICAL_HIGH, budget.critical_n, budget.replicas, seed,
                               budget.cap))
    rep.tables.update(burn_in=crit, control=ctrl)
    rep.fits["burn_in"] = fit_scaling(crit.fit_points(), ScalingModel.POWER_LAW)
    rep.fits["control"] = fit_scaling(ctrl.fit_points(), ScalingModel.POWER_LAW)
    b = rep.fits["burn_in"]
    rep.checks["exponent_in_1.3_1.7"] = 1.3 <= b.exponent_or_rate <= 1.7 and b.r_squared >= 0.9
    rep.checks["control_exponent_at_most_1.2"] = rep.fits["control"].exponent_or_rate <= 1.2
    return rep


def phase_experiment(phase: str, budget: Budget | str = "quick", params: ModelParams | None = None,
                     master_seed: int = 0) -> PhaseExperimentReport:
    """Scaling experiment for one regime: ``High``, ``Low`` or ``Critical``.

    Without ``params`` the canonical set for the regime is used.  User params
    must classify into the requested regime.
    """
    name = _normalize_phase(phase)
    if isinstance(budget, str):
        presets = {"quick": QUICK, "full": FULL}
        if budget.lower() not in presets:
            raise DomainError(f"unknown budget {budget!r}")
        budget = presets[budget.lower()]
    if params is None:
        params = {"High": CANONICAL_HIGH, "Low": CANONICAL_LOW,
                  "Critical": critical_point(CANONICAL_CRITICAL_CBAR).params(100)}[name]
    got = classify_phase(params).phase
    if got is not _EXPECTED_PHASE[name]:
        raise DomainError(f"params classify as {got.value}, not the requested {name} regime")
    runner = {"High": _high, "Low": _low, "Critical": _critical}[name]
    return runner(params, budget, master_seed)
