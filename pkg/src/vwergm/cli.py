"""Command-line front end.

Data go to ``--output`` (or stdout); diagnostics and, when writing to stdout,
the run manifest go to stderr.  Exit codes: 0 success, 1 usage error,
2 numerical or verification failure, 3 cap reached.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import secrets
import sys
import time
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__, analysis, dynamics, exactchain, experiments
from .model import DomainError, ModelParams, asymptotic_up_prob, free_energy

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CAP = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# serialization


def fmt_float(x: float) -> str:
    return "%.17g" % x


def _csv_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def to_csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_csv_cell(v) for v in row) + "\n")
    return buf.getvalue()


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def to_json(obj: Any) -> str:
    # json writes floats with repr, the shortest string that round-trips
    return json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# options


def _grid(text: str) -> list[float]:
    """``lo:hi:count`` (inclusive linspace) or a comma-separated list."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text)
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {text!r} must be lo:hi:count")
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise UsageError("grid count must be >= 1")
        return np.linspace(lo, hi, count).tolist()
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


S = argparse.SUPPRESS

COMMON_DEFAULTS = {"output": None, "config": None, "threads": None}

DEFAULTS: dict[str, dict[str, Any]] = {
    "analyze": {"n": 1},
    "critical": {"tol": 1e-9},
    "exact": {"epsilon": 0.25, "cap": exactchain.DEFAULT_MIXING_CAP, "starts": "extremes"},
    "simulate": {"start": "ones", "steps": 0, "stride": 1, "seed": None},
    "couple": {"replicas": 1, "cap": 10**7, "seed": None, "check_every": 0},
    "sweep": {"kind": None, "n_values": None, "replicas": 1, "seed": None, "cap": experiments.DEFAULT_CAP,
              "model": None, "start_c": 1.0, "from_attractor": "lower", "epsilon": 0.25, "fit_output": None,
              "phase": None, "budget": "quick", "cbar": None, "n": 1, "p": None, "a1": None, "a2": None},
    "phase-diagram": {"n": 1, "boundary": False},
    "curve": {"what": "lambda", "samples": 101, "n": 1},
    "oracle": {"t_max": 200},
}


def _add_params(sp: argparse.ArgumentParser, need_n: bool = False) -> None:
    sp.add_argument("--n", type=int, default=S, help="vertex count" + (" (required)" if need_n else ""))
    sp.add_argument("--p", type=float, default=S, help="spin-1 prior probability in (0, 1)")
    sp.add_argument("--a1", "--alpha1", dest="a1", type=float, default=S, help="edge weight (>= 0)")
    sp.add_argument("--a2", "--alpha2", dest="a2", type=float, default=S, help="triangle weight (>= 0)")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=S, help="JSON file whose keys mirror the flags; flags win")
    common.add_argument("-o", "--output", default=S, help="data file (default: stdout)")
    common.add_argument("--threads", type=int, default=S, help="worker threads (default: all cores)")

    parser = _Parser(prog="vwergm", description="Glauber dynamics on vertex-weighted random graphs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("analyze", parents=[common], help="fixed points and phase (JSON)")
    _add_params(sp)

    sp = sub.add_parser("critical", parents=[common], help="critical point and its identities (JSON)")
    sp.add_argument("--cbar", type=float, default=S, help="inflection location in [1/2, 2/3]")
    sp.add_argument("--tol", type=float, default=S)

    sp = sub.add_parser("exact", parents=[common], help="projected-chain gap, t_mix, bottleneck (JSON)")
    _add_params(sp, need_n=True)
    sp.add_argument("--epsilon", type=float, default=S)
    sp.add_argument("--cap", type=int, default=S, help="largest t_mix searched")
    sp.add_argument("--starts", choices=["extremes", "all"], default=S)

    sp = sub.add_parser("simulate", parents=[common], help="magnetization trajectory (CSV)")
    _add_params(sp, need_n=True)
    sp.add_argument("--start", default=S, help="ones, zeros or a level k")
    sp.add_argument("--steps", type=int, default=S)
    sp.add_argument("--stride", type=int, default=S)
    sp.add_argument("--seed", type=int, default=S)

    sp = sub.add_parser("couple", parents=[common], help="grand-coupling coalescence times (CSV)")
    _add_params(sp, need_n=True)
    sp.add_argument("--replicas", type=int, default=S)
    sp.add_argument("--cap", type=int, default=S)
    sp.add_argument("--seed", type=int, default=S)
    sp.add_argument("--check-every", dest="check_every", type=int, default=S,
                    help="recheck order and distance every this many steps (0: never)")

    sp = sub.add_parser("sweep", parents=[common], help="scaling sweep (CSV table + fit JSON)")
    _add_params(sp)
    sp.add_argument("--kind", choices=[k.value for k in experiments.SweepKind], default=S)
    sp.add_argument("--n-values", dest="n_values", default=S, help="comma-separated, increasing")
    sp.add_argument("--replicas", type=int, default=S)
    sp.add_argument("--seed", type=int, default=S)
    sp.add_argument("--cap", type=int, default=S)
    sp.add_argument("--model", choices=[m.value for m in experiments.ScalingModel], default=S)
    sp.add_argument("--start-c", dest="start_c", type=float, default=S)
    sp.add_argument("--from-attractor", dest="from_attractor", choices=["lower", "upper"], default=S)
    sp.add_argument("--epsilon", type=float, default=S)
    sp.add_argument("--cbar", type=float, default=S, help="use the critical point at this inflection")
    sp.add_argument("--fit-output", dest="fit_output", default=S, help="fit JSON file")
    sp.add_argument("--phase", choices=["High", "Low", "Critical"], default=S,
                    help="run the composite regime experiment instead (JSON)")
    sp.add_argument("--budget", choices=["quick", "full"], default=S)

    sp = sub.add_parser("phase-diagram", parents=[common], help="phase over a (p, alpha1) grid (CSV)")
    sp.add_argument("--a2", "--alpha2", dest="a2", type=float, default=S)
    sp.add_argument("--p-grid", dest="p_grid", default=S, help="lo:hi:count or list")
    sp.add_argument("--a1-grid", dest="a1_grid", default=S, help="lo:hi:count or list (not with --boundary)")
    sp.add_argument("--n", type=int, default=S)
    sp.add_argument("--boundary", action="store_true", default=S,
                    help="emit the two-maximiser alpha1 interval per p instead")

    sp = sub.add_parser("curve", parents=[common], help="lambda or free-energy samples (CSV)")
    _add_params(sp)
    sp.add_argument("--what", choices=["lambda", "phi", "lambda_minus_identity"], default=S)
    sp.add_argument("--samples", type=int, default=S)

    sp = sub.add_parser("oracle", parents=[common], help="full-chain brute-force check, n <= 12 (JSON)")
    _add_params(sp, need_n=True)
    sp.add_argument("--t-max", dest="t_max", type=int, default=S)
    return parser


def _merge_options(command: str, given: dict) -> dict:
    opts = dict(COMMON_DEFAULTS)
    opts.update(DEFAULTS.get(command, {}))
    cfg_path = given.get("config")
    if cfg_path:
        try:
            cfg = json.loads(Path(cfg_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {cfg_path}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        aliases = {"alpha1": "a1", "alpha2": "a2"}
        for k, v in cfg.items():
            key = aliases.get(k, k).replace("-", "_")
            opts[key] = v
    opts.update(given)
    return opts


def _params(opts: dict, need_n: bool = True) -> ModelParams:
    missing = [k for k in (("n",) if need_n else ()) + ("p", "a1", "a2") if opts.get(k) is None]
    if missing:
        raise UsageError("missing parameter(s): " + ", ".join("--" + m for m in missing))
    try:
        return ModelParams(int(opts.get("n", 1)), float(opts["p"]), float(opts["a1"]), float(opts["a2"]))
    except (DomainError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _seed(opts: dict, manifest: dict) -> int:
    seed = opts.get("seed")
    if seed is None:
        seed = secrets.randbits(63)
        print(f"no --seed given; using seed {seed}", file=sys.stderr)
    manifest["seeds"] = {"master": int(seed)}
    return int(seed)


# ---------------------------------------------------------------------------
# subcommands; each returns (data text, exit code or None)


def cmd_analyze(opts, manifest):
    params = _params(opts, need_n=False)
    manifest["params"] = params.as_dict()
    report = analysis.classify_phase(params)
    return to_json({"params": params.as_dict(), **report.as_dict()}), None


def cmd_critical(opts, manifest):
    if opts.get("cbar") is None:
        raise UsageError("missing --cbar")
    try:
        cp = analysis.critical_point(float(opts["cbar"]))
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    manifest["params"] = cp.as_dict()
    tol = float(opts["tol"])
    try:
        report = analysis.verify_criticality(cp, tol)
        verified, failure = True, None
    except analysis.VerificationError as exc:
        report, verified, failure = None, False, str(exc)
    out = {"critical_point": cp.as_dict(), "tolerance": tol, "verified": verified}
    if report is not None:
        out["residuals"] = report.as_dict()
    if failure:
        out["failure"] = failure
    text = to_json(out)
    return text, (None if verified else EXIT_NUMERIC)


def cmd_exact(opts, manifest):
    params = _params(opts)
    manifest["params"] = params.as_dict()
    manifest["caps"] = {"t_mix": int(opts["cap"])}
    kernel = exactchain.build_kernel(params)
    dist = exactchain.stationary(params)
    db = exactchain.check_detailed_balance(kernel, dist)
    gap = exactchain.spectral_gap(kernel, dist)
    neck = exactchain.bottleneck_ratio(kernel, dist)
    out = {
        "params": params.as_dict(),
        "detailed_balance_error": db,
        "spectral_gap": gap.gap,
        "relaxation_time": gap.relaxation_time,
        "bottleneck": {"phi_star": neck.phi_star, "log_phi_star": neck.log_phi_star,
                       "cut": neck.argmin_cut, "side": neck.side,
                       "mixing_lower_bound": neck.mixing_lower_bound},
        "epsilon": float(opts["epsilon"]),
    }
    code = None
    try:
        mix = exactchain.mixing_time_by_squaring(kernel, dist, float(opts["epsilon"]),
                                                 exactchain.Starts(opts["starts"]), int(opts["cap"]))
        out["t_mix"] = mix.t_mix
        out["worst_start"] = mix.worst_start
    except exactchain.CapExceeded as exc:
        out["t_mix"] = None
        out["t_mix_note"] = str(exc)
        code = EXIT_CAP
    return to_json(out), code


def _start(text):
    if isinstance(text, int):
        return text
    t = str(text)
    return int(t) if t.lstrip("-").isdigit() else t


def cmd_simulate(opts, manifest):
    params = _params(opts)
    seed = _seed(opts, manifest)
    manifest["params"] = params.as_dict()
    traj = dynamics.run(params, _start(opts["start"]), int(opts["steps"]), int(opts["stride"]), seed)
    rows = zip(traj.steps.tolist(), traj.magnetizations.tolist())
    return to_csv(["step", "c"], rows), None


def cmd_couple(opts, manifest):
    params = _params(opts)
    master = _seed(opts, manifest)
    cap = int(opts["cap"])
    manifest["params"] = params.as_dict()
    manifest["caps"] = {"coupling": cap}
    seeds = [dynamics.rng.derive_seed(master, params.n, r) for r in range(int(opts["replicas"]))]
    manifest["seeds"]["replicas"] = seeds
    runs = dynamics.coupling_times(params, seeds, cap, int(opts["check_every"]))
    rows = [(r, run.seed, run.tau, int(run.timed_out)) for r, run in enumerate(runs)]
    text = to_csv(["replicate", "seed", "tau", "timed_out"], rows)
    return text, (EXIT_CAP if any(run.timed_out for run in runs) else None)


def cmd_sweep(opts, manifest):
    if opts.get("phase"):
        params = None
        if opts.get("p") is not None or opts.get("cbar") is not None:
            params = _sweep_params(opts)
        seed = _seed(opts, manifest)
        report = experiments.phase_experiment(opts["phase"], opts["budget"], params, seed)
        manifest["params"] = report.params.as_dict()
        return to_json(report.as_dict()), (None if report.passed else EXIT_NUMERIC)
    if not opts.get("kind") or not opts.get("n_values"):
        raise UsageError("sweep needs --kind and --n-values (or --phase)")
    params = _sweep_params(opts)
    kind = experiments.SweepKind(opts["kind"])
    seed = _seed(opts, manifest) if kind.stochastic else int(opts.get("seed") or 0)
    try:
        spec = experiments.SweepSpec(kind, params, tuple(_int_list(opts["n_values"])), int(opts["replicas"]),
                                     seed, int(opts["cap"]), float(opts["start_c"]), None,
                                     opts["from_attractor"], float(opts["epsilon"]))
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    manifest["params"] = params.as_dict()
    manifest["sweep"] = spec.as_dict()
    table = experiments.run_sweep(spec)
    text = to_csv(["n", "replicate", "value", "censored", "seed", "error"], table.csv_rows())
    fit_doc: dict = {"summary": table.summary()}
    if opts.get("model"):
        try:
            fit_doc["fit"] = experiments.fit_scaling(table.fit_points(), opts["model"]).as_dict()
        except experiments.InsufficientData as exc:
            fit_doc["fit"] = None
            fit_doc["fit_error"] = str(exc)
    manifest["_fit_json"] = to_json(fit_doc)
    censored = any(r.censored for r in table.rows)
    errored = any(r.error for r in table.rows)
    return text, (EXIT_NUMERIC if errored else EXIT_CAP if censored else None)


def _sweep_params(opts) -> ModelParams:
    if opts.get("cbar") is not None:
        try:
            return analysis.critical_point(float(opts["cbar"])).params(int(opts.get("n") or 1))
        except DomainError as exc:
            raise UsageError(str(exc)) from exc
    return _params(opts, need_n=False)


def cmd_phase_diagram(opts, manifest):
    if opts.get("a2") is None or opts.get("p_grid") is None:
        raise UsageError("phase-diagram needs --a2 and --p-grid")
    a2 = float(opts["a2"])
    p_grid = _grid(opts["p_grid"])
    manifest["params"] = {"alpha2": a2, "p_grid": p_grid}
    try:
        if opts.get("boundary"):
            rows = [analysis.v_region_boundary(a2, p) for p in p_grid]
            return to_csv(["p", "alpha1_lower", "alpha1_upper", "valid"],
                          [(b.p, b.alpha1_lower, b.alpha1_upper, b.valid) for b in rows]), None
        if opts.get("a1_grid") is None:
            raise UsageError("phase-diagram needs --a1-grid (or --boundary)")
        a1_grid = _grid(opts["a1_grid"])
        manifest["params"]["alpha1_grid"] = a1_grid
        rows = analysis.phase_diagram_scan(a2, p_grid, a1_grid, int(opts["n"]))
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    keys = ["p", "alpha1", "alpha2", "phase", "n_fixed_points"]
    return to_csv(keys, [[r[k] for k in keys] for r in rows]), None


def curve_rows(what: str, params: ModelParams, samples: int) -> list[tuple[float, float]]:
    """Uniform grid on [0, 1] including both endpoints."""
    if samples < 2:
        raise DomainError("samples must be >= 2")
    grid = np.linspace(0.0, 1.0, samples)
    if what == "phi":
        vals = np.asarray(free_energy(params, grid), dtype=float)
    else:
        vals = np.asarray(asymptotic_up_prob(params, grid), dtype=float)
        if what == "lambda_minus_identity":
            vals = vals - grid
        elif what != "lambda":
            raise DomainError(f"unknown curve {what!r}")
    return list(zip(grid.tolist(), vals.tolist()))


def cmd_curve(opts, manifest):
    params = _params(opts, need_n=False)
    manifest["params"] = params.as_dict()
    try:
        rows = curve_rows(opts["what"], params, int(opts["samples"]))
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    return to_csv(["c", "value"], rows), None


def cmd_oracle(opts, manifest):
    params = _params(opts)
    if params.n > exactchain.ORACLE_MAX_N:
        raise UsageError(f"oracle needs n <= {exactchain.ORACLE_MAX_N}")
    manifest["params"] = params.as_dict()
    report = exactchain.full_chain_oracle(params, t_max=int(opts["t_max"]))
    return to_json({"params": params.as_dict(), **report.as_dict()}), (None if report.ok else EXIT_NUMERIC)


COMMANDS: dict[str, Callable] = {
    "analyze": cmd_analyze,
    "critical": cmd_critical,
    "exact": cmd_exact,
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "sweep": cmd_sweep,
    "phase-diagram": cmd_phase_diagram,
    "curve": cmd_curve,
    "oracle": cmd_oracle,
}


# ---------------------------------------------------------------------------


def _write(path: str | None, text: str) -> str:
    data = text.encode("utf-8")
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    given = {k: v for k, v in vars(ns).items() if k != "command"}
    command = ns.command
    started = time.time()
    manifest: dict[str, Any] = {"command_line": ["vwergm", *argv], "command": command,
                                "tool_version": __version__}
    try:
        opts = _merge_options(command, given)
        if opts.get("threads") is not None:
            dynamics.set_threads(int(opts["threads"]))
        text, code = COMMANDS[command](opts, manifest)
    except UsageError as exc:
        print(f"vwergm {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (analysis.VerificationError, exactchain.InconsistencyError, ArithmeticError,
            FloatingPointError, AssertionError) as exc:
        print(f"vwergm {command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as exc:
        print(f"vwergm {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except exactchain.CapExceeded as exc:
        print(f"vwergm {command}: {exc}", file=sys.stderr)
        return EXIT_CAP
    except dynamics.BudgetExceeded as exc:
        print(f"vwergm {command}: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out_path = opts.get("output")
    outputs = {out_path or "<stdout>": _write(out_path, text)}
    fit_json = manifest.pop("_fit_json", None)
    if fit_json is not None:
        fit_path = opts.get("fit_output") or (f"{out_path}.fit.json" if out_path else None)
        if fit_path:
            outputs[fit_path] = _write(fit_path, fit_json)
        else:
            sys.stderr.write(fit_json)
    manifest["wall_time_s"] = time.time() - started
    manifest["outputs_sha256"] = outputs
    manifest_text = to_json(manifest)
    if out_path:
        Path(f"{out_path}.manifest.json").write_text(manifest_text)
    else:
        sys.stderr.write(manifest_text)
    if code == EXIT_CAP:
        print(f"vwergm {command}: cap reached in at least one run", file=sys.stderr)
    return code or EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
