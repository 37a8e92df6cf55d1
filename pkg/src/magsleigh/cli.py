"""Command-line front end: ``magsleigh simulate | plan | sweep | portrait | validate``.

Every run writes delimited data files and a ``summary.json`` into ``--out``.
Parameters come from flags and an optional flat ``key = value`` config file;
flags win. Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .numerics import IntegratorConfig, NumericalError
from .optimal_control import hopt_planar
from .planner import TurnaroundProblem, default_sweep_grid, phase_portrait, plan, sweep
from .sleigh import (
    PiecewiseConstantField,
    SleighParams,
    check_coupling,
    constraint_residual,
    field_value,
    full_from_reduced,
    full_to_reduced,
    initial_reduced_state,
    reconstruct_pose,
    simulate_full,
    simulate_reduced,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    pass


# Formatting ---------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.17g}"


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        f = float(value)
        return f if math.isfinite(f) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2) + "\n")


@dataclass
class RunSummary:
    command: str
    parameters: dict
    results: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    def as_dict(self, timing: bool = True) -> dict:
        out = {
            "command": self.command,
            "version": __version__,
            "parameters": self.parameters,
            "results": self.results,
            "files": self.files,
        }
        if timing:
            out["wall_clock_s"] = self.wall_clock_s
        return out


# Config -------------------------------------------------------------------------


def load_config_file(path: str) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment. Keys use ``_`` or ``-``."""
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def parse_float(name: str, value) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected a number, got {value!r}") from exc
    if not math.isfinite(x):
        raise ConfigError(f"{name}: must be finite, got {value!r}")
    return x


def parse_int(name: str, value) -> int:
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected an integer, got {value!r}") from exc


def parse_tuple(name: str, value, n: int) -> tuple[float, ...]:
    if isinstance(value, (tuple, list)):
        parts = list(value)
    else:
        parts = [p for p in str(value).replace(" ", "").split(",") if p]
    if len(parts) != n:
        raise ConfigError(f"{name}: expected {n} comma-separated numbers, got {value!r}")
    return tuple(_parse_expr(name, p) for p in parts)


def _parse_expr(name: str, token) -> float:
    # Allow "pi" and "-pi/2" style range bounds.
    if isinstance(token, (int, float)):
        return float(token)
    t = token.lower().replace("pi", repr(math.pi))
    try:
        value = float(eval(t, {"__builtins__": {}}, {}))  # noqa: S307 - digits and operators only
    except Exception as exc:
        raise ConfigError(f"{name}: cannot parse {token!r}") from exc
    if not all(ch in "0123456789.eE+-*/() " for ch in t):
        raise ConfigError(f"{name}: cannot parse {token!r}")
    return value


def parse_bool(name: str, value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{name}: expected a boolean, got {value!r}")


class Settings:
    """Merged view of flags (when given) over config-file values over defaults."""

    def __init__(self, args: argparse.Namespace, file_values: dict[str, str]):
        self.args = args
        self.file = file_values
        self.used: dict[str, object] = {}

    def get(self, key: str, default, parse):
        flag = getattr(self.args, key, None)
        if flag is not None:
            value = flag
        elif key in self.file:
            value = self.file[key]
        else:
            value = default
        value = parse(key, value) if value is not None else None
        self.used[key] = value
        return value


def _common(settings: Settings):
    c = settings.get("c", 1.0, parse_float)
    try:
        check_coupling(c)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tol = settings.get("tol", 1e-11, parse_float)
    if not tol > 0:
        raise ConfigError("tol must be positive")
    out = Path(settings.get("out", "out", lambda k, v: str(v)))
    seed = settings.get("seed", 0, parse_int)
    return c, tol, out, seed


def _positive(name: str, value: float) -> float:
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


# Commands -------------------------------------------------------------------------


def read_schedule(path: str) -> PiecewiseConstantField:
    try:
        header, data = read_csv(Path(path))
    except (OSError, ValueError, StopIteration) as exc:
        raise ConfigError(f"cannot read schedule {path}: {exc}") from exc
    cols = [h.strip() for h in header]
    if cols[:2] != ["t", "B"]:
        raise ConfigError(f"schedule {path} must have header 't,B'")
    try:
        return PiecewiseConstantField(data[:, 0], data[:, 1])
    except ValueError as exc:
        raise ConfigError(f"schedule {path}: {exc}") from exc


def cmd_simulate(settings: Settings) -> RunSummary:
    c, tol, out, seed = _common(settings)
    T = _positive("T", settings.get("T", 50.0, parse_float))
    E0 = settings.get("E0", 0.5, parse_float)
    if not E0 >= 0:
        raise ConfigError("E0 must be non-negative")
    alpha0 = settings.get("alpha0", 0.0, parse_float)
    pose0 = settings.get("pose0", (0.0, 0.0, 0.0), lambda k, v: parse_tuple(k, v, 3))
    level = settings.get("level", "reduced", lambda k, v: str(v))
    if level not in ("reduced", "full"):
        raise ConfigError(f"level must be 'reduced' or 'full', got {level!r}")
    samples = settings.get("samples", 1001, parse_int)
    if samples < 2:
        raise ConfigError("samples must be at least 2")
    B_flag = settings.get("B", None, parse_float)
    schedule_spec = settings.get("schedule", None, lambda k, v: str(v))
    if (B_flag is None) == (schedule_spec is None):
        raise ConfigError("give exactly one of --B or --schedule")
    if schedule_spec is None:
        B = B_flag
    elif schedule_spec == "random":
        B = PiecewiseConstantField.random(np.random.default_rng(seed), T)
    else:
        B = read_schedule(schedule_spec)

    cfg = IntegratorConfig(rel_tol=tol, abs_tol=tol)
    times = np.linspace(0.0, T, samples)
    state0 = initial_reduced_state(c, E0, alpha0)
    results: dict = {}
    if level == "reduced":
        reduced = simulate_reduced(B, c, state0, T, cfg, times)
        path = reconstruct_pose(reduced, pose0, cfg)
        x, y, theta = path.states[:, 0], path.states[:, 1], path.states[:, 2]
        v, omega = reduced.states[:, 0], reduced.states[:, 1]
        E = 0.5 * (v**2 / c + omega**2)
    else:
        params = SleighParams.reference(c)
        norm = params.normalization
        pose_d, vel_d = full_from_reduced(pose0, state0, params)
        full = simulate_full(_dimensional_field(B, norm), params, pose_d, vel_d, T * norm.t, cfg, times * norm.t)
        vw = full_to_reduced(full.states, params)
        x, y = full.states[:, 0] / norm.length, full.states[:, 1] / norm.length
        theta = full.states[:, 2]
        v, omega = vw[:, 0], vw[:, 1]
        # Dimensional kinetic energy over (I + m a^2) Omega0^2 is the dimensionless energy.
        E = 0.5 * (v**2 / c + omega**2)
        results["max_constraint_residual"] = float(np.max(constraint_residual(full.states)))
    B_col = field_value(B, times)
    drift = np.max(np.abs(E - E[0]))
    results["energy_initial"] = float(E[0])
    results["energy_drift_abs"] = float(drift)
    results["energy_drift_rel"] = float(drift / E[0]) if E[0] > 0 else float(drift)
    out.mkdir(parents=True, exist_ok=True)
    name = "simulate.csv"
    write_csv(out / name, ["t", "x", "y", "theta", "v", "omega", "B", "E"],
              zip(times, x, y, theta, v, omega, B_col, E))
    return RunSummary("simulate", dict(settings.used), results, [name])


def _dimensional_field(B, norm):
    if isinstance(B, PiecewiseConstantField):
        return PiecewiseConstantField(B.times * norm.t, B.values * norm.B)
    return float(B) * norm.B


def cmd_plan(settings: Settings) -> RunSummary:
    c, tol, out, _ = _common(settings)
    T = _positive("T", settings.get("T", 2.0, parse_float))
    pose0 = settings.get("pose0", (0.0, 0.0, 0.0), lambda k, v: parse_tuple(k, v, 3))
    samples = settings.get("samples", 401, parse_int)
    if samples < 2:
        raise ConfigError("samples must be at least 2")
    try:
        problem = TurnaroundProblem(T, c)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    res = plan(problem, pose0, IntegratorConfig(rel_tol=min(tol, 1e-12), abs_tol=min(tol, 1e-12)), samples)
    out.mkdir(parents=True, exist_ok=True)
    alpha, B = res.planar.states[:, 0], res.planar.states[:, 1]
    write_csv(out / "plan_planar.csv", ["t", "alpha", "B", "H_opt"],
              zip(res.times, alpha, B, hopt_planar(alpha, B, c)))
    p = res.pose.states
    write_csv(out / "plan_spatial.csv", ["t", "x", "y", "theta"], zip(res.times, p[:, 0], p[:, 1], p[:, 2]))
    results = {
        "B0": res.B0,
        "J": res.cost,
        "J_time_domain": res.cost_time_domain,
        "max_B": res.max_B,
        "min_B": res.min_B,
        "boundary_error": res.boundary_error,
        "hopt_drift": res.hopt_drift,
        "time_mismatch": res.time_mismatch,
        **{k: v for k, v in res.diagnostics.items()},
    }
    return RunSummary("plan", dict(settings.used), results, ["plan_planar.csv", "plan_spatial.csv"])


def cmd_sweep(settings: Settings) -> RunSummary:
    c, _, out, _ = _common(settings)
    t_min = _positive("t_min", settings.get("t_min", 10**-1.5, parse_float))
    t_max = _positive("t_max", settings.get("t_max", 10**2.5, parse_float))
    points = settings.get("points", 60, parse_int)
    log = settings.get("log", True, parse_bool)
    workers = settings.get("workers", 1, parse_int)
    try:
        grid = default_sweep_grid(points, t_min, t_max, log)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = sweep(grid, c, workers=workers)
    out.mkdir(parents=True, exist_ok=True)
    name = "sweep.csv"
    write_csv(
        out / name,
        ["T", "B0", "J", "maxB", "log_B0", "J_excess", "maxB_excess", "error"],
        [(r.T, r.B0, r.J, r.max_B, r.log_B0, r.J_excess, r.max_B_excess, r.error) for r in rows],
    )
    ok = [r for r in rows if not r.error]
    results = {
        "rows": len(rows),
        "failed_rows": len(rows) - len(ok),
        "J_strictly_decreasing": bool(all(a.J_excess > b.J_excess for a, b in zip(ok, ok[1:]))),
        "maxB_strictly_decreasing": bool(all(a.max_B_excess > b.max_B_excess for a, b in zip(ok, ok[1:]))),
        "maxB_at_largest_T": ok[-1].max_B if ok else float("nan"),
        "J_at_largest_T": ok[-1].J if ok else float("nan"),
        "min_controllable_field": 2 * c,
    }
    return RunSummary("sweep", dict(settings.used), results, [name])


def cmd_portrait(settings: Settings) -> RunSummary:
    c, _, out, _ = _common(settings)
    a_range = settings.get("alpha_range", (-math.pi, math.pi), lambda k, v: parse_tuple(k, v, 2))
    b_range = settings.get("b_range", (-3.0, 3.0), lambda k, v: parse_tuple(k, v, 2))
    density = settings.get("density", 41, parse_int)
    try:
        pp = phase_portrait(c, a_range, b_range, density)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "portrait.csv", ["alpha", "B", "dalpha", "dB"], pp.samples)
    sidecar = {
        "c": c,
        "equilibria": [
            {
                "alpha": eq.alpha,
                "B": eq.B,
                "kind": eq.kind,
                "eigenvalues": [[z.real, z.imag] for z in eq.eigenvalues],
            }
            for eq in pp.equilibria
        ],
        "separatrices": {name: pts.tolist() for name, pts in pp.separatrices.items()},
    }
    write_json(out / "portrait.json", sidecar)
    level = max(float(np.max(np.abs(hopt_planar(p[:, 0], p[:, 1], c)))) for p in pp.separatrices.values())
    results = {
        "equilibria": [f"{eq.kind} at ({eq.alpha:.6g}, {eq.B:.6g})" for eq in pp.equilibria],
        "separatrix_max_level": level,
    }
    return RunSummary("portrait", dict(settings.used), results, ["portrait.csv", "portrait.json"])


def cmd_validate(settings: Settings) -> RunSummary:
    """Re-read a simulate or plan output and re-check its conservation law."""
    c, _, _, _ = _common(settings)
    path = settings.get("file", None, lambda k, v: str(v))
    if path is None:
        raise ConfigError("validate needs --file")
    max_drift = settings.get("max_drift", 1e-8, parse_float)
    try:
        header, data = read_csv(Path(path))
    except (OSError, ValueError, StopIteration) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    cols = {name: data[:, i] for i, name in enumerate(header)}
    results: dict = {"file": path}
    if {"v", "omega"} <= cols.keys():
        E = 0.5 * (cols["v"] ** 2 / c + cols["omega"] ** 2)
        scale = E[0] if E[0] > 0 else 1.0
        drift = float(np.max(np.abs(E - E[0])) / scale)
        results["kind"] = "simulate"
    elif {"alpha", "B"} <= cols.keys():
        H = hopt_planar(cols["alpha"], cols["B"], c)
        drift = float(np.max(np.abs(H - H[0])))
        results["kind"] = "plan"
        results["boundary_error"] = float(cols["alpha"][-1] - math.pi)
        results["min_B"] = float(np.min(cols["B"]))
    else:
        raise ConfigError(f"{path}: not a simulate or plan output")
    results["drift"] = drift
    results["passed"] = bool(drift <= max_drift)
    return RunSummary("validate", dict(settings.used), results, [])


COMMANDS = {
    "simulate": cmd_simulate,
    "plan": cmd_plan,
    "sweep": cmd_sweep,
    "portrait": cmd_portrait,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--c", type=str, help="coupling m a^2 / (I + m a^2), in (0, 1]")
    common.add_argument("--tol", type=str, help="integrator rel/abs tolerance")
    common.add_argument("--out", type=str, help="output directory (default ./out)")
    common.add_argument("--config", type=str, help="flat 'key = value' config file")
    common.add_argument("--seed", type=str, help="seed for randomized schedules")

    parser = argparse.ArgumentParser(prog="magsleigh", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="sleigh under a constant or scheduled field")
    p.add_argument("--B", type=str, help="constant dimensionless field")
    p.add_argument("--schedule", type=str, help="CSV with header t,B (piecewise constant) or 'random'")
    p.add_argument("--level", type=str, help="reduced | full")
    p.add_argument("--T", type=str, help="horizon")
    p.add_argument("--E0", type=str, help="initial energy (default 0.5)")
    p.add_argument("--alpha0", type=str, help="initial phase on the energy level")
    p.add_argument("--pose0", type=str, help="x,y,theta")
    p.add_argument("--samples", type=str, help="number of output rows")

    p = sub.add_parser("plan", parents=[common], help="optimal turnaround in fixed time")
    p.add_argument("--T", type=str, help="horizon (default 2)")
    p.add_argument("--pose0", type=str, help="x,y,theta")
    p.add_argument("--samples", type=str, help="number of output rows")

    p = sub.add_parser("sweep", parents=[common], help="cost and peak field versus horizon")
    p.add_argument("--t-min", dest="t_min", type=str, help="shortest horizon")
    p.add_argument("--t-max", dest="t_max", type=str, help="longest horizon")
    p.add_argument("--points", type=str, help="number of horizons")
    p.add_argument("--log", action=argparse.BooleanOptionalAction, default=None, help="log-spaced grid (default)")
    p.add_argument("--workers", type=str, help="threads for independent rows")

    p = sub.add_parser("portrait", parents=[common], help="phase portrait of the planar optimal flow")
    p.add_argument("--alpha-range", dest="alpha_range", type=str, help="lo,hi (pi allowed)")
    p.add_argument("--b-range", dest="b_range", type=str, help="lo,hi")
    p.add_argument("--density", type=str, help="grid points per axis")

    p = sub.add_parser("validate", parents=[common], help="re-check a simulate/plan CSV")
    p.add_argument("--file", type=str, required=False, help="simulate.csv or plan_planar.csv to check")
    p.add_argument("--max-drift", dest="max_drift", type=str, help="largest allowed invariant drift (default 1e-8)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        file_values = load_config_file(args.config) if args.config else {}
        settings = Settings(args, file_values)
        summary = COMMANDS[args.command](settings)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    summary.wall_clock_s = time.perf_counter() - start
    if args.command != "validate":
        out = Path(settings.used["out"])
        # The file copy omits timing so identical runs give identical bytes.
        write_json(out / "summary.json", summary.as_dict(timing=False))
    print(json.dumps(_jsonable(summary.as_dict()), indent=2))
    if args.command == "validate" and not summary.results.get("passed"):
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
