"""Command-line scenario runner.

    spfp run CONFIG [--override key=value ...] [--out DIR]
    spfp list-presets
    spfp check-positivity [--seed N] [--trials K] [--scheme explicit|semi_implicit]

Every run writes ``summary.json``, also when the integration fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, apply_overrides
from .core import SchemeConfig, total_mass
from .diagnostics import l1_error, relative_entropy
from .errors import ConfigError, SolverError
from .experiments import convergence_study, positivity_suite
from .flux import SpatialOperator
from .models import PRESETS, make_preset
from .stepper import choose_dt, integrate

FMT = "%.16e"

DIAG_COLUMNS = ("step", "t", "mass", "min_f", "H", "E", "L1_error", "dt")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return FMT % float(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


class _DiagWriter:
    """Streams diagnostics rows so partial output survives a failure."""

    def __init__(self, path: Path, columns=DIAG_COLUMNS):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(columns)
        self.rows = 0

    def write(self, row) -> None:
        self._w.writerow([_fmt(v) for v in row])
        self._fh.flush()
        self.rows += 1

    def close(self) -> None:
        self._fh.close()


def _time_label(t: float) -> str:
    return f"{t:.6g}"


def list_presets() -> str:
    lines = []
    for name in sorted(PRESETS):
        info = PRESETS[name]
        lines.append(f"{name}: {info.summary}")
        for key in sorted(info.defaults):
            lines.append(f"    {key} = {info.defaults[key]!r}  ({info.docs[key]})")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# modes

def _provenance(cfg: RunConfig) -> dict:
    return {"flux_family": cfg.flux_family, "quadrature": cfg.quadrature,
            "integrator": cfg.integrator, "dt_policy": cfg.dt_policy_obj().__dict__,
            "version": __version__}


def _run_single_1d(cfg: RunConfig, out: Path, summary: dict) -> None:
    p = make_preset(cfg.preset, **cfg.preset_params())
    g = p.grid
    op = SpatialOperator(p.problem, g, cfg.flux_family, cfg.quadrature,
                         p.steady_state, p.log_steady_state)
    scheme = SchemeConfig(cfg.flux_family, cfg.quadrature, cfg.integrator,
                          cfg.dt_policy_obj(), cfg.t_final, p.steady_state, p.log_steady_state)
    summary["grid"] = {"w_min": g.w_min, "w_max": g.w_max, "n_cells": g.n_cells, "dw": g.dw}
    summary["parameters"] = p.parameters
    fi = p.steady_state
    m0 = total_mass(p.initial, g)

    def row(n, t, f, dt):
        h = e = err = float("nan")
        if fi is not None and np.all(f >= 0):
            h = relative_entropy(f, fi, g)
        if p.free_energy is not None and np.all(f > 0):
            e = p.free_energy(f, g)
        if fi is not None:
            err = l1_error(f, fi, g, relative=True)
        return (n, t, total_mass(f, g), float(np.min(f)), h, e, err, dt)

    diag = _DiagWriter(out / "diagnostics.csv")
    last = {"n": 0, "t": 0.0, "f": p.initial, "dt": 0.0}
    diag.write(row(0, 0.0, p.initial, 0.0))

    def callback(n, t, f, rep):
        last.update(n=n, t=t, f=f, dt=rep.dt_used)
        if n % cfg.cadence == 0:
            diag.write(row(n, t, f, rep.dt_used))
            last["written"] = n

    step_kw = {}
    if cfg.integrator in ("SEMI_IMPLICIT_1", "IMEX2", "FULLY_IMPLICIT"):
        step_kw["strict"] = cfg.strict
    try:
        if scheme.dt_policy.kind in ("fixed", "power"):
            kw = {"dt": choose_dt(op, p.initial, scheme)}
        else:
            kw = {"dt_fn": lambda f: choose_dt(op, f, scheme)}
        r = integrate(op, p.initial, cfg.t_final, cfg.integrator,
                      output_times=cfg.output_times, callback=callback, **kw, **step_kw)
    finally:
        if last["n"] and last.get("written") != last["n"]:
            diag.write(row(last["n"], last["t"], last["f"], last["dt"]))
        diag.close()
    for t, f in sorted(r.snapshots.items()):
        if t in cfg.output_times or t == cfg.t_final:
            np.savetxt(out / f"solution_{_time_label(t)}.csv",
                       np.column_stack([g.nodes, f]), fmt=FMT, delimiter=",",
                       header="w,f", comments="")
    fin = row(r.steps, r.t, r.f, last["dt"])
    summary["final"] = dict(zip(DIAG_COLUMNS, fin))
    summary["final"]["mass_drift"] = abs(fin[2] - m0) / m0
    summary["counters"] = {"min_value": r.min_value,
                           "negative_entries": int(np.count_nonzero(r.f < 0)),
                           "clamped_entropic_averages": int(op.clamped),
                           "max_step_mass_drift": r.max_mass_drift,
                           "solver_iterations": r.iterations}


def _run_single_2d(cfg: RunConfig, out: Path, summary: dict) -> None:
    from .solver2d import STEPPERS_2D, Swarm2DOperator, mass_2d, run_to_steady, \
        swarm_mean_velocity
    p = make_preset("SWARM2D", **cfg.preset_params())
    g2 = p.grid
    integ = cfg.integrator if cfg.integrator in STEPPERS_2D else None
    if integ is None:
        raise ConfigError(f"2D runs support {sorted(STEPPERS_2D)}", "integrator")
    op = Swarm2DOperator(g2, p.parameters["alpha"], p.parameters["D"], cfg.flux_family,
                         cfg.quadrature)
    dt = cfg.dt if cfg.dt is not None else g2.dw / p.parameters["L"]
    summary["grid"] = {"L": p.parameters["L"], "n_cells": g2.gw.n_cells, "dw": g2.dw,
                       "dv": g2.dv}
    summary["parameters"] = p.parameters
    m0 = mass_2d(p.initial, g2)
    diag = _DiagWriter(out / "diagnostics.csv",
                       ("step", "t", "mass", "min_f", "u_w", "u_v", "dt"))
    state = {}

    def row(n, t, f, h):
        u = swarm_mean_velocity(f, g2)
        return (n, t, mass_2d(f, g2), float(np.min(f)), u[0], u[1], h)

    def callback(n, t, f, h):
        state.update(n=n, t=t, f=f, h=h)
        if n % cfg.cadence == 0:
            diag.write(row(n, t, f, h))
            state["written"] = n

    diag.write(row(0, 0.0, p.initial, 0.0))
    try:
        r = run_to_steady(op, p.initial, dt, cfg.t_final, cfg.tol, integ, callback)
    finally:
        if state.get("n") and state.get("written") != state["n"]:
            diag.write(row(state["n"], state["t"], state["f"], state["h"]))
        diag.close()
    label = _time_label(r.t)
    np.savetxt(out / f"solution_{label}.csv", r.f, fmt=FMT, delimiter=",")
    write_json(out / f"solution_{label}.json",
               {"t": r.t, "rows": "w", "columns": "v",
                "w": g2.gw.nodes, "v": g2.gv.nodes, "parameters": p.parameters})
    u = swarm_mean_velocity(r.f, g2)
    summary["final"] = {"t": r.t, "steps": r.steps, "converged": r.converged,
                        "residual": r.residual, "u": list(u), "speed": float(np.hypot(*u)),
                        "mass_drift": abs(mass_2d(r.f, g2) - m0) / m0}
    summary["counters"] = {"min_value": r.min_value,
                           "negative_entries": int(np.count_nonzero(r.f < 0)),
                           "max_step_mass_drift": r.max_mass_drift}


def _run_convergence(cfg: RunConfig, out: Path, summary: dict) -> None:
    params = cfg.preset_params()
    params.pop("n_cells", None)
    times = sorted(set(cfg.output_times) | {cfg.t_final})
    table = convergence_study(cfg.preset, cfg.n_list, cfg.reference_n, times,
                              cfg.quadratures, cfg.flux_family, cfg.integrator,
                              cfg.dt_policy_obj(), cfg.dt_grid, params, cfg.workers)
    with open(out / "rates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("quadrature", "t", "n_cells", "l1_error", "rate"))
        for rule, t, n, err, rate in table.rows():
            w.writerow((rule, _fmt(t), n, _fmt(err), _fmt(rate)))
    summary["rates"] = {f"{rule}@t={_time_label(t)}": v for (rule, t), v in
                        sorted(table.rates.items())}
    summary["errors"] = {f"{rule}@t={_time_label(t)}": v for (rule, t), v in
                         sorted(table.errors.items())}
    summary["counters"] = {"min_value": table.min_value}


def _run_phase(cfg: RunConfig, out: Path, summary: dict) -> None:
    from .solver2d import make_square_grid, run_phase_transition
    p = cfg.preset_params()
    alpha = cfg.alpha if cfg.alpha is not None else p["alpha"]
    g2 = make_square_grid(p["L"], p["n_cells"])
    integ = cfg.integrator if cfg.integrator != "EULER" else "SEMI_IMPLICIT_1"
    rows = run_phase_transition(alpha, cfg.D_list, g2, cfg.dt, cfg.t_max, cfg.tol,
                                cfg.quadrature, cfg.flux_family,
                                (p["init_mean"],) * 2, (p["init_var"],) * 2, integ)
    with open(out / "phase.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("D", "speed", "u_w", "u_v", "t", "steps", "converged", "residual"))
        for r in rows:
            w.writerow((_fmt(r.D), _fmt(r.speed), _fmt(r.u[0]), _fmt(r.u[1]), _fmt(r.t),
                        r.steps, int(r.converged), _fmt(r.residual)))
    summary["phase"] = [{"D": r.D, "speed": r.speed, "converged": r.converged} for r in rows]
    summary["integrator_2d"] = integ


def run(cfg: RunConfig, out_dir=None) -> int:
    """Execute a validated configuration; returns the process exit status."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"status": "running", "mode": cfg.mode, "preset": cfg.preset,
               "config": cfg.to_dict(), "scheme": _provenance(cfg)}
    try:
        if cfg.mode == "convergence":
            _run_convergence(cfg, out, summary)
        elif cfg.mode == "phase_transition":
            _run_phase(cfg, out, summary)
        elif cfg.preset == "SWARM2D":
            _run_single_2d(cfg, out, summary)
        else:
            _run_single_1d(cfg, out, summary)
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        summary["status"] = "failed"
        summary["error"] = {"type": type(exc).__name__, "message": str(exc)}
        write_json(out / "summary.json", summary)
        return 1
    summary["status"] = "ok"
    write_json(out / "summary.json", summary)
    return 0


# ---------------------------------------------------------------------------
# entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spfp", description="positivity-preserving drift-diffusion solver")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a JSON configuration")
    r.add_argument("config", help="path to the configuration file")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--out", default=None, help="artifact directory")
    sub.add_parser("list-presets", help="show presets and their parameters")
    c = sub.add_parser("check-positivity", help="randomized positivity property check")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--trials", type=int, default=1000)
    c.add_argument("--scheme", choices=("explicit", "semi_implicit"), default="explicit")
    c.add_argument("--steps", type=int, default=20)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-presets":
        sys.stdout.write(list_presets())
        return 0
    if args.command == "check-positivity":
        trials = positivity_suite(args.seed, args.trials, args.scheme, args.steps)
        bad = [t for t in trials if not t.ok]
        worst = min(t.min_value for t in trials)
        print(f"{len(trials)} trials, {len(bad)} with negative entries, min value {worst:.3e}")
        for t in bad[:10]:
            print(f"  {t.preset} {t.params} min {t.min_value:.3e}")
        return 1 if bad else 0
    try:
        text = Path(args.config).read_text()
        cfg = apply_overrides(text, args.override)
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    status = run(cfg, args.out)
    if status:
        print("run failed; see summary.json", file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
