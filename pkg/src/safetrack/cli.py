"""Command-line entry points.

    safetrack precompute --config run.yaml [--out DIR]
    safetrack info FILE.ftvf
    safetrack simulate --config run.yaml [--out DIR] [--vf-dir DIR]
    safetrack export slice FILE.ftvf --dims I J --at X... [--tau T] [--out CSV]
    safetrack export extents FILE.ftvf [--eps E] [--out CSV]
    safetrack export log LOG.csv [--out JSON]

Exit codes: 0 success, 1 a safety flag tripped during simulation, 2 usage or input
errors, 3 numerical failure.
"""
import argparse
import csv
import io
import json
import logging
from pathlib import Path
import sys
import time

import numpy as np

from . import vfio
from .config import load_config
from .errors import (ConfigError, CorruptFile, HashMismatch, NumericalFailure, OutOfDomain,
                     SafetrackError, SensingTooShort)
from .grid import Grid, interpolate_fields
from .hjsolver import SolverConfig, solve_hjvi
from .planning import GridPlanner, RRTPlanner
from .relsys import BoxSet, make_model
from .teb import TEBQuery, TrackingBound, default_eps, min_value, sublevel_extents
from .world import Environment, Obstacle, SensorModel

log = logging.getLogger("safetrack")


# ----------------------------------------------------------------------------
# builders shared by the commands and the tests

def build_entry(cfg):
    return make_model(cfg.model.name, cfg.model.params)


def build_grids(cfg, entry):
    grids = dict(entry.default_grids)
    for name, g in cfg.grids.items():
        if name not in grids:
            raise ConfigError(f"grid {name!r} does not name a subsystem of {entry.name}: "
                              f"{sorted(grids)}")
        grids[name] = Grid(tuple(g.lo), tuple(g.hi), tuple(g.n),
                           tuple(g.periodic) if g.periodic is not None else None)
    return grids


def build_solver(cfg):
    s = cfg.solver
    return SolverConfig(horizon=s.horizon, cfl=s.cfl, tol=s.tol, snapshots=s.snapshots,
                        max_steps=s.max_steps, untrusted_cells=s.untrusted_cells,
                        dissipation=s.dissipation, scheme=s.scheme,
                        stop_on_convergence=s.stop_on_convergence)


def build_environment(spec, entry):
    pos = entry.position_dims
    obstacles = []
    for ob in spec.obstacles:
        dims = tuple(ob.dims) if ob.dims is not None else pos
        if ob.vertices is not None:
            obstacles.append(Obstacle.from_vertices(ob.vertices, dims))
        else:
            obstacles.append(Obstacle.from_bounds(ob.lo, ob.hi, dims))
    sensor = SensorModel(spec.sensor.kind, spec.sensor.radius, spec.sensor.half_angle)
    return Environment(BoxSet(tuple(spec.bounds.lo), tuple(spec.bounds.hi)), tuple(obstacles),
                       BoxSet(tuple(spec.goal.lo), tuple(spec.goal.hi)), sensor, pos)


def build_planner(spec, entry, env, dt):
    if spec.kind == "rrt":
        return RRTPlanner.for_model(entry.planning, env.bounds, dt, seed=spec.seed,
                                    step_size=spec.step_size, max_iters=spec.max_iters)
    rel = entry.relative
    angle_dims = (rel.heading_idx,) if rel.heading_idx is not None else ()
    return GridPlanner(entry.planning, env.bounds, entry.position_dims, dt,
                       primitive_steps=spec.primitive_steps,
                       controls_per_dim=spec.controls_per_dim, resolution=spec.resolution,
                       angle_dims=angle_dims, angle_bins=spec.angle_bins,
                       max_expansions=spec.max_expansions)


def initial_state(start, entry):
    """A full tracking state, or a planning-coordinate point lifted through ``Q``."""
    x = np.asarray(start, dtype=float)
    rel = entry.relative
    if x.shape == (rel.tracking.n_states,):
        return x
    if x.shape == (rel.planning.n_states,):
        return rel.Q @ x
    if x.shape == (len(entry.position_dims),):
        p = np.zeros(rel.planning.n_states)
        p[list(entry.position_dims)] = x
        return rel.Q @ p
    raise ConfigError(f"start has {x.size} entries; expected a tracking, planning or position vector")


def vf_path(cfg, out_dir, sub_name):
    prefix = cfg.output.prefix or cfg.model.name
    return Path(out_dir) / f"{prefix}_{sub_name}.ftvf"


def solve_parts(entry, grids, solver, progress=None, only=None):
    """Solve every part, reusing the solution of identical blocks on identical grids."""
    solved = {}
    out = []
    for sub in entry.parts():
        if only and sub.name not in only:
            continue
        key = (id(sub.rel), grids[sub.name])
        if key not in solved:
            solved[key] = solve_hjvi(sub.rel, grids[sub.name], solver, progress)
        out.append((sub, solved[key]))
    return out


def part_eps(cfg, sub, vf, dt):
    if cfg.teb.eps is not None:
        return float(cfg.teb.eps)
    if cfg.teb.calibrate:
        from .sim import calibrate_eps

        return calibrate_eps([(sub, vf)], dt, cfg.teb.calibrate_steps, cfg.teb.calibrate_factor)
    return default_eps(vf)


def _memory_estimate(grid, snapshots, n_inputs):
    n = grid.size
    return 8 * n * (snapshots + 4 + grid.ndim * (1 + n_inputs))


# ----------------------------------------------------------------------------
# commands

def cmd_precompute(args):
    cfg = load_config(args.config)
    entry = build_entry(cfg)
    grids = build_grids(cfg, entry)
    solver = build_solver(cfg)
    out_dir = Path(args.out or cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dt = cfg.scenario.dt if cfg.scenario is not None else 0.01
    t0 = time.perf_counter()
    names = [sub.name for sub in entry.parts()]
    bad = [n for n in (args.only or ()) if n not in names]
    if bad:
        raise ConfigError(f"unknown subsystem(s) {bad}; {entry.name} has {names}")
    parts = solve_parts(entry, grids, solver, only=args.only)
    results = []
    for sub, vf in parts:
        eps = part_eps(cfg, sub, vf, dt)
        path = vf_path(cfg, out_dir, sub.name)
        vfio.save(path, vf, entry.name, entry.params, sub.name, eps, solver.untrusted_cells)
        q = TEBQuery(min_value(vf), eps)
        err = [i for i in range(sub.rel.n_states) if i in sub.rel.error_idx]
        hw = sublevel_extents(vf.grid, vf.values[-1], q.level, err)
        n_in = sub.rel.controls.dim + sub.rel.plan_controls.dim + sub.rel.disturbances.dim
        mem = _memory_estimate(vf.grid, vf.n_snapshots, n_in)
        results.append({"subsystem": sub.name, "file": str(path), "converged": vf.converged,
                        "horizon": vf.horizon, "vmin": vf.vmin, "eps": eps,
                        "extents": hw.tolist(), "wall_time": vf.wall_time, "steps": vf.steps,
                        "peak_memory_mb": mem / 2 ** 20})
        print(f"{sub.name}: vmin={vf.vmin:.6g} eps={eps:.3g} extents={np.round(hw, 5).tolist()} "
              f"{'converged' if vf.converged else 'not converged'} at horizon {vf.horizon:.4g} "
              f"({vf.steps} steps, {vf.wall_time:.2f} s, ~{mem / 2 ** 20:.1f} MB) -> {path}")
    (out_dir / "precompute.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    print(f"total {time.perf_counter() - t0:.2f} s")
    return 0


def _fmt_header(h):
    g = h["grid"]
    lines = [
        f"model       {h['model']} / {h['subsystem']}",
        f"param hash  {h['param_hash']}",
        f"grid        n={g['n']} lo={g['lo']} hi={g['hi']} periodic={g['periodic']}",
        f"status      {'converged' if h['converged'] else 'not converged'}",
        f"vmin        {h['vmin']:.6g}",
        f"eps         {h['eps']}",
        f"snapshots   {len(h['times'])}",
    ]
    return "\n".join(lines)


def cmd_info(args):
    header = vfio.verify(args.file)
    print(_fmt_header(header))
    grid = vfio._grid(header["grid"])
    entry = make_model(header["model"], header["params"])
    sub = {s.name: s for s in entry.parts()}[header["subsystem"]]
    err = [i for i in range(sub.rel.n_states) if i in sub.rel.error_idx]
    eps = header["eps"] if header["eps"] is not None else 0.0
    level = header["vmin"] + eps
    horizon = header["times"][-1]
    print("tau          extents (" + ", ".join(sub.rel.state_names[i] for i in err) + ")")
    for t, vals in vfio.iter_snapshots(args.file):
        tau = 0.0 if header["converged"] else horizon - t
        try:
            hw = sublevel_extents(grid, vals, level, err)
            text = " ".join(f"{w:.5g}" for w in hw)
        except SafetrackError:
            text = "empty"
        tag = " converged" if header["converged"] else ""
        print(f"{tau:<12.5g} {text}{tag}")
    return 0


def _load_parts(cfg, entry, vf_dir):
    parts = []
    eps = []
    for sub in entry.parts():
        path = vf_path(cfg, vf_dir, sub.name)
        if not path.exists():
            raise ConfigError(f"missing value function {path}; run precompute first")
        expect = vfio.param_hash(entry.name, entry.params, sub.name)
        vf, header = vfio.load(path, expect)
        parts.append((sub, vf))
        eps.append(header["eps"])
    return parts, eps


def build_bound(cfg, entry, parts, file_eps=None):
    if cfg.teb.eps is not None:
        return TrackingBound(entry.relative, parts, cfg.teb.eps)
    if file_eps and all(e is not None for e in file_eps):
        return TrackingBound(entry.relative, parts, max(file_eps))
    return TrackingBound(entry.relative, parts)


def build_scenario(cfg, entry, bound):
    from .sim import DisturbancePolicy, HybridConfig, Scenario

    sc = cfg.scenario
    if sc is None:
        raise ConfigError("configuration has no scenario section")
    env = build_environment(sc.environment, entry)
    start = sc.start if sc.start is not None else sc.environment.start
    if start is None:
        raise ConfigError("scenario needs a start state")
    planner = build_planner(sc.planner, entry, env, sc.dt)
    h = sc.hybrid
    return Scenario(entry, bound, env, planner, initial_state(start, entry), sc.dt, sc.max_steps,
                    HybridConfig(h.rule, h.fraction, h.threshold, h.bandwidth),
                    DisturbancePolicy(sc.disturbance.kind, sc.disturbance.seed),
                    sc.time_varying, sc.planner_step, sc.allow_short_sensing, sc.reveal_all)


def cmd_simulate(args):
    from .sim import metrics, run_online, summary_json

    cfg = load_config(args.config)
    entry = build_entry(cfg)
    vf_dir = Path(args.vf_dir or cfg.output.dir)
    parts, file_eps = _load_parts(cfg, entry, vf_dir)
    bound = build_bound(cfg, entry, parts, file_eps)
    scenario = build_scenario(cfg, entry, bound)
    lg = run_online(scenario)
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    lg.to_csv(out / "log.csv")
    (out / "summary.json").write_text(summary_json(lg) + "\n")
    m = metrics(lg)
    print(f"steps={m['steps']} reached_goal={m['reached_goal']} time_to_goal={m['time_to_goal']} "
          f"violations={m['violations']} collisions={m['collisions']} switches={m['switches']}")
    print(f"max position error {np.round(m['max_position_error'], 5).tolist()} "
          f"vs bound {np.round(bound.plan_extents()[list(entry.position_dims)], 5).tolist()}")
    return 1 if (m["violations"] or m["collisions"]) else 0


def _write(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def export_slice(path, dims, at=None, tau=0.0):
    """CSV of V over two dims with the others fixed at ``at`` (a full coordinate).

    ``at`` defaults to the grid centre; its entries for ``dims`` are ignored.
    """
    vf, header = vfio.load(path)
    g = vf.grid
    if at is None:
        at = 0.5 * (np.asarray(g.lo) + np.asarray(g.hi))
    at = np.asarray(at, dtype=float)
    if at.shape != (g.ndim,):
        raise ConfigError(f"--at needs {g.ndim} coordinates, got {at.size}")
    if len(set(dims)) != 2 or not all(0 <= d < g.ndim for d in dims):
        raise ConfigError(f"--dims must name two distinct axes below {g.ndim}")
    g.check_bounds(g.wrap(at))
    i, j = dims
    ax = g.axes
    X = np.repeat(at[None], len(ax[i]) * len(ax[j]), axis=0)
    X[:, i] = np.repeat(ax[i], len(ax[j]))
    X[:, j] = np.tile(ax[j], len(ax[i]))
    k = vf.index_for_horizon(max(vf.horizon - tau, 0.0))
    vals = interpolate_fields(g, vf.values[k][None], g.wrap(X))[:, 0]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}", f"x{j}", "value"])
    for x, v in zip(X, vals):
        w.writerow([repr(float(x[i])), repr(float(x[j])), repr(float(v))])
    return buf.getvalue()


def export_extents(path, eps=None):
    vf, header = vfio.load(path)
    entry = make_model(header["model"], header["params"])
    sub = {s.name: s for s in entry.parts()}[header["subsystem"]]
    err = [i for i in range(sub.rel.n_states) if i in sub.rel.error_idx]
    if eps is None:
        eps = header["eps"] if header["eps"] is not None else default_eps(vf)
    level = min_value(vf) + eps
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau"] + [sub.rel.state_names[i] for i in err])
    taus = [0.0] if vf.converged else [vf.horizon - t for t in vf.times[::-1]]
    for tau in taus:
        k = vf.index_for_horizon(max(vf.horizon - tau, 0.0))
        hw = sublevel_extents(vf.grid, vf.values[k], level, err)
        w.writerow([repr(float(tau))] + [repr(float(x)) for x in hw])
    return buf.getvalue()


def export_log(path):
    """JSON summary of a log CSV written by ``simulate``."""
    from .sim import SimLog, summary_json

    text = Path(path).read_text()
    header = next(csv.reader(io.StringIO(text)))
    count = {p: sum(1 for h in header if h.startswith(p)) for p in ("s_", "p_", "r_", "u_", "d_")}
    lg = SimLog.from_csv(text, count["s_"], count["p_"], count["r_"], count["u_"], count["d_"])
    return summary_json(lg) + "\n"


def cmd_export(args):
    if args.what == "slice":
        text = export_slice(args.file, args.dims, args.at, args.tau)
    elif args.what == "extents":
        text = export_extents(args.file, args.eps)
    else:
        text = export_log(args.file)
    _write(text, args.out)
    return 0


def make_parser():
    ap = argparse.ArgumentParser(prog="safetrack", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute", help="solve and store value functions")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--only", nargs="+", metavar="SUBSYSTEM", help="solve only these blocks")
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("info", help="summarize a value-function file")
    p.add_argument("file")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("simulate", help="run the online loop")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--vf-dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export", help="export slices, extents or logs")
    p.add_argument("what", choices=("slice", "extents", "log"))
    p.add_argument("file")
    p.add_argument("--dims", type=int, nargs=2, default=(0, 1))
    p.add_argument("--at", type=float, nargs="+")
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--eps", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, CorruptFile, HashMismatch, SensingTooShort, OutOfDomain,
            SafetrackError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
