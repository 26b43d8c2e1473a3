"""Online closed loop: sense, augment, plan, track, log.

The planning state is held at its next value over each control interval. Safety flags
in the log are recomputed from the states, never carried over from the controller.
"""
from dataclasses import dataclass, field
import csv
import io
import json
import logging
import math
import time

import numpy as np

from .errors import InitFailure, InvalidArgument, OutOfDomain, PlannerStuck, SensingTooShort
from .hjsolver import hamiltonian_affine
from .planning import PlannerInput
from .world import ConstraintState, augment_constraints, collides, goal_contract, min_sensing_radius

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
PERFORMANCE = "performance"
_RULES = ("value_fraction", "error_threshold")


@dataclass(frozen=True)
class HybridConfig:
    """Which controller to use at the next relative state.

    ``value_fraction``: optimal once ``V - vmin >= fraction * (level - vmin)``.
    ``error_threshold``: optimal once ``l(r) >= threshold**2``.
    """

    rule: str = "value_fraction"
    fraction: float = 0.25
    threshold: float = 0.02
    bandwidth: float = 2.0

    def __post_init__(self):
        if self.rule not in _RULES:
            raise InvalidArgument(f"switch rule must be one of {_RULES}")
        if not 0 < self.fraction <= 1:
            raise InvalidArgument("value fraction must be in (0, 1]")
        if self.threshold < 0 or self.bandwidth <= 0:
            raise InvalidArgument("threshold must be >= 0 and bandwidth > 0")


@dataclass(frozen=True)
class DisturbancePolicy:
    kind: str = "zero"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("zero", "uniform", "adversarial"):
            raise InvalidArgument("disturbance kind must be zero, uniform or adversarial")

    def sampler(self, bound):
        """Return ``f(r, tau) -> d`` drawing from this policy."""
        D = bound.rel.disturbances
        if self.kind == "zero":
            zero = D.clip(np.zeros(D.dim))
            return lambda r, tau: zero
        if self.kind == "uniform":
            rng = np.random.default_rng(self.seed)
            return lambda r, tau: D.low + (D.high - D.low) * rng.random(D.dim)
        return lambda r, tau: adversarial_disturbance(bound, r, tau)


def _error_gradient(rel, r, h=1e-6):
    r = np.asarray(r, dtype=float)
    g = np.zeros_like(r)
    for i in range(len(r)):
        e = np.zeros_like(r)
        e[i] = h
        g[i] = (rel.error(r + e) - rel.error(r - e)) / (2 * h)
    return g


def adversarial_disturbance(bound, r, tau=0.0):
    """Worst-case disturbance from the value gradient; off the grid, the corner that
    grows the error function fastest."""
    if bound.in_domain(r):
        return bound.worst_case(r, tau)[1]
    _, _, _, d = hamiltonian_affine(bound.rel, r, _error_gradient(bound.rel, r))
    return d


def _mode_for(bound, r, tau, cfg):
    if cfg.rule == "error_threshold":
        return OPTIMAL if float(bound.rel.error(r)) >= cfg.threshold ** 2 else PERFORMANCE
    v = bound.value(r, tau)
    span = bound.level - bound.vmin
    return OPTIMAL if v - bound.vmin >= cfg.fraction * span else PERFORMANCE


def hybrid_control(bound, r_next, tau, cfg, plan_rate=None):
    """Return ``(u, mode)``. Off-grid states and degenerate cases use optimal mode."""
    rel = bound.rel
    r_next = np.asarray(r_next, dtype=float)
    if not bound.in_domain(r_next):
        log.warning("relative state %s is off the value grid; forcing optimal mode", r_next)
        return bound.optimal_control(r_next, tau, clip=True), OPTIMAL
    try:
        mode = _mode_for(bound, r_next, tau, cfg)
    except (OutOfDomain, FloatingPointError):
        mode = OPTIMAL
    if mode == PERFORMANCE and rel.performance is not None:
        if plan_rate is None:
            plan_rate = np.zeros(rel.planning.n_states)
        u = rel.controls.clip(rel.performance(r_next, np.asarray(plan_rate, float), cfg.bandwidth))
        if np.all(np.isfinite(u)):
            return u, PERFORMANCE
    return bound.optimal_control(r_next, tau), OPTIMAL


def _rk4(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def world_disturbance(rel, d, p):
    """Disturbances are drawn in the relative frame; rotate the position pair to the
    world frame for rotating relative systems."""
    d = np.array(d, dtype=float)
    if rel.transform == "rotation":
        th = float(np.asarray(p)[rel.heading_idx])
        c, sn = math.cos(th), math.sin(th)
        # disturbance channels that drive the rotated position pair
        Bd = np.asarray(rel.disturbance_jacobian, dtype=float)
        i, j = (int(np.nonzero(Bd[k])[0][0]) for k in rel.rot_idx)
        d[i], d[j] = c * d[i] - sn * d[j], sn * d[i] + c * d[j]
    return d


def step_tracking(model, s, u, d, dt):
    """One classical Runge-Kutta step of the tracking model with inputs held."""
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    return _rk4(lambda x: model.flow(x, u, d), np.asarray(s, dtype=float), dt)


_FLAG_COLUMNS = ("teb_violation", "collision", "out_of_bounds")


@dataclass
class SimLog:
    """Per-step records. Row ``k`` holds the state after step ``k`` was applied."""

    state_names: tuple = ()
    plan_names: tuple = ()
    rel_names: tuple = ()
    control_dim: int = 0
    dist_dim: int = 0
    dt: float = 0.0
    t: list = field(default_factory=list)
    s: list = field(default_factory=list)
    p: list = field(default_factory=list)
    r: list = field(default_factory=list)
    value: list = field(default_factory=list)
    value_next: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    mode: list = field(default_factory=list)
    u: list = field(default_factory=list)
    d: list = field(default_factory=list)
    sensed: list = field(default_factory=list)
    teb_violation: list = field(default_factory=list)
    collision: list = field(default_factory=list)
    out_of_bounds: list = field(default_factory=list)
    pos_error: list = field(default_factory=list)
    planner_time: list = field(default_factory=list)
    control_time: list = field(default_factory=list)
    reached_goal: bool = False
    time_to_goal: float = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def columns(self):
        cols = ["step", "t"]
        cols += [f"s_{n}" for n in self.state_names]
        cols += [f"p_{n}" for n in self.plan_names]
        cols += [f"r_{n}" for n in self.rel_names]
        cols += ["value", "value_next", "tau", "mode"]
        cols += [f"u_{i}" for i in range(self.control_dim)]
        cols += [f"d_{i}" for i in range(self.dist_dim)]
        cols += ["sensed", *_FLAG_COLUMNS]
        return cols

    def rows(self):
        for k in range(len(self)):
            yield ([k, self.t[k], *self.s[k], *self.p[k], *self.r[k], self.value[k],
                    self.value_next[k], self.tau[k], self.mode[k], *self.u[k], *self.d[k],
                    self.sensed[k]] + [int(getattr(self, c)[k]) for c in _FLAG_COLUMNS])

    def to_csv(self, path=None):
        """CSV with the fixed column order of :meth:`columns`; floats use ``repr``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for row in self.rows():
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text, state_dim, plan_dim, rel_dim, control_dim, dist_dim):
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        names = [h[2:] for h in header]
        o = 2
        lg = cls(tuple(names[o:o + state_dim]), tuple(names[o + state_dim:o + state_dim + plan_dim]),
                 tuple(names[o + state_dim + plan_dim:o + state_dim + plan_dim + rel_dim]),
                 control_dim, dist_dim)
        for row in body:
            i = 1
            lg.t.append(float(row[i])); i += 1
            lg.s.append(np.array(row[i:i + state_dim], float)); i += state_dim
            lg.p.append(np.array(row[i:i + plan_dim], float)); i += plan_dim
            lg.r.append(np.array(row[i:i + rel_dim], float)); i += rel_dim
            lg.value.append(float(row[i])); lg.value_next.append(float(row[i + 1]))
            lg.tau.append(float(row[i + 2])); lg.mode.append(row[i + 3]); i += 4
            lg.u.append(np.array(row[i:i + control_dim], float)); i += control_dim
            lg.d.append(np.array(row[i:i + dist_dim], float)); i += dist_dim
            lg.sensed.append(int(row[i])); i += 1
            for c in _FLAG_COLUMNS:
                getattr(lg, c).append(bool(int(row[i]))); i += 1
        if len(lg.t) > 1:
            lg.dt = lg.t[1] - lg.t[0]
        return lg


def metrics(lg):
    """Summary numbers for a log; an empty log gives zeros everywhere."""
    n = len(lg)
    if n == 0:
        return {"steps": 0, "max_error": [], "max_position_error": [], "violations": 0,
                "collisions": 0, "out_of_bounds": 0, "time_to_goal": 0.0,
                "reached_goal": bool(lg.reached_goal), "switches": 0, "optimal_steps": 0,
                "planner_time_mean": 0.0, "planner_time_max": 0.0,
                "control_time_mean": 0.0, "control_time_max": 0.0}
    R = np.abs(np.asarray(lg.r))
    pe = np.abs(np.asarray(lg.pos_error)) if lg.pos_error else np.zeros((n, 0))
    modes = lg.mode
    switches = sum(1 for a, b in zip(modes[:-1], modes[1:]) if a != b)
    pt = np.asarray(lg.planner_time or [0.0])
    ct = np.asarray(lg.control_time or [0.0])
    return {
        "steps": n,
        "max_error": R.max(axis=0).tolist(),
        "max_position_error": pe.max(axis=0).tolist() if pe.size else [],
        "violations": int(np.sum(lg.teb_violation)),
        "collisions": int(np.sum(lg.collision)),
        "out_of_bounds": int(np.sum(lg.out_of_bounds)),
        "time_to_goal": float(lg.time_to_goal) if lg.time_to_goal is not None else None,
        "reached_goal": bool(lg.reached_goal),
        "switches": switches,
        "optimal_steps": int(sum(m == OPTIMAL for m in modes)),
        "planner_time_mean": float(pt.mean()), "planner_time_max": float(pt.max()),
        "control_time_mean": float(ct.mean()), "control_time_max": float(ct.max()),
    }


def summary_json(lg, include_timing=False):
    """JSON summary with sorted keys; wall times are left out unless asked for."""
    m = metrics(lg)
    if not include_timing:
        m = {k: v for k, v in m.items() if "_time_" not in k}
    m["meta"] = lg.meta
    return json.dumps(m, sort_keys=True, indent=2)


@dataclass
class Scenario:
    """Everything :func:`run_online` needs.

    ``time_varying`` selects lookahead-dependent obstacle growth; otherwise every
    lookahead uses the bound at the horizon.
    """

    entry: object
    bound: object
    env: object
    planner: object
    s0: np.ndarray
    dt: float
    max_steps: int = 10_000
    hybrid: HybridConfig = HybridConfig()
    disturbance: DisturbancePolicy = DisturbancePolicy()
    time_varying: bool = True
    planner_step: float = None
    allow_short_sensing: bool = False
    reveal_all: bool = False


def _plan_coords(rel, s):
    return np.asarray(s, dtype=float) @ rel.Q


def _planner_step(entry, dt):
    model = entry.planning
    pos = list(entry.position_dims)
    p0 = np.zeros(model.n_states)
    speeds = [np.linalg.norm(model.flow(p0, u)[pos]) for u in model.controls.corners()]
    return float(max(speeds)) * dt


class _ExtentTable:
    """Planning-dimension extents per snapshot tau, with lookups rounded up."""

    def __init__(self, bound, time_varying):
        self.bound = bound
        self.horizon = bound.horizon
        self.taus = bound.taus()
        self.rows = {float(t): bound.plan_extents(float(t)) for t in self.taus}
        self.final = bound.plan_extents(self.horizon) if not bound.converged else self.rows[0.0]
        self.time_varying = time_varying and not bound.converged

    def at(self, tau):
        if not self.time_varying:
            return self.final
        if tau >= self.horizon:
            return self.final
        return self.rows[self.bound.snap_up(tau)]


def run_online(sc):
    """Run the closed loop until the contracted goal is reached or steps run out."""
    entry, bound, env, rel = sc.entry, sc.bound, sc.env, sc.bound.rel
    table = _ExtentTable(bound, sc.time_varying)
    pos = list(env.position_dims)
    ext_T = table.final
    goal = goal_contract(env.goal, ext_T[pos])
    step_len = sc.planner_step if sc.planner_step is not None else _planner_step(entry, sc.dt)
    need = min_sensing_radius(ext_T[pos], step_len)
    if env.sensor.radius < need and not (sc.allow_short_sensing or sc.reveal_all):
        raise SensingTooShort(
            f"sensor radius {env.sensor.radius} is below the required {need:.4g} "
            f"(bound {ext_T[pos].max():.4g} + planner step {step_len:.4g})")

    s = np.asarray(sc.s0, dtype=float)
    p = _plan_coords(rel, s)
    if rel.heading_idx is not None:
        p[rel.heading_idx] = (p[rel.heading_idx] + math.pi) % (2 * math.pi) - math.pi
    r = rel.relative_state(s, p)
    if not bound.contains(r, 0.0 if bound.converged else bound.taus()[0]):
        raise InitFailure(f"initial relative state {r} is not inside the smallest bound")

    state = ConstraintState(env.obstacles)
    if sc.reveal_all:
        state.reveal_all()
    sample_d = sc.disturbance.sampler(bound)
    lg = SimLog(rel.tracking.state_names or tuple(map(str, range(rel.n_states))),
                rel.planning.state_names or tuple(map(str, range(rel.planning.n_states))),
                rel.state_names or tuple(map(str, range(rel.n_states))),
                rel.controls.dim, rel.disturbances.dim, sc.dt)
    lg.meta = {"model": entry.name, "time_varying": bool(table.time_varying),
               "level": float(bound.level), "vmin": float(bound.vmin),
               "extents_horizon": ext_T.tolist(), "goal": [list(goal.lo), list(goal.hi)]}
    heading_dim = None
    if rel.heading_idx is not None:
        heading_dim = int(np.nonzero(rel.Q[:, rel.heading_idx])[0][0])

    t = 0.0
    if goal.contains(p[pos], tol=1e-12):
        lg.reached_goal = True
        lg.time_to_goal = 0.0
        return lg
    for k in range(sc.max_steps):
        # sensing + bound
        heading = float(s[heading_dim]) if heading_dim is not None else 0.0
        if not sc.reveal_all:
            state.sense(_plan_coords(rel, s), env.sensor, heading)
        sensed = state.sensed_list()
        tau = 0.0 if bound.converged else bound.smallest_tau(r)
        if tau is None:
            log.warning("step %d: relative state outside every stored bound", k)
            tau = bound.horizon
        if table.time_varying:
            cache = {}

            def obstacles(t_ahead, tau=tau, sensed=sensed, cache=cache):
                key = table.bound.snap_up(min(tau + t_ahead, table.horizon))
                if key not in cache:
                    cache[key] = augment_constraints(sensed, table.at(key))
                return cache[key]
        else:
            obstacles = augment_constraints(sensed, ext_T)
        state.augmented = obstacles(0.0) if callable(obstacles) else obstacles

        # planning
        t0 = time.perf_counter()
        try:
            planned = sc.planner.next_state(PlannerInput(p, obstacles, goal, sc.dt, state.version))
        except PlannerStuck as exc:
            exc.log = lg
            raise
        t1 = time.perf_counter()
        p_next = planned.next_state
        plan_rate = (p_next - p) / sc.dt
        if rel.heading_idx is not None:
            dth = (p_next[rel.heading_idx] - p[rel.heading_idx] + math.pi) % (2 * math.pi) - math.pi
            plan_rate[rel.heading_idx] = dth / sc.dt

        # hybrid tracking control against the next planning state
        r_next = rel.relative_state(s, p_next)
        u, mode = hybrid_control(bound, r_next, tau, sc.hybrid, plan_rate)
        d = rel.disturbances.clip(sample_d(r_next, tau))
        t2 = time.perf_counter()
        try:
            v_next = bound.value(r_next, tau)
        except OutOfDomain:
            v_next = math.inf

        s = step_tracking(rel.tracking, s, u, world_disturbance(rel, d, p_next), sc.dt)
        p = p_next
        t = (k + 1) * sc.dt
        r = rel.relative_state(s, p)

        # flags
        tau_check = 0.0 if bound.converged else bound.snap_up(min(tau + sc.dt, bound.horizon))
        try:
            v = bound.value(r, tau_check)
            violated = v > bound.level
        except OutOfDomain:
            v = math.inf
            violated = True
        x_plan = _plan_coords(rel, s)
        hit = collides(env.obstacles, x_plan)
        oob = not env.bounds.contains(x_plan[pos], tol=1e-12)

        lg.t.append(t)
        lg.s.append(s.copy())
        lg.p.append(p.copy())
        lg.r.append(r.copy())
        lg.value.append(float(v))
        lg.value_next.append(float(v_next))
        lg.tau.append(float(tau))
        lg.mode.append(mode)
        lg.u.append(np.asarray(u, float).copy())
        lg.d.append(np.asarray(d, float).copy())
        lg.sensed.append(state.sensed_count)
        lg.teb_violation.append(bool(violated))
        lg.collision.append(bool(hit))
        lg.out_of_bounds.append(bool(oob))
        lg.pos_error.append(x_plan[pos] - p[pos])
        lg.planner_time.append(t1 - t0)
        lg.control_time.append(t2 - t1)
        if goal.contains(p[pos], tol=1e-12):
            lg.reached_goal = True
            lg.time_to_goal = t
            break
    return lg


def run_relative(bound, r0, steps, dt, plan_policy="adversarial", disturbance=None,
                 hybrid=None, seed=0):
    """Integrate the relative system directly (no planner, no world).

    ``plan_policy`` is ``"adversarial"`` (worst-case planning control), ``"uniform"`` or
    ``"zero"``. The tracking control is optimal unless ``hybrid`` is given.
    """
    rel = bound.rel
    P = rel.plan_controls
    rng = np.random.default_rng(seed)
    disturbance = disturbance or DisturbancePolicy("adversarial", seed)
    sample_d = disturbance.sampler(bound)
    r = np.asarray(r0, dtype=float)
    out = {"r": [r.copy()], "value": [], "mode": [], "tau": []}
    tau = 0.0 if bound.converged else bound.smallest_tau(r)
    for k in range(steps):
        t_now = 0.0 if bound.converged else min((tau or 0.0) + k * dt, bound.horizon)
        if hybrid is None:
            u, mode = bound.optimal_control(r, t_now, clip=True), OPTIMAL
        else:
            u, mode = hybrid_control(bound, r, t_now, hybrid)
        if plan_policy == "adversarial":
            uh = bound.worst_case(r, t_now, clip=True)[0]
        elif plan_policy == "uniform":
            uh = P.low + (P.high - P.low) * rng.random(P.dim)
        else:
            uh = P.clip(np.zeros(P.dim))
        d = rel.disturbances.clip(sample_d(r, t_now))
        try:
            out["value"].append(bound.value(r, t_now))
        except OutOfDomain:
            out["value"].append(math.inf)
        out["mode"].append(mode)
        out["tau"].append(t_now)
        r = _rk4(lambda x: rel.flow_fn(x, u, uh, d), r, dt)
        for i in rel.periodic:
            r[i] = (r[i] + math.pi) % (2 * math.pi) - math.pi
        out["r"].append(r.copy())
    out["r"] = np.asarray(out["r"])
    return out


def calibrate_eps(parts, dt, steps=2000, factor=2.0):
    """Slack from rollouts: ``factor`` times the largest rise of V above vmin along
    optimal-vs-adversarial relative trajectories started at each part's argmin node.

    ``parts`` pairs subsystems with value functions, as for :class:`TrackingBound`.
    """
    from .teb import TrackingBound

    rise = 0.0
    for sub, vf in parts:
        b = TrackingBound.single(sub.rel, vf, eps=0.0)
        V = np.where(vf.trusted, vf.values[-1], np.inf)
        r0 = vf.grid.node(np.unravel_index(int(np.argmin(V)), V.shape))
        out = run_relative(b, r0, steps, dt)
        vals = np.asarray(out["value"])
        rise = max(rise, float(np.max(vals[np.isfinite(vals)])) - b.vmin)
    return factor * max(rise, 0.0)
