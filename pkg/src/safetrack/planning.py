"""Real-time planners behind one interface: ``next_state(PlannerInput) -> PlannedStep``.

``GridPlanner`` runs an A* search over a lattice of held-control motion
primitives; ``RRTPlanner`` grows a geometric tree in position space and time-stamps the
path at the per-dimension speed limits of an integrator planning model.
"""
from dataclasses import dataclass
import heapq
import itertools
import math

import numpy as np

from .errors import InvalidArgument, PlannerStuck
from .world import collides


@dataclass
class PlannerInput:
    """``obstacles`` is a list of boxes, or a callable ``t_ahead -> list`` for bounds
    that grow along the lookahead."""

    state: np.ndarray
    obstacles: object
    goal: object
    dt: float
    version: int = 0

    def obstacles_at(self, t_ahead):
        if callable(self.obstacles):
            return self.obstacles(t_ahead)
        return self.obstacles


@dataclass
class PlannedStep:
    next_state: np.ndarray
    times: np.ndarray = None
    states: np.ndarray = None


def _rk4(flow, p, u, h):
    k1 = flow(p, u)
    k2 = flow(p + 0.5 * h * k1, u)
    k3 = flow(p + 0.5 * h * k2, u)
    k4 = flow(p + h * k3, u)
    return p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _in_goal(goal, p, position_dims):
    return bool(goal.contains(np.asarray(p)[list(position_dims)], tol=1e-12))


class _Trajectory:
    """Piecewise path sampled at the simulation step, kept between replans."""

    def __init__(self, states, version, knots=None, knot_times=None, dt=None):
        self.states = states
        self.version = version
        self.index = 0
        self.knots = knots
        self.knot_times = knot_times
        self.dt = dt

    def polyline(self):
        """Current state followed by the path corners still ahead."""
        if self.knots is None:
            return self.remaining()
        t = self.index * self.dt
        ahead = [k for k, tk in zip(self.knots, self.knot_times) if tk > t + 1e-12]
        return [self.states[self.index]] + ahead

    def matches(self, p):
        return np.allclose(self.states[self.index], p, atol=1e-9)

    def advance(self):
        self.index = min(self.index + 1, len(self.states) - 1)
        return self.states[self.index]

    def remaining(self):
        return self.states[self.index:]


class GridPlanner:
    """A* search over a state lattice.

    Each primitive holds one control-box lattice point for ``primitive_steps`` planning
    steps. States are binned at ``resolution`` (default: half the shortest primitive
    displacement). Search cost is arrival time, so obstacles may grow with lookahead;
    the per-axis distance to the goal over the reach of one primitive guides the search.
    """

    def __init__(self, model, bounds, position_dims, dt, primitive_steps=5,
                 controls_per_dim=3, resolution=None, angle_dims=(), angle_bins=None,
                 max_expansions=200_000):
        if primitive_steps < 1 or controls_per_dim < 2:
            raise InvalidArgument("need at least one step per primitive and two controls per dim")
        self.model = model
        self.bounds = bounds
        self.position_dims = tuple(position_dims)
        self.dt = float(dt)
        self.k = int(primitive_steps)
        self.angle_dims = tuple(angle_dims)
        self.max_expansions = int(max_expansions)
        self._offset_cache = {}
        self.controls = model.controls.lattice(controls_per_dim)
        self.searches = 0
        self._min_disp = None
        self._max_disp = self._reach()
        self.resolution = resolution or self._min_disp / 2.0
        self.angle_bins = angle_bins
        self._plan = None

    def _reach(self):
        """Per-axis reach of one primitive from rest; also sets the shortest displacement."""
        steps = []
        p0 = np.zeros(self.model.n_states)
        for u in self.controls:
            steps.append(self._rollout(p0, u)[-1][list(self.position_dims)])
        steps = np.abs(np.array(steps))
        disp = np.linalg.norm(steps, axis=1)
        if not np.any(disp > 1e-12):
            raise InvalidArgument("no primitive moves the planner")
        self._min_disp = float(disp[disp > 1e-12].min())
        if self.angle_dims:
            # a heading can point the longest step along any axis
            return np.full(len(self.position_dims), disp.max())
        return steps.max(axis=0)

    def _rollout(self, p, u):
        out = [p]
        for _ in range(self.k):
            p = _rk4(self.model.flow, p, u, self.dt)
            out.append(p)
        return out

    def _offsets(self, p):
        """Primitive rollouts relative to ``p``; the planning flows used here do not
        depend on position, so they are cached on the remaining coordinates."""
        rest = tuple(round(float(p[i]), 9) for i in self._other_dims)
        hit = self._offset_cache.get(rest)
        if hit is None:
            base = np.zeros_like(p)
            base[list(self._other_dims)] = p[list(self._other_dims)]
            segs = [np.array(self._rollout(base, u)) - base for u in self.controls]
            hit = self._offset_cache[rest] = np.stack(segs)
        return hit

    def _keys(self, P):
        """Bin keys for the rows of ``P``."""
        P = np.atleast_2d(P)
        K = np.floor(P / self.resolution + 0.5)
        bins = self.angle_bins or 16
        for i in self.angle_dims:
            a = np.mod(P[:, i] + math.pi, 2 * math.pi)
            K[:, i] = np.mod(np.round(a / (2 * math.pi) * bins), bins)
        return [tuple(row) for row in K.astype(np.int64).tolist()]

    def _key(self, p):
        return self._keys(p)[0]

    def _blocked(self, pts, lo, hi):
        """``pts`` is (..., n); ``lo``/``hi`` are (m, n) or broadcast against ``pts``."""
        pos = pts[..., list(self.position_dims)]
        out = np.any((pos < self._blo - 1e-12) | (pos > self._bhi + 1e-12), axis=-1)
        if lo.shape[-2]:
            x = pts[..., None, :]
            inside = np.all((x >= lo) & (x <= hi), axis=-1)
            out |= inside.any(axis=-1)
        return out

    def _levels_to_goal(self, goal, P):
        # a lower bound when the reach does not grow with velocity-like states
        X = np.atleast_2d(P)[:, list(self.position_dims)]
        gap = np.maximum(np.maximum(goal.lo - X, X - goal.hi), 0.0)
        return np.max(gap / np.maximum(self._max_disp, 1e-12), axis=1)

    def _prepare(self, n):
        self._other_dims = tuple(i for i in range(n) if i not in self.position_dims)
        self._blo = np.asarray(self.bounds.lo)
        self._bhi = np.asarray(self.bounds.hi)

    def _obstacle_table(self, inp, n):
        """``step -> (lo, hi)`` box arrays in planning coordinates, memoized."""
        tables = {}

        def obstacle_arrays(step):
            if step not in tables:
                obs = inp.obstacles_at(step * self.dt)
                lo = np.full((len(obs), n), -np.inf)
                hi = np.full((len(obs), n), np.inf)
                for j, ob in enumerate(obs):
                    lo[j, list(ob.dims)] = ob.lo
                    hi[j, list(ob.dims)] = ob.hi
                tables[step] = (lo, hi)
            return tables[step]
        return obstacle_arrays

    def _plan_valid(self, plan, inp):
        rest = plan.remaining()
        n = rest.shape[1]
        self._prepare(n)
        if not callable(inp.obstacles):
            lo, hi = self._obstacle_table(inp, n)(0)
            return not self._blocked(rest, lo, hi).any()
        table = self._obstacle_table(inp, n)
        return not any(self._blocked(x[None], *table(i))[0] for i, x in enumerate(rest))

    def _search(self, inp):
        start = np.asarray(inp.state, dtype=float)
        n = len(start)
        self._prepare(n)
        obstacle_arrays = self._obstacle_table(inp, n)

        level_tables = {}

        def level_arrays(level):
            # obstacles for each step of a primitive starting at ``level``, padded to one shape
            if level not in level_tables:
                per = [obstacle_arrays(level * self.k + st) for st in steps]
                m = max(lo.shape[0] for lo, _ in per)
                lo = np.full((self.k, m, n), np.inf)
                hi = np.full((self.k, m, n), -np.inf)
                for j, (a, b) in enumerate(per):
                    lo[j, :a.shape[0]] = a
                    hi[j, :b.shape[0]] = b
                level_tables[level] = (lo, hi)
            return level_tables[level]

        fixed = not callable(inp.obstacles)
        tie = itertools.count()
        # ties go to the deeper node, then to the one nearer the goal centre, which keeps
        # equal-cost fronts from flooding
        glo = np.asarray(inp.goal.lo, dtype=float) - 1e-12
        ghi = np.asarray(inp.goal.hi, dtype=float) + 1e-12
        centre = 0.5 * (glo + ghi)
        pos = list(self.position_dims)
        frontier = [(float(self._levels_to_goal(inp.goal, start)[0]), 0, 0.0, next(tie), start, None)]
        parents = {}
        closed = set()
        expansions = 0
        steps = np.arange(1, self.k + 1)
        while frontier:
            _, neg_level, _, _, p, parent = heapq.heappop(frontier)
            level = -neg_level
            key = self._key(p)
            if key in closed:
                continue
            closed.add(key)
            parents[key] = (parent, p)
            x = p[pos]
            if np.all(x >= glo) and np.all(x <= ghi):
                return self._unwind(parents, key)
            expansions += 1
            if expansions > self.max_expansions:
                break
            segs = self._offsets(p) + p
            # check every state of every primitive at its own lookahead step
            pts = segs[:, 1:, :]
            if fixed:
                lo, hi = obstacle_arrays(0)
            else:
                lo, hi = level_arrays(level)
            bad = self._blocked(pts, lo, hi)
            ok = np.nonzero(~bad.any(axis=1))[0]
            if ok.size == 0:
                continue
            Q = segs[ok, -1]
            # rounded so that equal costs tie exactly and the deeper node wins
            f = np.round(level + 1 + self._levels_to_goal(inp.goal, Q), 9)
            near = np.sum((Q[:, pos] - centre) ** 2, axis=1)
            for c, qk, fc, dc in zip(ok, self._keys(Q), f.tolist(), near.tolist()):
                if qk in closed:
                    continue
                heapq.heappush(frontier, (fc, -(level + 1), dc, next(tie), segs[c, -1], (key, segs[c])))
        raise PlannerStuck("no lattice path to the goal")

    def _unwind(self, parents, key):
        chain = []
        while True:
            parent, p = parents[key]
            if parent is None:
                break
            pkey, seg = parent
            chain.append(seg)
            key = pkey
        states = [chain[-1][0]] if chain else [parents[key][1]]
        for seg in reversed(chain):
            states.extend(list(seg[1:]))
        return np.array(states)

    def next_state(self, inp):
        p = np.asarray(inp.state, dtype=float)
        if _in_goal(inp.goal, p, self.position_dims):
            self._plan = None
            return PlannedStep(p.copy(), np.array([0.0]), p[None].copy())
        plan = self._plan
        stale = (plan is None or not plan.matches(p)
                 or (plan.version != inp.version and not self._plan_valid(plan, inp)))
        if stale:
            states = self._search(inp)
            plan = self._plan = _Trajectory(states, inp.version)
            self.searches += 1
        plan.version = inp.version
        nxt = plan.advance()
        rest = plan.remaining()
        return PlannedStep(nxt.copy(), self.dt * np.arange(len(rest)), rest.copy())


class RRTPlanner:
    """RRT in position space for integrator planning models (state == position).

    After the tree reaches the goal the path is shortcut-smoothed and time-stamped so
    that each dimension moves at most at its speed limit.
    """

    def __init__(self, bounds, vmax, dt, seed=0, step_size=0.5, max_iters=20_000,
                 smoothing=True, collision_step=None):
        self.bounds = bounds
        self.vmax = np.asarray(vmax, dtype=float)
        if self.vmax.shape != (bounds.dim,) or np.any(self.vmax <= 0):
            raise InvalidArgument("one positive speed limit per position dimension is required")
        self.dt = float(dt)
        self.seed = int(seed)
        self.step_size = float(step_size)
        self.max_iters = int(max_iters)
        self.smoothing = smoothing
        self.collision_step = collision_step or self.step_size / 10.0
        self._rng = np.random.default_rng(self.seed)
        self._plan = None
        self.builds = 0

    @classmethod
    def for_model(cls, model, bounds, dt, **kw):
        """Speed limits from an integrator planning model's control box."""
        if model.n_states != bounds.dim:
            raise InvalidArgument("RRT planning needs a velocity-controlled position model")
        vmax = np.minimum(np.abs(model.controls.lo), np.abs(model.controls.hi))
        return cls(bounds, vmax, dt, **kw)

    def _free_point(self, x, obstacles):
        return bool(self.bounds.contains(x, tol=1e-12)) and not collides(obstacles, x)

    def _free_segment(self, a, b, obstacles):
        if not (self._free_point(a, obstacles) and self._free_point(b, obstacles)):
            return False
        return not any(ob.segment_hits(a, b) for ob in obstacles)

    def _build(self, start, goal_pt, obstacles):
        nodes = [start]
        parent = [-1]
        lo, hi = np.asarray(self.bounds.lo), np.asarray(self.bounds.hi)
        if self._free_segment(start, goal_pt, obstacles):
            return [start, goal_pt]
        for _ in range(self.max_iters):
            x = lo + (hi - lo) * self._rng.random(len(lo))
            arr = np.asarray(nodes)
            i = int(np.argmin(np.sum((arr - x) ** 2, axis=1)))
            d = x - nodes[i]
            dist = float(np.linalg.norm(d))
            if dist < 1e-12:
                continue
            new = nodes[i] + d * min(1.0, self.step_size / dist)
            if not self._free_segment(nodes[i], new, obstacles):
                continue
            nodes.append(new)
            parent.append(i)
            if self._free_segment(new, goal_pt, obstacles):
                path = [goal_pt]
                j = len(nodes) - 1
                while j >= 0:
                    path.append(nodes[j])
                    j = parent[j]
                return path[::-1]
        raise PlannerStuck(f"RRT found no path within {self.max_iters} iterations")

    def _shortcut(self, path, obstacles):
        out = [path[0]]
        i = 0
        while i < len(path) - 1:
            j = len(path) - 1
            while j > i + 1 and not self._free_segment(path[i], path[j], obstacles):
                j -= 1
            out.append(path[j])
            i = j
        return out

    def knot_times(self, path):
        t_knots = [0.0]
        for a, b in zip(path[:-1], path[1:]):
            t_knots.append(t_knots[-1] + float(np.max(np.abs(b - a) / self.vmax)))
        return t_knots

    def time_stamp(self, path):
        """Sample the path every ``dt``; each segment lasts ``max_i |dx_i| / vmax_i``."""
        path = [np.asarray(p, dtype=float) for p in path]
        t_knots = self.knot_times(path)
        total = t_knots[-1]
        n = int(math.ceil(total / self.dt - 1e-9))
        times = np.minimum(self.dt * np.arange(n + 1), total)
        states = np.empty((len(times), len(path[0])))
        seg = 0
        for k, t in enumerate(times):
            while seg < len(path) - 2 and t > t_knots[seg + 1]:
                seg += 1
            span = t_knots[seg + 1] - t_knots[seg]
            w = 0.0 if span <= 0 else min(max((t - t_knots[seg]) / span, 0.0), 1.0)
            states[k] = path[seg] + w * (path[seg + 1] - path[seg])
        return times, states

    def _path_valid(self, states, obstacles):
        return all(self._free_segment(a, b, obstacles) for a, b in zip(states[:-1], states[1:]))

    def next_state(self, inp):
        p = np.asarray(inp.state, dtype=float)
        if inp.goal.contains(p, tol=1e-12):
            self._plan = None
            return PlannedStep(p.copy(), np.array([0.0]), p[None].copy())
        obstacles = inp.obstacles_at(0.0)
        plan = self._plan
        stale = (plan is None or not plan.matches(p)
                 or (plan.version != inp.version and not self._path_valid(plan.polyline(), obstacles)))
        if stale:
            goal_pt = np.asarray(inp.goal.mid, dtype=float)
            if collides(obstacles, goal_pt) or not self._free_point(p, obstacles):
                raise PlannerStuck("start or goal lies inside an augmented obstacle")
            path = self._build(p, goal_pt, obstacles)
            if self.smoothing:
                path = self._shortcut(path, obstacles)
            self.builds += 1
            _, states = self.time_stamp(path)
            plan = self._plan = _Trajectory(states, inp.version, path, self.knot_times(path), self.dt)
        plan.version = inp.version
        nxt = plan.advance()
        rest = plan.remaining()
        return PlannedStep(nxt.copy(), self.dt * np.arange(len(rest)), rest.copy())
