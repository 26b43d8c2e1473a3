"""Obstacle worlds, sensing, and the true / sensed / augmented constraint sets.

All obstacles are axis-aligned boxes in planning-state coordinates. ``dims`` says which
planning dimensions a box constrains; the rest are unconstrained.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import GoalTooSmall, InvalidArgument
from .relsys import BoxSet


@dataclass(frozen=True)
class Obstacle:
    box: BoxSet
    dims: tuple

    def __post_init__(self):
        if len(self.dims) != self.box.dim or self.box.dim == 0:
            raise InvalidArgument("obstacle dims must match its box")
        if np.any(np.asarray(self.box.hi) <= np.asarray(self.box.lo)):
            raise InvalidArgument("obstacle box must have nonempty interior")

    @classmethod
    def from_bounds(cls, lo, hi, dims=None):
        lo = tuple(float(v) for v in lo)
        return cls(BoxSet(lo, tuple(float(v) for v in hi)),
                   tuple(range(len(lo))) if dims is None else tuple(dims))

    @classmethod
    def from_vertices(cls, vertices, dims=None):
        """Bounding box of a polytope given by its vertices."""
        v = np.asarray(vertices, dtype=float)
        return cls.from_bounds(v.min(axis=0), v.max(axis=0), dims)

    @property
    def lo(self):
        return np.asarray(self.box.lo)

    @property
    def hi(self):
        return np.asarray(self.box.hi)

    def contains_point(self, x, strict=False):
        x = np.asarray(x, dtype=float)[..., list(self.dims)]
        if strict:
            return np.all((x > self.lo) & (x < self.hi), axis=-1)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def contains_box(self, other):
        return (self.dims == other.dims and np.all(self.lo <= other.lo + 1e-12)
                and np.all(self.hi >= other.hi - 1e-12))

    def grow(self, widths):
        w = np.asarray(widths, dtype=float)
        return Obstacle(BoxSet(tuple(self.lo - w), tuple(self.hi + w)), self.dims)

    def hull(self, other):
        return Obstacle(BoxSet(tuple(np.minimum(self.lo, other.lo)),
                               tuple(np.maximum(self.hi, other.hi))), self.dims)

    def segment_hits(self, a, b, margin=0.0):
        """Whether the segment ``a -> b`` meets the (closed) box; slab test."""
        a = np.asarray(a, dtype=float)[list(self.dims)]
        b = np.asarray(b, dtype=float)[list(self.dims)]
        lo, hi = self.lo - margin, self.hi + margin
        d = b - a
        t0, t1 = 0.0, 1.0
        for k in range(len(d)):
            if abs(d[k]) < 1e-15:
                if a[k] < lo[k] or a[k] > hi[k]:
                    return False
                continue
            ta, tb = (lo[k] - a[k]) / d[k], (hi[k] - a[k]) / d[k]
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 > t1:
                return False
        return True


@dataclass(frozen=True)
class SensorModel:
    kind: str
    radius: float
    half_angle: float = math.pi / 6

    def __post_init__(self):
        if self.kind not in ("radial", "fan"):
            raise InvalidArgument("sensor kind must be 'radial' or 'fan'")
        if not self.radius > 0:
            raise InvalidArgument("sensor radius must be positive")
        if self.kind == "fan" and not 0 < self.half_angle <= math.pi:
            raise InvalidArgument("fan half-angle must be in (0, pi]")


@dataclass(frozen=True)
class Environment:
    """World bounds and goal over the position dims; obstacles in planning coordinates."""

    bounds: BoxSet
    obstacles: tuple
    goal: BoxSet
    sensor: SensorModel
    position_dims: tuple = None

    def __post_init__(self):
        if self.position_dims is None:
            object.__setattr__(self, "position_dims", tuple(range(self.bounds.dim)))
        if self.goal.dim != len(self.position_dims):
            raise InvalidArgument("goal box must cover the position dimensions")


def _ball_box_fragment(box_lo, box_hi, c, R):
    """Bounding box of ``box ∩ ball(c, R)`` or None if they are disjoint."""
    nearest = np.clip(c, box_lo, box_hi)
    gap = (nearest - c) ** 2
    total = gap.sum()
    if total > R * R:
        return None
    lo, hi = box_lo.copy(), box_hi.copy()
    for k in range(len(c)):
        reach = math.sqrt(max(R * R - (total - gap[k]), 0.0))
        lo[k] = max(box_lo[k], c[k] - reach)
        hi[k] = min(box_hi[k], c[k] + reach)
    if np.any(lo > hi):
        return None
    return lo, hi


def _clip_halfplane(poly, n, off):
    """Sutherland-Hodgman: keep the part of ``poly`` with ``n . x <= off``."""
    out = []
    m = len(poly)
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        fa, fb = n @ a - off, n @ b - off
        if fa <= 0:
            out.append(a)
        if fa * fb < 0:
            out.append(a + (b - a) * (fa / (fa - fb)))
    return out


# The disk is replaced by a circumscribed polygon with this many sides.
_DISK_SIDES = 64


def _fan_fragment(box_lo, box_hi, c, heading, R, half_angle):
    """Bounding box of a planar rectangle intersected with a circular sector."""
    if half_angle >= math.pi:
        return _ball_box_fragment(box_lo, box_hi, c, R)
    # split the wedge into convex pieces of at most a right angle each
    pieces = max(1, math.ceil(2 * half_angle / (math.pi / 2)))
    edges = np.linspace(heading - half_angle, heading + half_angle, pieces + 1)
    rect = [np.array(v, float) for v in ((box_lo[0], box_lo[1]), (box_hi[0], box_lo[1]),
                                          (box_hi[0], box_hi[1]), (box_lo[0], box_hi[1]))]
    lo = np.array([np.inf, np.inf])
    hi = -lo
    for a0, a1 in zip(edges[:-1], edges[1:]):
        poly = [v - c for v in rect]
        # inside means left of the a0 ray and right of the a1 ray
        poly = _clip_halfplane(poly, np.array([math.sin(a0), -math.cos(a0)]), 0.0)
        if poly:
            poly = _clip_halfplane(poly, np.array([-math.sin(a1), math.cos(a1)]), 0.0)
        for k in range(_DISK_SIDES):
            if not poly:
                break
            phi = 2 * math.pi * (k + 0.5) / _DISK_SIDES
            poly = _clip_halfplane(poly, np.array([math.cos(phi), math.sin(phi)]), R)
        if poly:
            pts = np.array(poly) + c
            lo = np.minimum(lo, pts.min(axis=0))
            hi = np.maximum(hi, pts.max(axis=0))
    if not np.all(np.isfinite(lo)):
        return None
    # the polygon over-approximates the disk; never report more than the obstacle
    lo = np.maximum(lo, box_lo)
    hi = np.minimum(hi, box_hi)
    if np.any(lo > hi):
        return None
    return lo, hi


def sensor_fragment(obstacle, position, sensor, heading=0.0):
    """Box over-approximation of ``obstacle ∩ sensor region``, or None.

    ``position`` is the sensor location over the obstacle's dims. A fan sensor acts on
    the first two dims; further dims are cut by the radius alone.
    """
    lo, hi = obstacle.lo.astype(float), obstacle.hi.astype(float)
    c = np.asarray(position, dtype=float)
    R = float(sensor.radius)
    ball = _ball_box_fragment(lo, hi, c, R)
    if ball is None:
        return None
    if sensor.kind == "radial" or len(c) < 2:
        flo, fhi = ball
    else:
        fan = _fan_fragment(lo[:2], hi[:2], c[:2], heading, R, sensor.half_angle)
        if fan is None:
            return None
        flo, fhi = ball[0].copy(), ball[1].copy()
        flo[:2] = np.maximum(flo[:2], fan[0])
        fhi[:2] = np.minimum(fhi[:2], fan[1])
        if np.any(flo > fhi):
            return None
    if np.any(fhi - flo <= 0):
        # a touching contact reveals nothing with volume
        return None
    return Obstacle(BoxSet(tuple(flo), tuple(fhi)), obstacle.dims)


@dataclass
class ConstraintState:
    """True obstacles (hidden), what has been sensed of each, and the augmented sets."""

    true_obstacles: tuple
    sensed: list = None
    augmented: list = field(default_factory=list)
    version: int = 0

    def __post_init__(self):
        self.true_obstacles = tuple(self.true_obstacles)
        if self.sensed is None:
            self.sensed = [None] * len(self.true_obstacles)

    def sensed_list(self):
        return [s for s in self.sensed if s is not None]

    @property
    def sensed_count(self):
        return sum(s is not None for s in self.sensed)

    def reveal_all(self):
        self.sensed = list(self.true_obstacles)
        self.version += 1

    def sense(self, position, sensor, heading=0.0):
        """Reveal what the sensor sees from ``position``; returns the grown fragments."""
        new = []
        for i, ob in enumerate(self.true_obstacles):
            pos = np.asarray(position, dtype=float)[list(ob.dims)]
            frag = sensor_fragment(ob, pos, sensor, heading)
            if frag is None:
                continue
            old = self.sensed[i]
            merged = frag if old is None else old.hull(frag)
            if old is None or not old.contains_box(merged):
                self.sensed[i] = merged
                new.append(merged)
        if new:
            self.version += 1
        return new


def sense(state, position, sensor, heading=0.0):
    return state.sense(position, sensor, heading)


def augment_constraints(sensed, extents):
    """Grow each box by the half-widths of its dims; ``extents`` is indexed by planning dim."""
    ext = np.asarray(extents, dtype=float)
    if np.any(ext < 0):
        raise InvalidArgument("extents must be nonnegative")
    return [ob.grow(ext[list(ob.dims)]) for ob in sensed]


def augment_schedule(sensed, extents_seq):
    """One augmented set per lookahead step, from a sequence of per-step extents."""
    return [augment_constraints(sensed, e) for e in extents_seq]


def contract_bounds(box, extents):
    """Shrink a state box (e.g. planner velocity limits) by the given half-widths."""
    w = np.asarray(extents, dtype=float)
    lo, hi = np.asarray(box.lo) + w, np.asarray(box.hi) - w
    if np.any(lo > hi):
        raise InvalidArgument("box is narrower than the bound")
    return BoxSet(tuple(lo), tuple(hi))


def min_sensing_radius(position_extents, planner_step):
    ext = np.atleast_1d(np.asarray(position_extents, dtype=float))
    return float((ext.max() if ext.size else 0.0) + planner_step)


def goal_contract(goal, position_extents):
    """Shrink the goal box by the position extents; GoalTooSmall if nothing is left."""
    w = np.asarray(position_extents, dtype=float)
    lo, hi = np.asarray(goal.lo) + w, np.asarray(goal.hi) - w
    if np.any(lo >= hi):
        raise GoalTooSmall(
            f"goal half-widths {np.asarray(goal.half)} do not exceed the tracking error bound "
            f"{w}; the goal is unreachable under this bound")
    return BoxSet(tuple(lo), tuple(hi))


def collides(obstacles, x):
    """Whether the planning-coordinate point ``x`` lies in any obstacle (closed boxes)."""
    return any(bool(ob.contains_point(x)) for ob in obstacles)
