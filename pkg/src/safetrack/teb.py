"""Tracking error bounds and the online queries built on a value function.

``B(tau) = {r : V(r, T - tau) <= vmin + eps}``. A query at horizon ``h`` reads the
smallest stored horizon ``>= h``; values grow with horizon, so that snapshot is the
conservative one.
"""
from dataclasses import dataclass
import logging

import numpy as np

from .errors import DegenerateDomain, DegenerateTEB, InvalidArgument, OutOfDomain
from .grid import gradient_values, interpolate_fields
from .hjsolver import hamiltonian_affine
from .kernels_np import _one_sided
from .relsys import Subsystem

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TEBQuery:
    vmin: float
    eps: float = 0.0

    def __post_init__(self):
        if not self.eps >= 0:
            raise InvalidArgument("eps must be nonnegative")

    @property
    def level(self):
        return self.vmin + self.eps


@dataclass(frozen=True)
class TEBExtents:
    tau: float
    half_widths: np.ndarray
    dims: tuple

    def __post_init__(self):
        hw = np.asarray(self.half_widths, dtype=float)
        if np.any(hw < 0):
            raise InvalidArgument("half-widths must be nonnegative")
        object.__setattr__(self, "half_widths", hw)


def min_value(vf):
    sel = vf.values[-1][vf.trusted]
    if sel.size == 0:
        raise DegenerateDomain("no trusted nodes")
    return float(sel.min())


def default_eps(vf):
    """Two cells of value slack, ``2 max_i |D V|_i dx_i`` at the minimizing node."""
    V = vf.values[-1]
    masked = np.where(vf.trusted, V, np.inf)
    idx = np.unravel_index(int(np.argmin(masked)), V.shape)
    dx = vf.grid.spacing
    slack = 0.0
    for k in range(vf.grid.ndim):
        dm, dp = _one_sided(V, k, dx[k], vf.grid.periodic[k])
        slack = max(slack, max(abs(dm[idx]), abs(dp[idx])) * dx[k])
    return 2.0 * slack


def make_query(vf, eps=None):
    return TEBQuery(min_value(vf), default_eps(vf) if eps is None else float(eps))


def _horizon(vf, tau):
    if tau < -1e-12:
        raise InvalidArgument("tau must be nonnegative")
    return max(vf.horizon - tau, 0.0)


def value_at(vf, r, tau):
    """``V(r, T - tau)`` from the conservative snapshot; raises OutOfDomain."""
    k = vf.index_for_horizon(_horizon(vf, tau))
    return float(interpolate_fields(vf.grid, vf.values[k][None], np.asarray(r, float))[0])


def in_teb(vf, r, tau, q):
    return value_at(vf, r, tau) <= q.level


def snapshot_taus(vf):
    """Ascending ``tau`` values at which snapshots are stored."""
    if vf.converged:
        return np.array([0.0])
    return np.sort(vf.horizon - vf.times)


def smallest_tau(vf, r, q):
    """Smallest snapshot ``tau`` whose TEB contains ``r``; None if none does."""
    try:
        vals = interpolate_fields(vf.grid, vf.values.reshape(vf.n_snapshots, -1),
                                  np.asarray(r, float))
    except OutOfDomain:
        return None
    if vf.converged:
        return 0.0 if vals[0] <= q.level else None
    # times ascending -> tau descending; values non-decreasing in horizon
    for k in range(vf.n_snapshots - 1, -1, -1):
        if vals[k] <= q.level:
            return float(vf.horizon - vf.times[k])
    return None


def sublevel_extents(grid, V, level, error_idx, radial=None):
    """Half-widths of ``{V <= level}`` over the listed dims, by exact node scan."""
    inside = np.asarray(V).reshape(grid.shape) <= level
    if not inside.any():
        raise DegenerateTEB(f"sublevel set at level {level:.4g} is empty; raise eps")
    pts = grid.points()[inside]
    hw = np.array([np.abs(pts[:, i]).max() for i in error_idx])
    if radial is not None:
        i, j = radial
        rad = float(np.sqrt(pts[:, i] ** 2 + pts[:, j] ** 2).max())
        for pos, dim in enumerate(error_idx):
            if dim in radial:
                hw[pos] = rad
    return hw


def teb_extents(vf, tau, q, error_idx, radial=None):
    """Per error dimension, the largest ``|r_i|`` over nodes inside the TEB.

    ``radial`` names a pair of error dimensions to replace by their joint radius, for
    frames rotated by the planning heading.
    """
    k = vf.index_for_horizon(_horizon(vf, tau))
    g = vf.grid
    hw = sublevel_extents(g, vf.values[k], q.level, error_idx, radial)
    for pos, i in enumerate(error_idx):
        # auxiliary dims may legitimately span the whole box; error dims should not
        edge = max(abs(g.lo[i]), abs(g.hi[i])) - 2 * g.spacing[i]
        if not g.periodic[i] and hw[pos] >= edge:
            log.warning("TEB at tau=%.3g reaches the untrusted band of dimension %d", tau, i)
    return TEBExtents(float(tau), hw, tuple(error_idx))


class _GradientCache:
    def __init__(self, vf):
        self.vf = vf
        self._cache = {}

    def fields(self, k):
        if k not in self._cache:
            g = gradient_values(self.vf.grid, self.vf.values[k])
            self._cache[k] = np.ascontiguousarray(g.reshape(self.vf.grid.ndim, -1))
        return self._cache[k]


_GRADIENTS = {}


def _grad_cache(vf):
    key = id(vf)
    entry = _GRADIENTS.get(key)
    if entry is None or entry.vf is not vf:
        entry = _GRADIENTS[key] = _GradientCache(vf)
    return entry


def costate_at(vf, r, tau, clip=False):
    k = vf.index_for_horizon(_horizon(vf, tau))
    r = np.asarray(r, dtype=float)
    if clip:
        r = vf.grid.clip(r)
    return interpolate_fields(vf.grid, _grad_cache(vf).fields(k), r)


def optimal_tracking_control(vf, rel, r, tau, clip=False):
    _, u, _, _ = hamiltonian_affine(rel, r, costate_at(vf, r, tau, clip))
    return u


def worst_case_inputs(vf, rel, r, tau, clip=False):
    _, _, uh, d = hamiltonian_affine(rel, r, costate_at(vf, r, tau, clip))
    return uh, d


class TrackingBound:
    """One or more independent value functions viewed as a single TEB.

    The composed value is the max of the parts' values and the composed level is
    ``max_i vmin_i + eps`` with ``eps`` the largest of the parts' default slacks.
    """

    def __init__(self, rel, parts, eps=None):
        """``parts`` pairs each :class:`Subsystem` with its solved value function."""
        self.rel = rel
        self.parts = []
        for sub, vf in parts:
            if not isinstance(sub, Subsystem):
                raise InvalidArgument("parts must pair a Subsystem with a ValueFunction")
            if vf.grid.ndim != len(sub.state_idx):
                raise InvalidArgument(f"{sub.name}: grid dimension does not match subsystem")
            self.parts.append((sub, vf))
        self.vmin = max(min_value(vf) for _, vf in self.parts)
        self.eps = max(default_eps(vf) for _, vf in self.parts) if eps is None else float(eps)
        self.query = TEBQuery(self.vmin, self.eps)
        self.converged = all(vf.converged for _, vf in self.parts)
        horizons = {round(vf.horizon, 9) for _, vf in self.parts if not vf.converged}
        if len(horizons) > 1:
            raise InvalidArgument("non-converged parts must share a horizon")
        self.horizon = horizons.pop() if horizons else 0.0
        self.radial = self._radial_pair()

    @classmethod
    def from_solution(cls, rel, subsystems, vfs, eps=None):
        return cls(rel, list(zip(subsystems, vfs)), eps)

    @classmethod
    def single(cls, rel, vf, eps=None):
        """Bound for one value function over the whole of ``rel``."""
        sub = Subsystem("full", rel, tuple(range(rel.n_states)), tuple(range(rel.controls.dim)),
                        tuple(range(rel.plan_controls.dim)), tuple(range(rel.disturbances.dim)))
        return cls(rel, [(sub, vf)], eps)

    @property
    def level(self):
        return self.query.level

    def _radial_pair(self):
        if self.rel.transform == "rotation":
            return tuple(self.rel.rot_idx)
        return None

    def _local(self, sub, r):
        return np.asarray(r, dtype=float)[list(sub.state_idx)]

    def _tau_for(self, vf, tau):
        # parts that converged ignore tau; the rest share the horizon
        return 0.0 if vf.converged else tau

    def value(self, r, tau=0.0):
        return max(value_at(vf, self._local(sub, r), self._tau_for(vf, tau))
                   for sub, vf in self.parts)

    def contains(self, r, tau=0.0):
        try:
            return self.value(r, tau) <= self.level
        except OutOfDomain:
            return False

    def in_domain(self, r):
        return all(vf.grid.contains(self._local(sub, r)) for sub, vf in self.parts)

    def taus(self):
        if self.converged:
            return np.array([0.0])
        out = set()
        for _, vf in self.parts:
            if not vf.converged:
                out.update(np.round(snapshot_taus(vf), 12).tolist())
        return np.array(sorted(out))

    def smallest_tau(self, r):
        for tau in self.taus():
            if self.contains(r, tau):
                return float(tau)
        return None

    def snap_up(self, tau):
        """Smallest snapshot tau that is >= ``tau`` (the last one if none)."""
        taus = self.taus()
        k = int(np.searchsorted(taus, tau - 1e-9, side="left"))
        return float(taus[min(k, len(taus) - 1)])

    def extents(self, tau=None):
        """Half-widths over the full error index list of ``rel`` at ``tau``."""
        if tau is None:
            tau = self.horizon
        hw = np.zeros(len(self.rel.error_idx))
        for sub, vf in self.parts:
            local_err = [i for i, g in enumerate(sub.state_idx) if g in self.rel.error_idx]
            if not local_err:
                continue
            radial = None
            if self.radial is not None and all(g in sub.state_idx for g in self.radial):
                radial = tuple(sub.state_idx.index(g) for g in self.radial)
            ext = teb_extents(vf, self._tau_for(vf, tau), self.query, local_err, radial)
            for li, w in zip(local_err, ext.half_widths):
                hw[self.rel.error_idx.index(sub.state_idx[li])] = w
        return TEBExtents(float(tau), hw, tuple(self.rel.error_idx))

    def plan_extents(self, tau=None):
        """Extents mapped onto planning-state dimensions (zero where unmatched)."""
        ext = self.extents(tau)
        out = np.zeros(self.rel.planning.n_states)
        for w, i in zip(ext.half_widths, ext.dims):
            j = self.rel.matched_plan_dim(i)
            if j is not None:
                out[j] = max(out[j], w)
        return out

    def _assemble(self, r, tau, clip):
        r = np.asarray(r, dtype=float)
        key = (r.tobytes(), float(tau), bool(clip))
        # control and worst case are usually asked for at the same point in turn
        if getattr(self, "_last", None) is not None and self._last[0] == key:
            return tuple(a.copy() for a in self._last[1])
        out = self._assemble_at(r, tau, clip)
        self._last = (key, out)
        return tuple(a.copy() for a in out)

    def _assemble_at(self, r, tau, clip):
        rel = self.rel
        u = rel.controls.mid.copy()
        uh = rel.plan_controls.mid.copy()
        d = rel.disturbances.mid.copy()
        for sub, vf in self.parts:
            rl = self._local(sub, r)
            q = costate_at(vf, rl, self._tau_for(vf, tau), clip)
            _, su, suh, sd = hamiltonian_affine(sub.rel, vf.grid.clip(rl) if clip else rl, q)
            u[list(sub.control_idx)] = su
            uh[list(sub.plan_control_idx)] = suh
            d[list(sub.dist_idx)] = sd
        return u, uh, d

    def optimal_control(self, r, tau=0.0, clip=False):
        return self._assemble(r, tau, clip)[0]

    def worst_case(self, r, tau=0.0, clip=False):
        _, uh, d = self._assemble(r, tau, clip)
        return uh, d
