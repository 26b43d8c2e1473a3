"""Lax-Friedrichs solver for the running-max HJ variational inequality.

``V(r, h)`` is the value at horizon ``h``. Starting from ``V = l`` it advances

    V <- max(V + dt * (H(p) + sum_i alpha_i (D+_i V - D-_i V) / 2), l)

where ``p`` is the central-average costate and ``H`` the min over tracking control,
max over planning control and disturbance, of ``p . g``.
"""
from dataclasses import dataclass, field
import logging
import time

import numpy as np

from . import kernels
from .errors import (DegenerateDomain, InvalidArgument, InvalidDecomposition, NumericalFailure,
                     UnsupportedModel)
from .grid import Grid, GridFunction
from .relsys import RelativeSystem, Subsystem

log = logging.getLogger(__name__)

# local: per-node max |dH/dp_i|; global: its max over nodes; corner: max |g_i| over input corners
_DISSIPATION = ("local", "global", "corner")


@dataclass(frozen=True)
class SolverConfig:
    horizon: float
    cfl: float = 0.5
    tol: float = 1e-3
    snapshots: int = 11
    order: str = "first"
    max_steps: int = 1_000_000
    stop_on_convergence: bool = True
    untrusted_cells: int = 2
    dissipation: str = "local"
    scheme: str = "auto"

    def __post_init__(self):
        if not self.horizon > 0:
            raise InvalidArgument("horizon must be positive")
        if not 0 < self.cfl <= 1:
            raise InvalidArgument("CFL factor must be in (0, 1]")
        if self.snapshots < 2:
            raise InvalidArgument("need at least two snapshots")
        if self.order != "first":
            raise InvalidArgument("only first-order spatial differences are supported")
        if self.scheme not in ("auto", "lf", "godunov"):
            raise InvalidArgument("scheme must be 'auto', 'lf' or 'godunov'")
        if self.dissipation not in _DISSIPATION:
            raise InvalidArgument(f"dissipation must be one of {_DISSIPATION}")
        if self.max_steps < 1 or self.tol <= 0:
            raise InvalidArgument("max_steps and tol must be positive")


@dataclass
class ValueFunction:
    """Stack of value snapshots ``values[k] = V(., times[k])``.

    A converged function keeps one snapshot, valid for every horizon.
    """

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    converged: bool
    vmin: float
    rel_name: str = ""
    error_name: str = ""
    trusted: np.ndarray = None
    steps: int = 0
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float).reshape((len(self.times),) + tuple(self.grid.shape))
        v.setflags(write=False)
        self.values = v
        if self.trusted is None:
            self.trusted = trusted_mask(self.grid, 2)

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def n_snapshots(self):
        return len(self.times)

    def snapshot(self, k):
        return GridFunction(self.grid, self.values[k])

    def final(self):
        return self.snapshot(self.n_snapshots - 1)

    def index_for_horizon(self, h):
        """Index of the smallest stored horizon >= ``h`` (conservative)."""
        if self.converged:
            return 0
        k = int(np.searchsorted(self.times, h - 1e-9 * max(1.0, self.horizon), side="left"))
        return min(k, self.n_snapshots - 1)


def trusted_mask(grid, cells):
    return grid.boundary_distance() > cells


def hamiltonian_affine(rel, r, q):
    """Analytic ``min_u max_{u_hat, d} q . g(r, u, u_hat, d)`` and its optimizers."""
    if not isinstance(rel, RelativeSystem) or rel.drift is None:
        raise UnsupportedModel("model does not expose control-affine accessors")
    r = np.asarray(r, dtype=float)
    q = np.asarray(q, dtype=float)
    Bu, Bp, Bd = rel.jacobians(r)
    cu, cp, cd = q @ Bu, q @ Bp, q @ Bd
    U, P, D = rel.controls, rel.plan_controls, rel.disturbances
    u = np.where(cu > 0, U.low, np.where(cu < 0, U.high, U.mid))
    uh = np.where(cp > 0, P.high, np.where(cp < 0, P.low, P.mid))
    d = np.where(cd > 0, D.high, np.where(cd < 0, D.low, D.mid))
    H = float(q @ rel.drift(r) + cu @ u + cp @ uh + cd @ d)
    return H, u, uh, d


def _input_boxes(rel, boxes):
    if boxes is None:
        return rel.controls, rel.plan_controls, rel.disturbances
    return boxes


def _as_nodes(field_):
    # (N, ...) evaluated on nodes -> (..., N)
    return np.ascontiguousarray(np.moveaxis(field_, 0, -1))


def prepare_dynamics(rel, grid, boxes=None):
    """Flatten drift and Jacobians on the grid into kernel-ready arrays."""
    if rel.n_states != grid.ndim:
        raise InvalidArgument(f"grid has {grid.ndim} dims, model has {rel.n_states}")
    pts = grid.points().reshape(-1, grid.ndim)
    A = _as_nodes(np.asarray(rel.drift(pts), dtype=float))
    out = [A]
    for J in (rel.control_jacobian, rel.plan_jacobian, rel.disturbance_jacobian):
        if callable(J):
            out.append(_as_nodes(np.asarray(J(pts), dtype=float)))
        else:
            out.append(np.ascontiguousarray(np.asarray(J, dtype=float)[..., None]))
    return tuple(out)


def dissipation_bounds(rel, grid, boxes=None, prepared=None):
    """Per-dimension ``alpha_i = max |g_i|`` over nodes and input-box corners.

    For affine ``g`` the corner maximum is ``|A_i + B_i mid| + |B_i| half`` summed over
    inputs, which is what is evaluated here.
    """
    U, P, D = _input_boxes(rel, boxes)
    A, Bu, Bp, Bd = prepared or prepare_dynamics(rel, grid)
    center = A.copy()
    spread = np.zeros_like(center)
    for B, box in ((Bu, U), (Bp, P), (Bd, D)):
        if box.dim == 0:
            continue
        center = center + np.einsum("kjn,j->kn", B, box.mid)
        spread = spread + np.einsum("kjn,j->kn", np.abs(B), box.half)
    return np.max(np.abs(center) + spread, axis=1)


def hamiltonian_slopes(rel, grid, prepared=None, per_node=False):
    """Per-dimension ``max |dH/dp_i|`` over all costates, maximized over nodes
    unless ``per_node`` (then shape ``(ndim, N)``).

    An input whose Jacobian column touches only row ``i`` at a node sits at the endpoint
    chosen by ``sign(p_i)``, so its contribution is signed; inputs spread over several
    rows are bounded by their full half-width.
    """
    U, P, D = rel.controls, rel.plan_controls, rel.disturbances
    A, Bu, Bp, Bd = prepared or prepare_dynamics(rel, grid)
    center = A.copy()
    signed = np.zeros_like(center)
    free = np.zeros_like(center)
    for B, box, sign in ((Bu, U, -1.0), (Bp, P, 1.0), (Bd, D, 1.0)):
        if box.dim == 0:
            continue
        center = center + np.einsum("kjn,j->kn", B, box.mid)
        nz = B != 0
        single = (nz.sum(axis=0) == 1)[None] & nz
        weight = np.abs(B) * box.half[None, :, None]
        signed = signed + sign * np.where(single, weight, 0.0).sum(axis=1)
        free = free + np.where(single, 0.0, weight).sum(axis=1)
    signed = np.broadcast_to(signed, center.shape)
    free = np.broadcast_to(free, center.shape)
    slope = np.maximum(np.abs(center + signed), np.abs(center - signed)) + free
    if per_node:
        return np.ascontiguousarray(np.broadcast_to(slope, (grid.ndim, grid.size)))
    return np.max(slope, axis=1)


def separable_coefficients(rel, grid, prepared=None):
    """``(a, s)`` with ``H(p) = sum_k a_k p_k + s_k |p_k|`` per node, or None.

    The split exists when every input column touches at most one state row.
    """
    U, P, D = rel.controls, rel.plan_controls, rel.disturbances
    A, Bu, Bp, Bd = prepared or prepare_dynamics(rel, grid)
    a = A.copy()
    s = np.zeros_like(a)
    for B, box, sign in ((Bu, U, -1.0), (Bp, P, 1.0), (Bd, D, 1.0)):
        if box.dim == 0:
            continue
        if np.any((B != 0).sum(axis=0) > 1):
            return None
        a = a + np.einsum("kjn,j->kn", B, box.mid)
        s = s + sign * np.einsum("kjn,j->kn", np.abs(B), box.half)
    if s.shape[1] != a.shape[1]:
        s = np.broadcast_to(s, a.shape)
    return np.ascontiguousarray(a), np.ascontiguousarray(s)


def _vmin(values, trusted):
    sel = values[trusted]
    if sel.size == 0:
        return None
    return float(sel.min())


def solve_hjvi(rel, grid, cfg, progress=None):
    """Solve on ``grid`` up to ``cfg.horizon`` or until the update stalls."""
    t0 = time.perf_counter()
    U, P, D = rel.controls, rel.plan_controls, rel.disturbances
    prepared = prepare_dynamics(rel, grid)
    A, Bu, Bp, Bd = prepared
    split = None
    if cfg.scheme != "lf":
        split = separable_coefficients(rel, grid, prepared)
        if split is None and cfg.scheme == "godunov":
            raise UnsupportedModel(f"{rel.name}: Hamiltonian is not separable per dimension")
    if split is not None:
        scheme = "godunov"
        alpha = np.abs(split[0]) + np.abs(split[1])
    else:
        scheme = "lf"
        if cfg.dissipation == "corner":
            alpha = dissipation_bounds(rel, grid, prepared=prepared)[:, None]
        elif cfg.dissipation == "global":
            alpha = hamiltonian_slopes(rel, grid, prepared=prepared)[:, None]
        else:
            alpha = hamiltonian_slopes(rel, grid, prepared=prepared, per_node=True)
    alpha = np.ascontiguousarray(alpha)
    dx = grid.spacing
    rate = float(np.max(np.sum(alpha / dx[:, None], axis=0)))
    dt_cfl = cfg.cfl / rate if rate > 0 else cfg.horizon

    L = np.ascontiguousarray(rel.error(grid.points()).reshape(-1), dtype=float)
    if not np.all(np.isfinite(L)):
        raise NumericalFailure(0, "error function is not finite on the grid")
    trusted = trusted_mask(grid, cfg.untrusted_cells)
    tflat = np.ascontiguousarray(trusted.reshape(-1))
    if not tflat.any():
        raise DegenerateDomain("every node is within the untrusted boundary band")

    V = L.copy()
    out = np.empty_like(V)
    shape = np.asarray(grid.shape, dtype=np.int64)
    strides = grid.strides
    periodic = np.asarray(grid.periodic, dtype=np.bool_)
    if scheme == "godunov":
        step_fn = kernels.godunov_step
        args = (shape, strides, periodic, dx, split[0], split[1])
    else:
        step_fn = kernels.lf_step
        args = (shape, strides, periodic, dx, alpha, A, Bu, U.mid, U.half, Bp, P.mid, P.half,
                Bd, D.mid, D.half)

    snap_times = np.linspace(0.0, cfg.horizon, cfg.snapshots)
    snaps = [L.copy()]
    t = 0.0
    step = 0
    converged = False
    nxt = 1
    while nxt < len(snap_times):
        if step >= cfg.max_steps:
            log.warning("max steps reached at horizon %.4g", t)
            break
        dt = min(dt_cfl, snap_times[nxt] - t)
        delta = step_fn(V, L, *args, dt, tflat, out)
        step += 1
        if not np.isfinite(delta):
            raise NumericalFailure(step, "non-finite value after update")
        change = delta / dt
        V, out = out, V
        t += dt
        if snap_times[nxt] - t <= 1e-12 * max(1.0, cfg.horizon):
            t = float(snap_times[nxt])
            snaps.append(V.copy())
            nxt += 1
        if progress is not None:
            progress(step, t, change)
        if cfg.stop_on_convergence and change < cfg.tol:
            converged = True
            break

    if converged:
        times = np.array([t])
        values = V.copy()[None]
    else:
        times = snap_times[:len(snaps)]
        values = np.stack(snaps)
    vmin = _vmin(values[-1].reshape(grid.shape), trusted)
    vf = ValueFunction(grid, times, values, converged, vmin, rel.name, rel.name + ":l",
                       trusted, step, time.perf_counter() - t0,
                       {"scheme": scheme, "dt": dt_cfl, "alpha_max": alpha.max(axis=1).tolist(), "horizon_reached": t,
                        "cfl": cfg.cfl, "tol": cfg.tol})
    log.info("solved %s: %d steps, horizon %.3f, converged=%s, vmin=%.4g",
             rel.name, step, t, converged, vmin)
    return vf


def _subsystem_list(subsystems):
    subs = []
    offset = 0
    for k, s in enumerate(subsystems):
        if isinstance(s, Subsystem):
            subs.append(s)
        elif isinstance(s, RelativeSystem):
            n = s.n_states
            subs.append(Subsystem(f"sub{k}", s, tuple(range(offset, offset + n)),
                                  (), (), ()))
            offset += n
        else:
            raise InvalidArgument(f"not a subsystem: {s!r}")
    seen = set()
    for s in subs:
        overlap = seen.intersection(s.state_idx)
        if overlap:
            raise InvalidDecomposition(f"state indices {sorted(overlap)} appear in more than one subsystem")
        seen.update(s.state_idx)
    return subs


def solve_decomposed(subsystems, grids, cfg, progress=None):
    """Solve each independent subsystem; the composed value is their pointwise max.

    Returns the per-subsystem value functions and the composed ``max_i vmin_i``.
    """
    subs = _subsystem_list(subsystems)
    if isinstance(grids, dict):
        grids = [grids[s.name] for s in subs]
    if len(grids) != len(subs):
        raise InvalidArgument("one grid per subsystem is required")
    # identical blocks on identical grids are solved once
    solved = {}
    vfs = []
    for s, g in zip(subs, grids):
        key = (id(s.rel), g)
        if key not in solved:
            solved[key] = solve_hjvi(s.rel, g, cfg, progress)
        vfs.append(solved[key])
    return vfs, max(vf.vmin for vf in vfs)
