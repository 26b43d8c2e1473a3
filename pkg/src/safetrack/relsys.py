"""Tracking models, planning models and the relative systems built from them.

Every model carries two views of its dynamics: the closed-form flow, and the
control-affine decomposition ``drift(x) + B_u u + B_p u_hat + B_d d`` used by the
solver's analytic Hamiltonian. Jacobians are either constant ``(n, m)`` arrays or
callables returning ``(..., n, m)``.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import InvalidArgument, ModelNotFound
from .grid import Grid

_BOX_TOL = 1e-9


@dataclass(frozen=True)
class BoxSet:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise InvalidArgument("box bounds differ in length")
        for k, (a, b) in enumerate(zip(lo, hi)):
            if not (math.isfinite(a) and math.isfinite(b)) or a > b:
                raise InvalidArgument(f"box dimension {k}: need finite lower <= upper, got [{a}, {b}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def symmetric(cls, *half_widths):
        return cls(tuple(-h for h in half_widths), tuple(half_widths))

    @property
    def dim(self):
        return len(self.lo)

    @property
    def low(self):
        return np.array(self.lo)

    @property
    def high(self):
        return np.array(self.hi)

    @property
    def mid(self):
        return 0.5 * (self.low + self.high)

    @property
    def half(self):
        return 0.5 * (self.high - self.low)

    def contains(self, x, tol=_BOX_TOL):
        x = np.asarray(x, dtype=float)
        scale = tol * np.maximum(1.0, np.abs(self.high - self.low))
        return bool(np.all(x >= self.low - scale) and np.all(x <= self.high + scale))

    def clip(self, x):
        return np.clip(x, self.low, self.high)

    def corners(self):
        """All ``2**dim`` vertices, shape ``(2**dim, dim)``."""
        if self.dim == 0:
            return np.zeros((1, 0))
        grids = np.meshgrid(*[(a, b) for a, b in zip(self.lo, self.hi)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def lattice(self, per_dim):
        """Evenly spaced points, ``per_dim`` per dimension."""
        if self.dim == 0:
            return np.zeros((1, 0))
        axes = [np.linspace(a, b, per_dim) for a, b in zip(self.lo, self.hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


EMPTY_BOX = BoxSet((), ())


def _jac(J, x):
    if callable(J):
        return J(x)
    x = np.asarray(x)
    J = np.asarray(J, dtype=float)
    return np.broadcast_to(J, x.shape[:-1] + J.shape)


def _apply(J, x, v):
    # (..., n, m) @ (..., m) -> (..., n)
    return np.einsum("...nm,...m->...n", _jac(J, x), np.asarray(v, dtype=float))


def _check_in(box, v, what):
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (box.dim,):
        raise InvalidArgument(f"{what} has shape {v.shape}, expected last dimension {box.dim}")
    if not box.contains(v):
        raise InvalidArgument(f"{what} {v} outside its box [{box.lo}, {box.hi}]")
    return v


@dataclass(frozen=True)
class TrackingModel:
    name: str
    n_states: int
    controls: BoxSet
    disturbances: BoxSet
    flow_fn: object
    drift: object
    control_jacobian: object
    disturbance_jacobian: object
    state_names: tuple = ()

    def flow(self, s, u, d):
        return self.flow_fn(np.asarray(s, float), np.asarray(u, float), np.asarray(d, float))

    def affine_flow(self, s, u, d):
        s = np.asarray(s, dtype=float)
        return (self.drift(s) + _apply(self.control_jacobian, s, u)
                + _apply(self.disturbance_jacobian, s, d))


@dataclass(frozen=True)
class PlanningModel:
    name: str
    n_states: int
    controls: BoxSet
    flow_fn: object
    drift: object
    control_jacobian: object
    state_names: tuple = ()

    def flow(self, p, u_hat):
        return self.flow_fn(np.asarray(p, float), np.asarray(u_hat, float))

    def affine_flow(self, p, u_hat):
        p = np.asarray(p, dtype=float)
        return self.drift(p) + _apply(self.control_jacobian, p, u_hat)


@dataclass(frozen=True)
class RelativeSystem:
    """Dynamics of the tracking model seen from the planning model.

    ``transform`` is ``"identity"`` or ``"rotation"``; a rotation turns the position
    pair ``rot_idx`` by minus the planning heading ``p[heading_idx]``.
    """

    name: str
    tracking: TrackingModel
    planning: PlanningModel
    Q: np.ndarray
    transform: str
    error_idx: tuple
    aux_idx: tuple
    error_fn: object
    flow_fn: object
    drift: object
    control_jacobian: object
    plan_jacobian: object
    disturbance_jacobian: object
    error_uses: tuple = ()
    periodic: tuple = ()
    heading_idx: int = None
    rot_idx: tuple = (0, 1)
    state_names: tuple = ()
    performance: object = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        n = self.n_states
        if Q.shape != (self.tracking.n_states, self.planning.n_states):
            raise InvalidArgument(f"Q has shape {Q.shape}")
        if not np.all((Q == 0) | (Q == 1)) or not np.all(Q.sum(axis=0) == 1):
            raise InvalidArgument("every column of Q needs exactly one 1")
        if sorted(self.error_idx + self.aux_idx) != list(range(n)):
            raise InvalidArgument("error and auxiliary indices must partition the relative state")
        if self.transform not in ("identity", "rotation"):
            raise InvalidArgument(f"unsupported transform {self.transform!r}")
        if self.transform == "rotation" and self.heading_idx is None:
            raise InvalidArgument("rotation transform needs the planning heading index")

    @property
    def n_states(self):
        return self.tracking.n_states

    @property
    def controls(self):
        return self.tracking.controls

    @property
    def plan_controls(self):
        return self.planning.controls

    @property
    def disturbances(self):
        return self.tracking.disturbances

    def matched_plan_dim(self, r_index):
        """Planning dimension matched to relative-state index ``r_index``, or None."""
        col = np.nonzero(self.Q[r_index])[0]
        return int(col[0]) if col.size else None

    def relative_state(self, s, p):
        s = np.asarray(s, dtype=float)
        p = np.asarray(p, dtype=float)
        if s.shape[-1] != self.tracking.n_states or p.shape[-1] != self.planning.n_states:
            raise InvalidArgument(
                f"state dimensions {s.shape[-1]}/{p.shape[-1]} do not match "
                f"{self.tracking.n_states}/{self.planning.n_states}")
        diff = s - p @ self.Q.T
        if self.transform == "rotation":
            th = p[..., self.heading_idx]
            c, sn = np.cos(th), np.sin(th)
            i, j = self.rot_idx
            xi, yi = diff[..., i].copy(), diff[..., j].copy()
            diff[..., i] = c * xi + sn * yi
            diff[..., j] = -sn * xi + c * yi
        for k in self.periodic:
            diff[..., k] = _wrap_angle(diff[..., k])
        return diff

    def tracking_state(self, r, p):
        """Inverse of :meth:`relative_state` (angles are not unwrapped)."""
        r = np.array(r, dtype=float)
        p = np.asarray(p, dtype=float)
        if self.transform == "rotation":
            th = p[..., self.heading_idx]
            c, sn = np.cos(th), np.sin(th)
            i, j = self.rot_idx
            xi, yi = r[..., i].copy(), r[..., j].copy()
            r[..., i] = c * xi - sn * yi
            r[..., j] = sn * xi + c * yi
        return r + p @ self.Q.T

    def relative_flow(self, r, u, u_hat, d):
        u = _check_in(self.controls, u, "tracking control")
        u_hat = _check_in(self.plan_controls, u_hat, "planning control")
        d = _check_in(self.disturbances, d, "disturbance")
        return self.flow_fn(np.asarray(r, float), u, u_hat, d)

    def affine_flow(self, r, u, u_hat, d):
        r = np.asarray(r, dtype=float)
        return (self.drift(r) + _apply(self.control_jacobian, r, u)
                + _apply(self.plan_jacobian, r, u_hat)
                + _apply(self.disturbance_jacobian, r, d))

    def jacobians(self, r):
        return (_jac(self.control_jacobian, r), _jac(self.plan_jacobian, r),
                _jac(self.disturbance_jacobian, r))

    def error(self, r):
        return self.error_fn(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class Subsystem:
    """An independent block of a relative system, with index maps into the full one."""

    name: str
    rel: RelativeSystem
    state_idx: tuple
    control_idx: tuple
    plan_control_idx: tuple
    dist_idx: tuple


@dataclass(frozen=True)
class ModelCatalogEntry:
    name: str
    params: dict
    tracking: TrackingModel
    planning: PlanningModel
    relative: RelativeSystem
    subsystems: tuple = None
    default_grids: dict = field(default_factory=dict)
    position_dims: tuple = ()  # planning-state indices that are positions

    def parts(self):
        """Subsystems to solve: the decomposition if any, else the whole system."""
        if self.subsystems:
            return self.subsystems
        rel = self.relative
        n = rel.n_states
        return (Subsystem("full", rel, tuple(range(n)), tuple(range(rel.controls.dim)),
                          tuple(range(rel.plan_controls.dim)), tuple(range(rel.disturbances.dim))),)


def _wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _stack(*cols):
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def _zeros_like_first(x):
    return np.zeros(np.shape(x)[:-1])


# ----------------------------------------------------------------------------
# catalog


def _rel1d(P):
    m = int(P["dims"])
    if m < 1:
        raise InvalidArgument("rel1d needs dims >= 1")
    U = BoxSet.symmetric(*[P["u_max"]] * m)
    Uh = BoxSet.symmetric(*[P["uhat_max"]] * m)
    D = BoxSet.symmetric(*[P["d_max"]] * m)
    eye = np.eye(m)

    def zero(x):
        return np.zeros(np.shape(x))

    trk = TrackingModel("int1d", m, U, D, lambda s, u, d: np.broadcast_to(u + d, np.broadcast_shapes(np.shape(s), np.shape(u))).copy(),
                        zero, eye, eye, tuple(f"x{i}" for i in range(m)))
    pln = PlanningModel("int1d_plan", m, Uh, lambda p, uh: np.broadcast_to(uh, np.broadcast_shapes(np.shape(p), np.shape(uh))).copy(),
                        zero, eye, tuple(f"xhat{i}" for i in range(m)))

    def perf(r, plan_rate, bandwidth):
        return U.clip(-bandwidth * np.asarray(r) + plan_rate)

    rel = RelativeSystem(
        "rel1d" if m == 1 else f"rel1d_x{m}", trk, pln, eye, "identity",
        tuple(range(m)), (),
        error_fn=lambda r: np.max(r ** 2, axis=-1),
        flow_fn=lambda r, u, uh, d: np.broadcast_to(u - uh + d, np.broadcast_shapes(np.shape(r), np.shape(u))).copy(),
        drift=zero, control_jacobian=eye, plan_jacobian=-eye, disturbance_jacobian=eye,
        error_uses=tuple(range(m)), state_names=tuple(f"r{i}" for i in range(m)),
        performance=perf, params=dict(P))
    subs = None
    if m > 1:
        one = _rel1d(dict(P, dims=1))[2]
        subs = tuple(Subsystem(f"axis{i}", one, (i,), (i,), (i,), (i,)) for i in range(m))
    return trk, pln, rel, subs


def _product(name, axis, m, P):
    """``m`` independent copies of an identity-transform axis system, stacked."""
    ns, npl = axis.n_states, axis.planning.n_states
    nu, nd = axis.controls.dim, axis.disturbances.dim

    def tile_box(box):
        return BoxSet(box.lo * m, box.hi * m)

    def split(x, width):
        return [x[..., i * width:(i + 1) * width] for i in range(m)]

    def block(J, x, width):
        x = np.asarray(x)
        blocks = [_jac(J, xi) for xi in split(x, width)]
        out = np.zeros(x.shape[:-1] + (m * blocks[0].shape[-2], m * blocks[0].shape[-1]))
        r, c = blocks[0].shape[-2:]
        for i, b in enumerate(blocks):
            out[..., i * r:(i + 1) * r, i * c:(i + 1) * c] = b
        return out

    def const_block(J):
        J = np.asarray(J, dtype=float)
        return _block_diag_const([J] * m, m * J.shape[0], m * J.shape[1])

    def cat(fn, *xs_widths):
        parts = [split(x, w) for x, w in xs_widths]
        return np.concatenate([fn(*args) for args in zip(*parts)], axis=-1)

    t, pl = axis.tracking, axis.planning
    trk = TrackingModel(
        f"{t.name}x{m}", m * ns, tile_box(t.controls), tile_box(t.disturbances),
        lambda s_, u, d: cat(t.flow_fn, (s_, ns), (u, nu), (d, nd)),
        lambda s_: cat(t.drift, (s_, ns)),
        const_block(t.control_jacobian), const_block(t.disturbance_jacobian),
        tuple(f"{n}{i}" for i in range(m) for n in t.state_names))
    pln = PlanningModel(
        f"{pl.name}x{m}", m * npl, tile_box(pl.controls),
        lambda p, uh: cat(pl.flow_fn, (p, npl), (uh, pl.controls.dim)),
        lambda p: cat(pl.drift, (p, npl)), const_block(pl.control_jacobian),
        tuple(f"{n}{i}" for i in range(m) for n in pl.state_names))

    def error_fn(r):
        return np.max(np.stack([axis.error_fn(ri) for ri in split(r, ns)]), axis=0)

    subs = tuple(Subsystem(f"axis{i}", axis, tuple(range(i * ns, (i + 1) * ns)),
                           tuple(range(i * nu, (i + 1) * nu)),
                           tuple(range(i * pl.controls.dim, (i + 1) * pl.controls.dim)),
                           tuple(range(i * nd, (i + 1) * nd))) for i in range(m))

    def perf(r, plan_rate, bandwidth):
        return _compose_perf(subs, trk.controls, r, plan_rate, bandwidth)

    jac = {k: getattr(axis, k) for k in ("control_jacobian", "plan_jacobian", "disturbance_jacobian")}
    rel = RelativeSystem(
        name, trk, pln, _block_diag_const([axis.Q] * m, m * ns, m * npl), "identity",
        tuple(i * ns + k for i in range(m) for k in axis.error_idx),
        tuple(i * ns + k for i in range(m) for k in axis.aux_idx),
        error_fn=error_fn,
        flow_fn=lambda r, u, uh, d: cat(axis.flow_fn, (r, ns), (u, nu), (uh, pl.controls.dim), (d, nd)),
        drift=lambda r: cat(axis.drift, (r, ns)),
        control_jacobian=const_block(jac["control_jacobian"]),
        plan_jacobian=const_block(jac["plan_jacobian"]),
        disturbance_jacobian=const_block(jac["disturbance_jacobian"]),
        error_uses=tuple(i * ns + k for i in range(m) for k in axis.error_uses),
        state_names=tuple(f"{n}{i}" for i in range(m) for n in axis.state_names),
        performance=perf, params=dict(P))
    return trk, pln, rel, subs


def _dint2d(P):
    m = int(P["dims"])
    if m < 1:
        raise InvalidArgument("dint2d needs dims >= 1")
    if m > 1:
        axis = _dint2d(dict(P, dims=1))[2]
        return _product(f"dint2d_x{m}", axis, m, P)
    U = BoxSet.symmetric(P["u_max"])
    Uh = BoxSet.symmetric(P["uhat_max"])
    D = BoxSet.symmetric(P["d_max"])

    def trk_flow(s, u, d):
        return _stack(s[..., 1] + d[..., 0], u[..., 0])

    def trk_drift(s):
        return _stack(s[..., 1], _zeros_like_first(s))

    trk = TrackingModel("dint", 2, U, D, trk_flow, trk_drift, [[0.0], [1.0]], [[1.0], [0.0]], ("x", "v"))
    pln = PlanningModel("int1d_plan", 1, Uh, lambda p, uh: np.broadcast_to(uh, np.broadcast_shapes(np.shape(p), np.shape(uh))).copy(),
                        lambda p: np.zeros(np.shape(p)), [[1.0]], ("xhat",))

    def rel_flow(r, u, uh, d):
        return _stack(r[..., 1] - uh[..., 0] + d[..., 0], u[..., 0])

    def perf(r, plan_rate, bandwidth):
        r = np.asarray(r)
        w = bandwidth
        return U.clip(np.array([-w * w * r[0] - 2 * w * (r[1] - plan_rate[0])]))

    rel = RelativeSystem(
        "dint2d", trk, pln, [[1.0], [0.0]], "identity", (0,), (1,),
        error_fn=lambda r: r[..., 0] ** 2, flow_fn=rel_flow, drift=trk_drift,
        control_jacobian=[[0.0], [1.0]], plan_jacobian=[[-1.0], [0.0]],
        disturbance_jacobian=[[1.0], [0.0]], error_uses=(0,), state_names=("x_r", "v"),
        performance=perf, params=dict(P))
    return trk, pln, rel, None


def _car5d_car3d(P):
    U = BoxSet.symmetric(P["a_max"], P["alpha_max"])
    D = BoxSet.symmetric(P["dx_max"], P["dy_max"], P["da_max"], P["dalpha_max"])
    Uh = BoxSet.symmetric(P["omegahat_max"])
    vhat = P["vhat"]
    Bu = np.zeros((5, 2))
    Bu[3, 0] = Bu[4, 1] = 1.0
    Bd = np.zeros((5, 4))
    Bd[0, 0] = Bd[1, 1] = Bd[3, 2] = Bd[4, 3] = 1.0

    def trk_flow(s, u, d):
        x, y, th, v, w = (s[..., i] for i in range(5))
        return _stack(v * np.cos(th) + d[..., 0], v * np.sin(th) + d[..., 1], w,
                      u[..., 0] + d[..., 2], u[..., 1] + d[..., 3])

    def trk_drift(s):
        th, v, w = s[..., 2], s[..., 3], s[..., 4]
        z = np.zeros_like(th)
        return _stack(v * np.cos(th), v * np.sin(th), w, z, z)

    trk = TrackingModel("car5d", 5, U, D, trk_flow, trk_drift, Bu, Bd, ("x", "y", "theta", "v", "omega"))

    def pln_flow(p, uh):
        th = p[..., 2]
        return _stack(vhat * np.cos(th), vhat * np.sin(th), uh[..., 0])

    def pln_drift(p):
        th = p[..., 2]
        return _stack(vhat * np.cos(th), vhat * np.sin(th), np.zeros_like(th))

    pln = PlanningModel("car3d", 3, Uh, pln_flow, pln_drift, [[0.0], [0.0], [1.0]], ("xhat", "yhat", "thetahat"))

    def rel_flow(r, u, uh, d):
        xr, yr, thr, v, w = (r[..., i] for i in range(5))
        wh = uh[..., 0]
        return _stack(-vhat + v * np.cos(thr) + wh * yr + d[..., 0],
                      v * np.sin(thr) - wh * xr + d[..., 1],
                      w - wh,
                      u[..., 0] + d[..., 2],
                      u[..., 1] + d[..., 3])

    def rel_drift(r):
        thr, v, w = r[..., 2], r[..., 3], r[..., 4]
        z = np.zeros_like(thr)
        return _stack(-vhat + v * np.cos(thr), v * np.sin(thr), w, z, z)

    def rel_plan_jac(r):
        xr, yr = r[..., 0], r[..., 1]
        z = np.zeros_like(xr)
        col = _stack(yr, -xr, z - 1.0, z, z)
        return col[..., None]

    def perf(r, plan_rate, bandwidth):
        xr, yr, thr, v, w = np.asarray(r, dtype=float)
        k = bandwidth
        v_des = vhat - k * xr
        th_des = -math.atan(k * yr / max(vhat, 1e-6))
        w_des = plan_rate[2] - k * _wrap_angle(thr - th_des)
        a = -2 * k * (v - v_des)
        alpha = -2 * k * (w - w_des)
        return U.clip(np.array([a, alpha]))

    Q = np.zeros((5, 3))
    Q[0, 0] = Q[1, 1] = Q[2, 2] = 1.0
    rel = RelativeSystem(
        "car5d_car3d", trk, pln, Q, "rotation", (0, 1, 2), (3, 4),
        error_fn=lambda r: r[..., 0] ** 2 + r[..., 1] ** 2, flow_fn=rel_flow,
        drift=rel_drift, control_jacobian=Bu, plan_jacobian=rel_plan_jac,
        disturbance_jacobian=Bd, error_uses=(0, 1), periodic=(2,), heading_idx=2,
        rot_idx=(0, 1), state_names=("x_r", "y_r", "theta_r", "v", "omega"),
        performance=perf, params=dict(P))
    return trk, pln, rel, None


def _quad_axis(P, axis, max_key, dist_key, plan_kind):
    """Near-hover quadrotor axis block (x_r, v, theta, omega)."""
    g, d0, d1, n0 = P["g"], P["d0"], P["d1"], P["n0"]
    U = BoxSet.symmetric(P[max_key])
    D = BoxSet.symmetric(P[dist_key])
    Bu = np.array([[0.0], [0.0], [0.0], [n0]])
    Bd = np.array([[1.0], [0.0], [0.0], [0.0]])

    def trk_flow(s, u, d):
        x, v, th, w = (s[..., i] for i in range(4))
        return _stack(v + d[..., 0], g * np.tan(th), -d1 * th + w, -d0 * th + n0 * u[..., 0])

    def trk_drift(s):
        v, th, w = s[..., 1], s[..., 2], s[..., 3]
        return _stack(v, g * np.tan(th), -d1 * th + w, -d0 * th)

    names = tuple(f"{n}_{axis}" for n in ("p", "v", "theta", "omega"))
    trk = TrackingModel(f"quad4_{axis}", 4, U, D, trk_flow, trk_drift, Bu, Bd, names)

    if plan_kind == "int":
        Uh = BoxSet.symmetric(P["vhat_max"])
        pln = PlanningModel("int1d_plan", 1, Uh,
                            lambda p, uh: np.broadcast_to(uh, np.broadcast_shapes(np.shape(p), np.shape(uh))).copy(),
                            lambda p: np.zeros(np.shape(p)), [[1.0]], (f"{axis}hat",))
        Q = np.array([[1.0], [0.0], [0.0], [0.0]])

        def rel_flow(r, u, uh, d):
            xr, v, th, w = (r[..., i] for i in range(4))
            return _stack(v - uh[..., 0] + d[..., 0], g * np.tan(th), -d1 * th + w,
                          -d0 * th + n0 * u[..., 0])

        Bp = np.array([[-1.0], [0.0], [0.0], [0.0]])
        rel_drift = trk_drift
        rel_name = f"quad4_int1_{axis}"
        state_names = (f"{axis}_r", f"v_{axis}", f"theta_{axis}", f"omega_{axis}")

        def error_fn(r):
            return r[..., 0] ** 2

        error_idx, aux_idx, uses = (0,), (1, 2, 3), (0,)

        def perf(r, plan_rate, bandwidth):
            xr, v, th, w = np.asarray(r, dtype=float)
            k = bandwidth
            a = -k * k * xr - 2 * k * (v - plan_rate[0])
            return U.clip(np.array([math.atan(a / g)]))
    else:
        Uh = BoxSet.symmetric(P["ahat_max"])
        pln = PlanningModel("dint_plan", 2, Uh,
                            lambda p, uh: _stack(p[..., 1], uh[..., 0]),
                            lambda p: _stack(p[..., 1], _zeros_like_first(p)), [[0.0], [1.0]],
                            (f"{axis}hat", f"v{axis}hat"))
        Q = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
        c = P["vel_weight"]

        def rel_flow(r, u, uh, d):
            xr, vr, th, w = (r[..., i] for i in range(4))
            return _stack(vr + d[..., 0], g * np.tan(th) - uh[..., 0], -d1 * th + w,
                          -d0 * th + n0 * u[..., 0])

        Bp = np.array([[0.0], [-1.0], [0.0], [0.0]])
        rel_drift = trk_drift
        rel_name = f"quad4_dint2_{axis}"
        state_names = (f"{axis}_r", f"v_{axis}_r", f"theta_{axis}", f"omega_{axis}")

        def error_fn(r):
            return r[..., 0] ** 2 + c * r[..., 1] ** 2

        error_idx, aux_idx, uses = (0, 1), (2, 3), (0, 1)

        def perf(r, plan_rate, bandwidth):
            xr, vr, th, w = np.asarray(r, dtype=float)
            k = bandwidth
            a = plan_rate[1] - k * k * xr - 2 * k * vr
            return U.clip(np.array([math.atan(a / g)]))

    rel = RelativeSystem(
        rel_name, trk, pln, Q, "identity", error_idx, aux_idx, error_fn=error_fn,
        flow_fn=rel_flow, drift=rel_drift, control_jacobian=Bu, plan_jacobian=Bp,
        disturbance_jacobian=Bd, error_uses=uses, state_names=state_names,
        performance=perf, params=dict(P))
    return rel


def _quad_z(P):
    g, kT = P["g"], P["kT"]
    U = BoxSet((P["uz_min"],), (P["uz_max"],))
    D = BoxSet.symmetric(P["dz_max"])
    Uh = BoxSet.symmetric(P["vhat_max"])

    def drift(s):
        return _stack(s[..., 1], np.full(np.shape(s)[:-1], -g))

    trk = TrackingModel("quad2_z", 2, U, D,
                        lambda s, u, d: _stack(s[..., 1] + d[..., 0], kT * u[..., 0] - g),
                        drift, [[0.0], [kT]], [[1.0], [0.0]], ("z", "v_z"))
    pln = PlanningModel("int1d_plan", 1, Uh,
                        lambda p, uh: np.broadcast_to(uh, np.broadcast_shapes(np.shape(p), np.shape(uh))).copy(),
                        lambda p: np.zeros(np.shape(p)), [[1.0]], ("zhat",))

    def perf(r, plan_rate, bandwidth):
        zr, vz = np.asarray(r, dtype=float)
        k = bandwidth
        a = -k * k * zr - 2 * k * (vz - plan_rate[0])
        return U.clip(np.array([(g + a) / kT]))

    return RelativeSystem(
        "quad2_int1_z", trk, pln, [[1.0], [0.0]], "identity", (0,), (1,),
        error_fn=lambda r: r[..., 0] ** 2,
        flow_fn=lambda r, u, uh, d: _stack(r[..., 1] - uh[..., 0] + d[..., 0], kT * u[..., 0] - g),
        drift=drift, control_jacobian=[[0.0], [kT]], plan_jacobian=[[-1.0], [0.0]],
        disturbance_jacobian=[[1.0], [0.0]], error_uses=(0,), state_names=("z_r", "v_z"),
        performance=perf, params=dict(P))


def _block_diag_const(mats, rows, cols):
    out = np.zeros((rows, cols))
    r0 = c0 = 0
    for M in mats:
        M = np.asarray(M, dtype=float)
        out[r0:r0 + M.shape[0], c0:c0 + M.shape[1]] = M
        r0 += M.shape[0]
        c0 += M.shape[1]
    return out


def _quad10d_int3d(P):
    g, d0, d1, n0, kT = P["g"], P["d0"], P["d1"], P["n0"], P["kT"]
    U = BoxSet((-P["ux_max"], -P["uy_max"], P["uz_min"]), (P["ux_max"], P["uy_max"], P["uz_max"]))
    D = BoxSet.symmetric(P["dx_max"], P["dy_max"], P["dz_max"])
    Uh = BoxSet.symmetric(P["vhat_max"], P["vhat_max"], P["vhat_max"])
    Bu = np.zeros((10, 3))
    Bu[3, 0] = n0
    Bu[7, 1] = n0
    Bu[9, 2] = kT
    Bd = np.zeros((10, 3))
    Bd[0, 0] = Bd[4, 1] = Bd[8, 2] = 1.0
    Q = np.zeros((10, 3))
    Q[0, 0] = Q[4, 1] = Q[8, 2] = 1.0

    def trk_flow(s, u, d):
        x, vx, thx, wx, y, vy, thy, wy, z, vz = (s[..., i] for i in range(10))
        return _stack(vx + d[..., 0], g * np.tan(thx), -d1 * thx + wx, -d0 * thx + n0 * u[..., 0],
                      vy + d[..., 1], g * np.tan(thy), -d1 * thy + wy, -d0 * thy + n0 * u[..., 1],
                      vz + d[..., 2], kT * u[..., 2] - g)

    def drift(s):
        vx, thx, wx = s[..., 1], s[..., 2], s[..., 3]
        vy, thy, wy = s[..., 5], s[..., 6], s[..., 7]
        vz = s[..., 9]
        return _stack(vx, g * np.tan(thx), -d1 * thx + wx, -d0 * thx,
                      vy, g * np.tan(thy), -d1 * thy + wy, -d0 * thy,
                      vz, np.full(np.shape(vz), -g))

    names = ("x", "v_x", "theta_x", "omega_x", "y", "v_y", "theta_y", "omega_y", "z", "v_z")
    trk = TrackingModel("quad10d", 10, U, D, trk_flow, drift, Bu, Bd, names)
    pln = PlanningModel("int3d", 3, Uh,
                        lambda p, uh: np.broadcast_to(uh, np.broadcast_shapes(np.shape(p), np.shape(uh))).copy(),
                        lambda p: np.zeros(np.shape(p)), np.eye(3), ("xhat", "yhat", "zhat"))

    def rel_flow(r, u, uh, d):
        xr, vx, thx, wx, yr, vy, thy, wy, zr, vz = (r[..., i] for i in range(10))
        return _stack(vx - uh[..., 0] + d[..., 0], g * np.tan(thx), -d1 * thx + wx,
                      -d0 * thx + n0 * u[..., 0],
                      vy - uh[..., 1] + d[..., 1], g * np.tan(thy), -d1 * thy + wy,
                      -d0 * thy + n0 * u[..., 1],
                      vz - uh[..., 2] + d[..., 2], kT * u[..., 2] - g)

    sx = _quad_axis(P, "x", "ux_max", "dx_max", "int")
    sy = _quad_axis(P, "y", "uy_max", "dy_max", "int")
    sz = _quad_z(P)
    subs = (Subsystem("x", sx, (0, 1, 2, 3), (0,), (0,), (0,)),
            Subsystem("y", sy, (4, 5, 6, 7), (1,), (1,), (1,)),
            Subsystem("z", sz, (8, 9), (2,), (2,), (2,)))

    def perf(r, plan_rate, bandwidth):
        return _compose_perf(subs, U, r, plan_rate, bandwidth)

    rel = RelativeSystem(
        "quad10d_int3d", trk, pln, Q, "identity", (0, 4, 8), (1, 2, 3, 5, 6, 7, 9),
        error_fn=lambda r: np.maximum(np.maximum(r[..., 0] ** 2, r[..., 4] ** 2), r[..., 8] ** 2),
        flow_fn=rel_flow, drift=drift, control_jacobian=Bu, plan_jacobian=-Q,
        disturbance_jacobian=Bd, error_uses=(0, 4, 8),
        state_names=("x_r", "v_x", "theta_x", "omega_x", "y_r", "v_y", "theta_y", "omega_y", "z_r", "v_z"),
        performance=perf, params=dict(P))
    return trk, pln, rel, subs


def _quad8d_int4d(P):
    g, d0, d1, n0 = P["g"], P["d0"], P["d1"], P["n0"]
    U = BoxSet.symmetric(P["ux_max"], P["uy_max"])
    D = BoxSet.symmetric(P["dx_max"], P["dy_max"])
    Uh = BoxSet.symmetric(P["ahat_max"], P["ahat_max"])
    c = P["vel_weight"]
    Bu = np.zeros((8, 2))
    Bu[3, 0] = Bu[7, 1] = n0
    Bd = np.zeros((8, 2))
    Bd[0, 0] = Bd[4, 1] = 1.0
    Bp = np.zeros((8, 2))
    Bp[1, 0] = Bp[5, 1] = -1.0
    Q = np.zeros((8, 4))
    Q[0, 0] = Q[1, 1] = Q[4, 2] = Q[5, 3] = 1.0

    def trk_flow(s, u, d):
        x, vx, thx, wx, y, vy, thy, wy = (s[..., i] for i in range(8))
        return _stack(vx + d[..., 0], g * np.tan(thx), -d1 * thx + wx, -d0 * thx + n0 * u[..., 0],
                      vy + d[..., 1], g * np.tan(thy), -d1 * thy + wy, -d0 * thy + n0 * u[..., 1])

    def drift(s):
        vx, thx, wx = s[..., 1], s[..., 2], s[..., 3]
        vy, thy, wy = s[..., 5], s[..., 6], s[..., 7]
        return _stack(vx, g * np.tan(thx), -d1 * thx + wx, -d0 * thx,
                      vy, g * np.tan(thy), -d1 * thy + wy, -d0 * thy)

    names = ("x", "v_x", "theta_x", "omega_x", "y", "v_y", "theta_y", "omega_y")
    trk = TrackingModel("quad8d", 8, U, D, trk_flow, drift, Bu, Bd, names)
    pln_B = np.zeros((4, 2))
    pln_B[1, 0] = pln_B[3, 1] = 1.0
    pln = PlanningModel("dint4d", 4, Uh,
                        lambda p, uh: _stack(p[..., 1], uh[..., 0], p[..., 3], uh[..., 1]),
                        lambda p: _stack(p[..., 1], _zeros_like_first(p), p[..., 3], _zeros_like_first(p)),
                        pln_B, ("xhat", "vxhat", "yhat", "vyhat"))

    def rel_flow(r, u, uh, d):
        xr, vxr, thx, wx, yr, vyr, thy, wy = (r[..., i] for i in range(8))
        return _stack(vxr + d[..., 0], g * np.tan(thx) - uh[..., 0], -d1 * thx + wx,
                      -d0 * thx + n0 * u[..., 0],
                      vyr + d[..., 1], g * np.tan(thy) - uh[..., 1], -d1 * thy + wy,
                      -d0 * thy + n0 * u[..., 1])

    sx = _quad_axis(P, "x", "ux_max", "dx_max", "dint")
    sy = _quad_axis(P, "y", "uy_max", "dy_max", "dint")
    subs = (Subsystem("x", sx, (0, 1, 2, 3), (0,), (0,), (0,)),
            Subsystem("y", sy, (4, 5, 6, 7), (1,), (1,), (1,)))

    def perf(r, plan_rate, bandwidth):
        return _compose_perf(subs, U, r, plan_rate, bandwidth)

    def error_fn(r):
        return np.maximum(r[..., 0] ** 2 + c * r[..., 1] ** 2, r[..., 4] ** 2 + c * r[..., 5] ** 2)

    rel = RelativeSystem(
        "quad8d_int4d", trk, pln, Q, "identity", (0, 1, 4, 5), (2, 3, 6, 7),
        error_fn=error_fn, flow_fn=rel_flow, drift=drift, control_jacobian=Bu,
        plan_jacobian=Bp, disturbance_jacobian=Bd, error_uses=(0, 1, 4, 5),
        state_names=("x_r", "v_x_r", "theta_x", "omega_x", "y_r", "v_y_r", "theta_y", "omega_y"),
        performance=perf, params=dict(P))
    return trk, pln, rel, subs


def _compose_perf(subs, U, r, plan_rate, bandwidth):
    r = np.asarray(r, dtype=float)
    u = np.zeros(U.dim)
    plan_rate = np.asarray(plan_rate, dtype=float)
    for sub in subs:
        if sub.rel.planning.n_states == 1:
            rate = plan_rate[list(sub.plan_control_idx)]
        else:
            rate = _sub_plan_rate(sub, plan_rate)
        u[list(sub.control_idx)] = sub.rel.performance(r[list(sub.state_idx)], rate, bandwidth)
    return U.clip(u)


def _sub_plan_rate(sub, plan_rate):
    # double-integrator blocks see (velocity, acceleration) of their own axis
    k = sub.plan_control_idx[0]
    return plan_rate[[2 * k, 2 * k + 1]]


_G = 9.81

CATALOG_DEFAULTS = {
    "rel1d": {"u_max": 1.0, "uhat_max": 0.5, "d_max": 0.2, "dims": 1},
    "dint2d": {"u_max": 1.0, "uhat_max": 0.5, "d_max": 0.1, "dims": 1},
    "car5d_car3d": {"a_max": 0.5, "alpha_max": 6.0, "dx_max": 0.02, "dy_max": 0.02,
                    "da_max": 0.2, "dalpha_max": 0.02, "vhat": 0.1, "omegahat_max": 1.5},
    "quad10d_int3d": {"d0": 10.0, "d1": 8.0, "n0": 10.0, "kT": 0.91, "g": _G,
                      "ux_max": math.pi / 9, "uy_max": math.pi / 9, "uz_min": 0.0,
                      "uz_max": 1.5 * _G, "vhat_max": 0.5, "dx_max": 0.1, "dy_max": 0.1,
                      "dz_max": 0.1},
    "quad8d_int4d": {"d0": 10.0, "d1": 8.0, "n0": 10.0, "kT": 0.91, "g": _G,
                     "ux_max": math.pi / 9, "uy_max": math.pi / 9, "ahat_max": 1.0,
                     "dx_max": 0.2, "dy_max": 0.2, "vel_weight": 1.0},
}

_ALIASES = {"û_max": "uhat_max", "v̂": "vhat", "ω̂_max": "omegahat_max"}

_FACTORIES = {
    "rel1d": _rel1d,
    "dint2d": _dint2d,
    "car5d_car3d": _car5d_car3d,
    "quad10d_int3d": _quad10d_int3d,
    "quad8d_int4d": _quad8d_int4d,
}

# Truncation boxes for the solver; values near their faces are untrusted.
_DEFAULT_GRIDS = {
    "rel1d": lambda P: {"axis": Grid((-1.0,), (1.0,), (201,))},
    "dint2d": lambda P: {"axis": Grid((-1.0, -1.5), (1.0, 1.5), (121, 121))},
    "car5d_car3d": lambda P: {"full": Grid((-0.2, -0.2, -math.pi, -0.3, -2.5),
                                           (0.2, 0.2, math.pi, 0.3, 2.5),
                                           (15, 15, 23, 13, 23),
                                           (False, False, True, False, False))},
    "quad10d_int3d": lambda P: {
        "x": Grid((-1.5, -2.0, -0.6, -6.0), (1.5, 2.0, 0.6, 6.0), (61, 61, 41, 41)),
        "y": Grid((-1.5, -2.0, -0.6, -6.0), (1.5, 2.0, 0.6, 6.0), (61, 61, 41, 41)),
        "z": Grid((-1.0, -2.0), (1.0, 2.0), (101, 101)),
    },
    "quad8d_int4d": lambda P: {
        "x": Grid((-2.5, -2.5, -0.6, -6.0), (2.5, 2.5, 0.6, 6.0), (41, 41, 25, 25)),
        "y": Grid((-2.5, -2.5, -0.6, -6.0), (2.5, 2.5, 0.6, 6.0), (41, 41, 25, 25)),
    },
}

_POSITION_DIMS = {
    "rel1d": lambda P: tuple(range(int(P["dims"]))),
    "dint2d": lambda P: tuple(range(int(P["dims"]))),
    "car5d_car3d": lambda P: (0, 1),
    "quad10d_int3d": lambda P: (0, 1, 2),
    "quad8d_int4d": lambda P: (0, 2),
}


def model_names():
    return sorted(_FACTORIES)


def resolve_params(name, overrides=None):
    if name not in _FACTORIES:
        raise ModelNotFound(f"unknown model pair {name!r}; known: {model_names()}")
    params = dict(CATALOG_DEFAULTS[name])
    for key, value in (overrides or {}).items():
        key = _ALIASES.get(key, key)
        if key not in params:
            raise InvalidArgument(f"unknown parameter {key!r} for {name}")
        params[key] = float(value) if key != "dims" else int(value)
    return params


def make_model(name, overrides=None):
    """Instantiate a catalog model pair with parameter overrides."""
    params = resolve_params(name, overrides)
    trk, pln, rel, subs = _FACTORIES[name](params)
    grids = _DEFAULT_GRIDS[name](params)
    if "axis" in grids:
        grids = {s.name: grids["axis"] for s in subs} if subs else {"full": grids["axis"]}
    return ModelCatalogEntry(name, params, trk, pln, rel, subs, grids, _POSITION_DIMS[name](params))
