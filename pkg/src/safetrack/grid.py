"""Uniform rectilinear N-D grids with optional periodic dimensions."""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .errors import InvalidArgument, OutOfDomain

_BOUNDS_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Uniform grid. Periodic dimensions cover ``[lo, hi)``; the rest ``[lo, hi]``."""

    lo: tuple
    hi: tuple
    n: tuple
    periodic: tuple = None

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        periodic = self.periodic
        if periodic is None:
            periodic = (False,) * len(n)
        periodic = tuple(bool(v) for v in np.atleast_1d(periodic))
        if not (len(lo) == len(hi) == len(n) == len(periodic)):
            raise InvalidArgument("grid bounds, node counts and periodic flags differ in length")
        for k, (a, b, m) in enumerate(zip(lo, hi, n)):
            if m < 3:
                raise InvalidArgument(f"dimension {k} needs at least 3 nodes, got {m}")
            if not (np.isfinite(a) and np.isfinite(b)) or b <= a:
                raise InvalidArgument(f"dimension {k} has invalid bounds [{a}, {b}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "periodic", periodic)

    @classmethod
    def from_axes(cls, axes, periodic=None):
        """Build from explicit coordinate vectors; rejects nonuniform spacing."""
        lo, hi, n = [], [], []
        periodic = periodic or (False,) * len(axes)
        for k, ax in enumerate(axes):
            ax = np.asarray(ax, dtype=float)
            d = np.diff(ax)
            if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-9, atol=0):
                raise InvalidArgument(f"axis {k} is not uniformly spaced")
            lo.append(ax[0])
            hi.append(ax[-1] + d[0] if periodic[k] else ax[-1])
            n.append(len(ax))
        return cls(tuple(lo), tuple(hi), tuple(n), tuple(periodic))

    @property
    def ndim(self):
        return len(self.n)

    @property
    def shape(self):
        return self.n

    @property
    def size(self):
        return int(np.prod(self.n))

    @property
    def spacing(self):
        return np.array([(b - a) / (m if p else m - 1)
                         for a, b, m, p in zip(self.lo, self.hi, self.n, self.periodic)])

    @property
    def strides(self):
        s = np.ones(self.ndim, dtype=np.int64)
        for k in range(self.ndim - 2, -1, -1):
            s[k] = s[k + 1] * self.n[k + 1]
        return s

    @property
    def axes(self):
        dx = self.spacing
        return [a + dx[k] * np.arange(m) for k, (a, m) in enumerate(zip(self.lo, self.n))]

    def points(self):
        """Node coordinates, shape ``(*shape, ndim)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def node(self, index):
        dx = self.spacing
        return np.array([self.lo[k] + dx[k] * i for k, i in enumerate(index)])

    def wrap(self, x):
        """Map periodic coordinates into ``[lo, hi)``; leaves other dimensions alone."""
        x = np.array(x, dtype=float)
        for k, p in enumerate(self.periodic):
            if p:
                period = self.hi[k] - self.lo[k]
                x[..., k] = self.lo[k] + np.mod(x[..., k] - self.lo[k], period)
        return x

    @cached_property
    def _limits(self):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        tol = _BOUNDS_TOL * (hi - lo)
        free = ~np.asarray(self.periodic, bool)
        return np.where(free, lo - tol, -np.inf), np.where(free, hi + tol, np.inf)

    def check_bounds(self, x):
        """Raise :class:`OutOfDomain` for the first non-periodic coordinate off the grid."""
        x = np.atleast_2d(x)
        low, high = self._limits
        bad = ~((x >= low) & (x <= high))
        if bad.any():
            # NaN fails both comparisons; periodic columns only flag NaN
            k = int(np.nonzero(bad.any(axis=0))[0][0])
            col = x[:, k]
            raise OutOfDomain(k, float(col[np.argmax(bad[:, k])]), self.lo[k], self.hi[k])

    def contains(self, x):
        try:
            self.check_bounds(x)
        except OutOfDomain:
            return False
        return True

    def clip(self, x):
        x = np.array(x, dtype=float)
        for k, p in enumerate(self.periodic):
            if not p:
                x[..., k] = np.clip(x[..., k], self.lo[k], self.hi[k])
        return x

    def boundary_distance(self):
        """Per-node distance (in cells) to the nearest non-periodic boundary; inf if none."""
        dist = np.full(self.shape, np.inf)
        for k, p in enumerate(self.periodic):
            if p:
                continue
            idx = np.arange(self.n[k])
            d = np.minimum(idx, self.n[k] - 1 - idx).astype(float)
            shape = [1] * self.ndim
            shape[k] = self.n[k]
            dist = np.minimum(dist, d.reshape(shape))
        return dist

    def spec(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "n": list(self.n),
                "periodic": list(self.periodic)}


@dataclass(frozen=True)
class GridFunction:
    """Scalar samples on every node of a grid (row-major ``values``)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.size != self.grid.size:
            raise InvalidArgument(f"{v.size} values for a grid of {self.grid.size} nodes")
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("grid function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def sample(cls, grid, fn):
        """Evaluate ``fn(points)`` where points has shape ``(*shape, ndim)``."""
        return cls(grid, fn(grid.points()))


def _interp_args(grid):
    return (np.asarray(grid.n, dtype=np.int64), grid.strides,
            np.asarray(grid.periodic, dtype=np.bool_), np.asarray(grid.lo), grid.spacing)


def interpolate_fields(grid, fields, X, check=True):
    """Multilinear interpolation of several stacked fields at points ``X``.

    ``fields`` has shape ``(F, *grid.shape)`` (or ``(F, N)``), ``X`` shape ``(P, ndim)``
    or ``(ndim,)``. Returns ``(P, F)`` (or ``(F,)`` for a single point).
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.shape[1] != grid.ndim:
        raise InvalidArgument(f"point has {X2.shape[1]} coordinates, grid has {grid.ndim}")
    if check:
        grid.check_bounds(X2)
    flat = np.ascontiguousarray(np.asarray(fields, dtype=float).reshape(-1, grid.size))
    out = np.empty((X2.shape[0], flat.shape[0]))
    shape, strides, periodic, lo, dx = _interp_args(grid)
    kernels.interp_points(flat, shape, strides, periodic, lo, dx, np.ascontiguousarray(X2), out)
    return out[0] if single else out


def interpolate(f, x):
    """Multilinear interpolation of ``f`` at one point (or ``(P, ndim)`` points)."""
    x = np.asarray(x, dtype=float)
    res = interpolate_fields(f.grid, f.values[None], x)
    return float(res[0]) if x.ndim == 1 else res[:, 0]


def _gradient_axis(V, axis, dx, periodic):
    if periodic:
        return (np.roll(V, -1, axis=axis) - np.roll(V, 1, axis=axis)) / (2 * dx)
    g = np.gradient(V, dx, axis=axis, edge_order=2)
    return g


def gradient_values(grid, V):
    """Gradient of raw node values, shape ``(ndim, *shape)``."""
    V = np.asarray(V, dtype=float).reshape(grid.shape)
    dx = grid.spacing
    return np.stack([_gradient_axis(V, k, dx[k], grid.periodic[k]) for k in range(grid.ndim)])


def gradient(f):
    """Central differences inside, second-order one-sided at non-periodic edges.

    Returns one :class:`GridFunction` per dimension.
    """
    g = gradient_values(f.grid, f.values)
    return [GridFunction(f.grid, g[k]) for k in range(f.grid.ndim)]


def upwind_pair(f, dim):
    """First-order backward and forward differences along ``dim``."""
    from .kernels_np import _one_sided

    dm, dp = _one_sided(f.values, dim, f.grid.spacing[dim], f.grid.periodic[dim])
    return GridFunction(f.grid, dm), GridFunction(f.grid, dp)
