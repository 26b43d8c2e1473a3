import numpy as np
import pytest
from hypothesis import given, strategies as st

from safetrack.errors import DegenerateTEB, InvalidArgument
from safetrack.grid import Grid
from safetrack.hjsolver import SolverConfig, solve_decomposed
from safetrack.relsys import make_model
from safetrack.teb import (TEBExtents, TEBQuery, TrackingBound, default_eps, min_value,
                           smallest_tau, sublevel_extents, teb_extents, value_at)


def test_query_and_extents_validation():
    with pytest.raises(InvalidArgument):
        TEBQuery(0.0, -1e-3)
    with pytest.raises(InvalidArgument):
        TEBExtents(0.0, [-0.1], (0,))
    assert TEBQuery(0.2, 0.05).level == pytest.approx(0.25)


def test_default_eps_is_two_cells_of_slope(strong_rel1d):
    _, vf = strong_rel1d
    dx = vf.grid.spacing[0]
    # V = r**2, argmin at r = 0, one-sided slopes +-dx
    assert default_eps(vf) == pytest.approx(2 * dx * dx)
    assert min_value(vf) == pytest.approx(0.0, abs=1e-12)


def test_empty_sublevel_set_is_degenerate():
    g = Grid((-1.0,), (1.0,), (11,))
    with pytest.raises(DegenerateTEB):
        sublevel_extents(g, g.axes[0] ** 2, -0.1, [0])


def test_radial_extent_replaces_pair():
    g = Grid((-1.0, -1.0), (1.0, 1.0), (21, 21))
    P = g.points()
    V = np.maximum(np.abs(P[..., 0]), np.abs(P[..., 1]))
    box = sublevel_extents(g, V, 0.5, [0, 1])
    rad = sublevel_extents(g, V, 0.5, [0, 1], radial=(0, 1))
    assert np.allclose(box, [0.5, 0.5])
    assert np.allclose(rad, [np.hypot(0.5, 0.5)] * 2)


def test_weak_tracker_extents_grow_linearly(weak_rel1d):
    _, vf = weak_rel1d
    q = TEBQuery(min_value(vf), 0.0)
    dx = vf.grid.spacing[0]
    for tau in np.linspace(0.0, 2.0, 21):
        ext = teb_extents(vf, tau, q, [0])
        assert abs(ext.half_widths[0] - 0.2 * tau) <= dx + 1e-12


@given(st.integers(0, 20), st.integers(0, 20))
def test_nested_bounds_as_node_sets(weak_rel1d, i, j):
    _, vf = weak_rel1d
    q = TEBQuery(min_value(vf), 0.0)
    lo, hi = sorted((i, j))
    taus = np.linspace(0.0, 2.0, 21)
    inner = vf.values[vf.index_for_horizon(vf.horizon - taus[lo])] <= q.level
    outer = vf.values[vf.index_for_horizon(vf.horizon - taus[hi])] <= q.level
    assert not np.any(inner & ~outer)


def test_smallest_tau_matches_linear_growth(weak_rel1d):
    _, vf = weak_rel1d
    q = TEBQuery(min_value(vf), 0.0)
    assert smallest_tau(vf, np.array([0.0]), q) == pytest.approx(0.0)
    assert smallest_tau(vf, np.array([0.11]), q) == pytest.approx(0.6)
    assert smallest_tau(vf, np.array([0.45]), q) is None
    assert smallest_tau(vf, np.array([3.0]), q) is None


def test_value_query_reads_conservative_snapshot(weak_rel1d):
    _, vf = weak_rel1d
    # tau = 0.05 lies between snapshots; the horizon 1.95 rounds up to 2.0
    assert value_at(vf, np.array([0.0]), 0.05) == pytest.approx(value_at(vf, np.array([0.0]), 0.0))


def test_strong_bound_control_pushes_error_to_zero(strong_bound):
    assert strong_bound.converged
    assert strong_bound.optimal_control(np.array([0.3]))[0] == pytest.approx(-1.0)
    assert strong_bound.optimal_control(np.array([-0.3]))[0] == pytest.approx(1.0)
    uh, d = strong_bound.worst_case(np.array([0.3]))
    assert uh[0] == pytest.approx(-0.5) and d[0] == pytest.approx(0.2)


def test_off_grid_control_needs_clip(strong_bound):
    from safetrack.errors import OutOfDomain

    with pytest.raises(OutOfDomain):
        strong_bound.optimal_control(np.array([1.5]))
    assert strong_bound.optimal_control(np.array([1.5]), clip=True)[0] == pytest.approx(-1.0)
    assert not strong_bound.contains(np.array([1.5]))


def test_weak_bound_taus_and_snap_up(weak_bound):
    taus = weak_bound.taus()
    assert len(taus) == 21 and taus[0] == 0.0 and taus[-1] == pytest.approx(2.0)
    assert weak_bound.snap_up(0.31) == pytest.approx(0.4)
    assert weak_bound.snap_up(0.3) == pytest.approx(0.3)
    assert weak_bound.snap_up(5.0) == pytest.approx(2.0)
    assert weak_bound.smallest_tau(np.array([0.11])) == pytest.approx(0.6)


def test_composed_bound_takes_max_over_parts():
    entry = make_model("rel1d", {"dims": 2})
    g = Grid((-1.0,), (1.0,), (81,))
    vfs, _ = solve_decomposed(entry.subsystems, [g, g], SolverConfig(horizon=3.0))
    b = TrackingBound.from_solution(entry.relative, entry.subsystems, vfs)
    r = np.array([0.1, -0.3])
    assert b.value(r) == pytest.approx(max(value_at(vfs[0], r[:1], 0), value_at(vfs[1], r[1:], 0)))
    ext = b.extents()
    assert ext.dims == (0, 1)
    assert np.allclose(b.plan_extents(), ext.half_widths)
    u = b.optimal_control(r)
    assert np.allclose(u, [-1.0, 1.0])


def test_quad_plan_extents_land_on_position_dims():
    entry = make_model("quad10d_int3d")
    g = Grid((-1.0, -2.0), (1.0, 2.0), (41, 41))
    sub = entry.subsystems[2]
    vfs, _ = solve_decomposed([sub], [g], SolverConfig(horizon=20.0))
    b = TrackingBound(entry.relative, [(sub, vfs[0])])
    pe = b.plan_extents()
    assert pe.shape == (3,)
    assert pe[0] == 0.0 and pe[1] == 0.0 and pe[2] > 0.0


def test_parts_must_be_subsystems(strong_rel1d):
    entry, vf = strong_rel1d
    with pytest.raises(InvalidArgument):
        TrackingBound(entry.relative, [("full", vf)])
