import numpy as np
import pytest
from hypothesis import given, strategies as st

from safetrack import kernels
from safetrack.errors import (DegenerateDomain, InvalidArgument, InvalidDecomposition,
                              NumericalFailure)
from safetrack.grid import Grid
from safetrack.hjsolver import (SolverConfig, dissipation_bounds, hamiltonian_affine,
                                separable_coefficients, solve_decomposed, solve_hjvi)
from safetrack.relsys import Subsystem, make_model


def _with_backend(name, fn):
    prev = kernels.get_backend()
    kernels.set_backend(name)
    try:
        return fn()
    finally:
        kernels.set_backend(prev)


@pytest.mark.parametrize("kw", [dict(horizon=0.0), dict(horizon=1.0, cfl=1.5),
                                dict(horizon=1.0, snapshots=1), dict(horizon=1.0, scheme="weno"),
                                dict(horizon=1.0, dissipation="none"), dict(horizon=1.0, tol=0.0)])
def test_solver_config_validation(kw):
    with pytest.raises(InvalidArgument):
        SolverConfig(**kw)


@given(st.floats(-5.0, 5.0, allow_nan=False))
def test_rel1d_hamiltonian_closed_form(q):
    # min_u q u + max_uhat (-q uhat) + max_d q d = (-1 + 0.5 + 0.2) |q|
    rel = make_model("rel1d").relative
    H, u, uh, d = hamiltonian_affine(rel, np.zeros(1), np.array([q]))
    assert float(H) == pytest.approx(-0.3 * abs(q), abs=1e-12)
    if q != 0:
        assert float(u[0]) == pytest.approx(-np.sign(q))
        assert float(d[0]) == pytest.approx(0.2 * np.sign(q))


def test_corner_dissipation_bound_for_rel1d():
    rel = make_model("rel1d").relative
    g = Grid((-1.0,), (1.0,), (21,))
    assert dissipation_bounds(rel, g)[0] == pytest.approx(1.7)


def test_scheme_selection():
    g1 = Grid((-1.0,), (1.0,), (21,))
    assert separable_coefficients(make_model("rel1d").relative, g1) is not None
    car = make_model("car5d_car3d")
    gc = Grid((-0.2, -0.2, -np.pi, -0.2, -2.5), (0.2, 0.2, np.pi, 0.4, 2.5), (5, 5, 6, 5, 5),
              (False, False, True, False, False))
    assert separable_coefficients(car.relative, gc) is None


def test_strong_tracker_converges_to_error_function(strong_rel1d):
    _, vf = strong_rel1d
    assert vf.converged
    x = vf.grid.axes[0]
    assert np.max(np.abs(vf.values[-1] - x ** 2)) < 1e-9


def test_value_dominates_error_and_grows_with_horizon(weak_rel1d):
    _, vf = weak_rel1d
    x = vf.grid.axes[0]
    assert np.all(vf.values >= x ** 2 - 1e-12)
    assert np.all(np.diff(vf.values, axis=0) >= -1e-12)
    assert not vf.converged
    assert vf.times[0] == 0.0 and vf.times[-1] == pytest.approx(2.0)


@pytest.mark.parametrize("scheme", ["lf", "godunov"])
def test_first_order_convergence_inside_domain_of_dependence(scheme):
    # values flow inward from the truncation boundary at speed 0.2, so compare on |r| <= 0.7
    rel = make_model("rel1d", {"u_max": 0.5}).relative
    errs = []
    for n in (101, 201, 401):
        g = Grid((-1.0,), (1.0,), (n,))
        vf = solve_hjvi(rel, g, SolverConfig(horizon=1.0, snapshots=3, scheme=scheme))
        assert vf.meta["scheme"] == scheme
        x = g.axes[0]
        inner = np.abs(x) <= 0.7
        errs.append(np.max(np.abs(vf.values[-1] - (np.abs(x) + 0.2) ** 2)[inner]))
    assert errs[0] < 2.5e-3
    assert errs[1] < 0.6 * errs[0] and errs[2] < 0.6 * errs[1]


@pytest.mark.skipif("numba" not in kernels.available_backends(), reason="numba missing")
@pytest.mark.parametrize("scheme", ["lf", "godunov"])
def test_backends_produce_identical_solutions(scheme):
    rel = make_model("dint2d").relative
    g = Grid((-1.0, -1.5), (1.0, 1.5), (31, 31))
    cfg = SolverConfig(horizon=0.5, snapshots=3, scheme=scheme)
    a = _with_backend("numpy", lambda: solve_hjvi(rel, g, cfg))
    b = _with_backend("numba", lambda: solve_hjvi(rel, g, cfg))
    assert a.steps == b.steps
    assert np.allclose(a.values, b.values, atol=1e-12, rtol=0)


@pytest.mark.skipif("numba" not in kernels.available_backends(), reason="numba missing")
def test_backends_agree_with_periodic_dimension():
    car = make_model("car5d_car3d")
    g = Grid((-0.2, -0.2, -np.pi, -0.2, -2.5), (0.2, 0.2, np.pi, 0.4, 2.5), (7, 7, 8, 7, 7),
             (False, False, True, False, False))
    cfg = SolverConfig(horizon=0.05, snapshots=2)
    a = _with_backend("numpy", lambda: solve_hjvi(car.relative, g, cfg))
    b = _with_backend("numba", lambda: solve_hjvi(car.relative, g, cfg))
    assert np.allclose(a.values, b.values, atol=1e-12, rtol=0)


def test_nonfinite_error_function_is_a_numerical_failure():
    import dataclasses

    rel = make_model("rel1d").relative
    bad = dataclasses.replace(rel, error_fn=lambda r: np.log(r[..., 0]))
    with np.errstate(all="ignore"):
        with pytest.raises(NumericalFailure):
            solve_hjvi(bad, Grid((-1.0,), (1.0,), (21,)), SolverConfig(horizon=0.1))


def test_all_nodes_untrusted_is_degenerate():
    rel = make_model("rel1d").relative
    with pytest.raises(DegenerateDomain):
        solve_hjvi(rel, Grid((-1.0,), (1.0,), (5,)), SolverConfig(horizon=0.1, untrusted_cells=2))


def test_decomposition_reuses_identical_blocks():
    entry = make_model("rel1d", {"dims": 3})
    g = Grid((-1.0,), (1.0,), (41,))
    vfs, vmin = solve_decomposed(entry.subsystems, {s.name: g for s in entry.subsystems},
                                 SolverConfig(horizon=1.0))
    assert vfs[0] is vfs[1] is vfs[2]
    assert vmin == pytest.approx(vfs[0].vmin)


def test_overlapping_subsystems_rejected():
    rel = make_model("rel1d").relative
    subs = [Subsystem("a", rel, (0,), (0,), (0,), (0,)), Subsystem("b", rel, (0,), (0,), (0,), (0,))]
    g = Grid((-1.0,), (1.0,), (21,))
    with pytest.raises(InvalidDecomposition):
        solve_decomposed(subs, [g, g], SolverConfig(horizon=0.1))


def test_progress_callback_sees_every_step():
    rel = make_model("rel1d").relative
    seen = []
    vf = solve_hjvi(rel, Grid((-1.0,), (1.0,), (21,)), SolverConfig(horizon=0.2),
                    progress=lambda step, t, change: seen.append(step))
    assert seen == list(range(1, vf.steps + 1))
