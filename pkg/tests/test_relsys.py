import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from safetrack.errors import InvalidArgument, ModelNotFound
from safetrack.relsys import BoxSet, make_model, model_names, resolve_params

MODELS = [("rel1d", {}), ("rel1d", {"dims": 3}), ("dint2d", {}), ("dint2d", {"dims": 3}),
          ("car5d_car3d", {}), ("quad10d_int3d", {}), ("quad8d_int4d", {})]
seeds = st.integers(0, 2 ** 31 - 1)


def _sample(box, rng):
    return np.asarray(box.low) + (np.asarray(box.high) - np.asarray(box.low)) * rng.random(box.dim)


def _state(entry, rng):
    rel = entry.relative
    s = rng.uniform(-0.3, 0.3, rel.tracking.n_states)
    p = rng.uniform(-1.0, 1.0, rel.planning.n_states)
    return s, p


def test_catalog_lists_every_pair():
    assert model_names() == ["car5d_car3d", "dint2d", "quad10d_int3d", "quad8d_int4d", "rel1d"]


def test_unknown_model_and_parameter_rejected():
    with pytest.raises(ModelNotFound):
        make_model("unicycle")
    with pytest.raises(InvalidArgument):
        resolve_params("rel1d", {"u_maximum": 2.0})


def test_parameter_alias_is_accepted():
    assert resolve_params("rel1d", {"û_max": 0.3})["uhat_max"] == 0.3


def test_boxset_basics():
    b = BoxSet((-1.0, 0.0), (1.0, 2.0))
    assert b.dim == 2
    assert np.allclose(b.mid, [0.0, 1.0])
    assert np.allclose(b.half, [1.0, 1.0])
    assert b.contains([0.5, 1.5]) and not b.contains([0.5, 2.5])
    assert np.allclose(b.clip([3.0, -1.0]), [1.0, 0.0])
    assert len(b.corners()) == 4
    assert len(b.lattice(3)) == 9
    with pytest.raises(InvalidArgument):
        BoxSet((1.0,), (0.0,))


@pytest.mark.parametrize("name,params", MODELS)
@given(seed=seeds)
def test_affine_view_matches_flow(name, params, seed):
    entry = make_model(name, params)
    rel = entry.relative
    rng = np.random.default_rng(seed)
    s, p = _state(entry, rng)
    u = _sample(rel.controls, rng)
    uh = _sample(rel.plan_controls, rng)
    d = _sample(rel.disturbances, rng)
    r = rel.relative_state(s, p)
    assert np.allclose(rel.affine_flow(r, u, uh, d), rel.relative_flow(r, u, uh, d), atol=1e-10)
    assert np.allclose(rel.tracking.affine_flow(s, u, d), rel.tracking.flow(s, u, d), atol=1e-10)
    assert np.allclose(rel.planning.affine_flow(p, uh), rel.planning.flow(p, uh), atol=1e-10)


@pytest.mark.parametrize("name,params", MODELS)
@given(seed=seeds)
def test_relative_flow_is_derivative_of_relative_state(name, params, seed):
    entry = make_model(name, params)
    rel = entry.relative
    rng = np.random.default_rng(seed)
    s, p = _state(entry, rng)
    u = _sample(rel.controls, rng)
    uh = _sample(rel.plan_controls, rng)
    d = _sample(rel.disturbances, rng)
    d_world = d.copy()
    if rel.transform == "rotation":
        # the relative model takes the position disturbance in the planner's frame
        th = p[rel.heading_idx]
        c, sn = math.cos(th), math.sin(th)
        d_world[0], d_world[1] = c * d[0] - sn * d[1], sn * d[0] + c * d[1]
    h = 1e-6
    s1 = s + h * rel.tracking.flow(s, u, d_world)
    p1 = p + h * rel.planning.flow(p, uh)
    s0 = s - h * rel.tracking.flow(s, u, d_world)
    p0 = p - h * rel.planning.flow(p, uh)
    fd = (rel.relative_state(s1, p1) - rel.relative_state(s0, p0)) / (2 * h)
    for k in rel.periodic:
        fd[k] = (fd[k] * 2 * h + math.pi) % (2 * math.pi) / (2 * h) - math.pi / (2 * h)
    r = rel.relative_state(s, p)
    assert np.allclose(fd, rel.relative_flow(r, u, uh, d), atol=1e-5)


@pytest.mark.parametrize("name,params", MODELS)
@given(seed=seeds)
def test_tracking_state_inverts_relative_state(name, params, seed):
    entry = make_model(name, params)
    rel = entry.relative
    s, p = _state(entry, np.random.default_rng(seed))
    back = rel.tracking_state(rel.relative_state(s, p), p)
    assert np.allclose(back, s, atol=1e-12)


@pytest.mark.parametrize("name,params", [m for m in MODELS if make_model(*m).subsystems])
@given(seed=seeds)
def test_subsystems_reproduce_full_flow_and_error(name, params, seed):
    entry = make_model(name, params)
    rel = entry.relative
    rng = np.random.default_rng(seed)
    r = rng.uniform(-0.3, 0.3, rel.n_states)
    u = _sample(rel.controls, rng)
    uh = _sample(rel.plan_controls, rng)
    d = _sample(rel.disturbances, rng)
    full = rel.relative_flow(r, u, uh, d)
    errs = []
    covered = []
    for sub in entry.subsystems:
        part = sub.rel.relative_flow(r[list(sub.state_idx)], u[list(sub.control_idx)],
                                     uh[list(sub.plan_control_idx)], d[list(sub.dist_idx)])
        assert np.allclose(part, full[list(sub.state_idx)], atol=1e-12)
        errs.append(float(sub.rel.error(r[list(sub.state_idx)])))
        covered.extend(sub.state_idx)
    assert sorted(covered) == list(range(rel.n_states))
    assert float(rel.error(r)) == pytest.approx(max(errs))


def test_inputs_outside_boxes_rejected():
    rel = make_model("rel1d").relative
    with pytest.raises(InvalidArgument):
        rel.relative_flow(np.zeros(1), np.array([2.0]), np.array([0.0]), np.array([0.0]))


def test_projection_matrices_select_positions():
    q10 = make_model("quad10d_int3d")
    assert q10.relative.Q.shape == (10, 3)
    assert [q10.relative.matched_plan_dim(i) for i in (0, 4, 8)] == [0, 1, 2]
    assert q10.relative.matched_plan_dim(1) is None
    q8 = make_model("quad8d_int4d")
    assert q8.relative.Q.shape == (8, 4)
    assert q8.position_dims == (0, 2)


def test_car_relative_frame_rotates_with_planner_heading():
    rel = make_model("car5d_car3d").relative
    p = np.array([0.0, 0.0, math.pi / 2])
    s = np.array([0.0, 1.0, math.pi / 2, 0.1, 0.0])
    r = rel.relative_state(s, p)
    # one metre ahead of a planner facing +y is +x in its frame
    assert np.allclose(r[:3], [1.0, 0.0, 0.0], atol=1e-12)


def test_heading_difference_wraps():
    rel = make_model("car5d_car3d").relative
    r = rel.relative_state(np.array([0, 0, 3.1, 0, 0]), np.array([0, 0, -3.1]))
    assert abs(r[2]) < 0.1


@pytest.mark.parametrize("name,params", MODELS)
def test_performance_controller_stays_in_box(name, params):
    entry = make_model(name, params)
    rel = entry.relative
    rng = np.random.default_rng(3)
    for _ in range(20):
        r = rng.uniform(-0.5, 0.5, rel.n_states)
        rate = rng.uniform(-0.5, 0.5, rel.planning.n_states)
        u = rel.performance(r, rate, 2.0)
        assert rel.controls.contains(u)
