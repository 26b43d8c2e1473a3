import math

import numpy as np
import pytest

from safetrack.errors import InitFailure, InvalidArgument, SensingTooShort
from safetrack.grid import Grid
from safetrack.hjsolver import SolverConfig, solve_decomposed, solve_hjvi
from safetrack.planning import GridPlanner, RRTPlanner
from safetrack.relsys import BoxSet, make_model
from safetrack.sim import (OPTIMAL, PERFORMANCE, DisturbancePolicy, HybridConfig, Scenario,
                           SimLog, hybrid_control, metrics, run_online, run_relative,
                           summary_json, world_disturbance)
from safetrack.teb import TrackingBound
from safetrack.world import Environment, Obstacle, SensorModel


@pytest.fixture(scope="module")
def plane():
    entry = make_model("rel1d", {"dims": 2})
    g = Grid((-1.0,), (1.0,), (101,))
    vfs, _ = solve_decomposed(entry.subsystems, [g, g], SolverConfig(horizon=5.0))
    return entry, TrackingBound.from_solution(entry.relative, entry.subsystems, vfs)


def _env(radius=1.5, obstacles=()):
    return Environment(BoxSet((-4.0, -3.0), (4.0, 3.0)), tuple(obstacles),
                       BoxSet((2.5, -0.8), (3.5, 0.8)), SensorModel("radial", radius))


def _scenario(plane, **kw):
    entry, bound = plane
    # held bang-bang control overshoots by about u_max * dt; keep that inside the bound
    planner = RRTPlanner.for_model(entry.planning, BoxSet((-4.0, -3.0), (4.0, 3.0)), 0.01, seed=1)
    base = dict(entry=entry, bound=bound, planner=planner, env=_env(),
                s0=np.array([-3.0, 0.0]), dt=0.01, max_steps=2000)
    base.update(kw)
    return Scenario(**base)


def test_config_validation():
    with pytest.raises(InvalidArgument):
        HybridConfig("nearest")
    with pytest.raises(InvalidArgument):
        HybridConfig(fraction=0.0)
    with pytest.raises(InvalidArgument):
        DisturbancePolicy("gaussian")


def test_hybrid_modes_follow_the_value(strong_bound):
    cfg = HybridConfig("value_fraction", fraction=0.5)
    # strong tracker: vmin 0, level 2e-4; switch when V >= 1e-4, i.e. |r| >= 0.01
    _, mode = hybrid_control(strong_bound, np.array([0.0]), 0.0, cfg)
    assert mode == PERFORMANCE
    u, mode = hybrid_control(strong_bound, np.array([0.05]), 0.0, cfg)
    assert mode == OPTIMAL and u[0] == pytest.approx(-1.0)
    thr = HybridConfig("error_threshold", threshold=0.1)
    assert hybrid_control(strong_bound, np.array([0.05]), 0.0, thr)[1] == PERFORMANCE
    assert hybrid_control(strong_bound, np.array([0.15]), 0.0, thr)[1] == OPTIMAL


def test_off_grid_forces_optimal(strong_bound):
    u, mode = hybrid_control(strong_bound, np.array([3.0]), 0.0, HybridConfig())
    assert mode == OPTIMAL and u[0] == pytest.approx(-1.0)


def test_world_disturbance_rotates_only_for_rotating_frames():
    d = np.array([0.1, 0.0, 0.0, 0.0])
    car = make_model("car5d_car3d").relative
    dw = world_disturbance(car, d[:car.disturbances.dim], np.array([0.0, 0.0, math.pi / 2]))
    assert np.allclose(dw[:2], [0.0, 0.1])
    rel = make_model("rel1d").relative
    assert np.allclose(world_disturbance(rel, [0.2], [5.0]), [0.2])


def test_strong_relative_rollout_never_leaves_bound(strong_bound):
    out = run_relative(strong_bound, [0.0], 2000, 0.01)
    assert max(out["value"]) <= strong_bound.level
    out = run_relative(strong_bound, [0.0], 500, 0.01, plan_policy="uniform",
                       disturbance=DisturbancePolicy("uniform", 3), hybrid=HybridConfig())
    assert max(out["value"]) <= strong_bound.level


def test_online_run_reaches_goal_safely(plane):
    lg = run_online(_scenario(plane, env=_env(obstacles=[Obstacle.from_bounds((-0.5, -3.0), (0.5, 1.0))])))
    m = metrics(lg)
    assert lg.reached_goal and m["violations"] == 0 and m["collisions"] == 0
    assert m["out_of_bounds"] == 0
    assert lg.meta["model"] == "rel1d"


def test_online_runs_are_deterministic(plane):
    kw = dict(disturbance=DisturbancePolicy("uniform", 9))
    a = run_online(_scenario(plane, **kw))
    b = run_online(_scenario(plane, **kw))
    assert a.to_csv() == b.to_csv()
    assert summary_json(a) == summary_json(b)


def test_short_sensor_and_bad_start_rejected(plane):
    with pytest.raises(SensingTooShort):
        run_online(_scenario(plane, env=_env(radius=0.01)))
    assert run_online(_scenario(plane, env=_env(radius=0.01), allow_short_sensing=True)).reached_goal


def test_start_outside_bound_rejected():
    entry = make_model("dint2d")
    g = Grid((-1.0, -1.5), (1.0, 1.5), (21, 21))
    bound = TrackingBound.single(entry.relative, solve_hjvi(entry.relative, g, SolverConfig(horizon=1.0)))
    env = Environment(BoxSet((-4.0,), (4.0,)), (), BoxSet((2.0,), (3.5,)), SensorModel("radial", 3.0))
    # a velocity far from the planner's leaves the relative state outside every bound
    s0 = np.array([-3.0, 1.4])
    with pytest.raises(InitFailure):
        run_online(Scenario(entry, bound, env, _FixedStart(entry), s0, 0.05))


class _FixedStart:
    """Never called: the run must fail before planning."""

    def __init__(self, entry):
        self.entry = entry

    def next_state(self, inp):  # pragma: no cover
        raise AssertionError("planner should not run")


def test_log_csv_round_trip(plane):
    lg = run_online(_scenario(plane, max_steps=20))
    text = lg.to_csv()
    back = SimLog.from_csv(text, 2, 2, 2, 2, 2)
    assert back.to_csv() == text
    assert len(back) == len(lg) == 20
    assert text.splitlines()[0].startswith("step,t,s_")


def test_metrics_on_empty_log():
    m = metrics(SimLog())
    assert m["steps"] == 0 and m["violations"] == 0 and m["max_error"] == []
    assert "planner_time_mean" not in summary_json(SimLog())


def test_grid_planner_scenario_time_varying_flag(weak_bound):
    entry = make_model("rel1d", {"u_max": 0.5})
    planner = GridPlanner(entry.planning, BoxSet((-4.0,), (4.0,)), (0,), 0.05)
    env = Environment(BoxSet((-4.0,), (4.0,)), (), BoxSet((2.0,), (3.5,)), SensorModel("radial", 2.0))
    lg = run_online(Scenario(entry, weak_bound, env, planner, np.array([-3.0]), 0.05, 400))
    assert lg.meta["time_varying"] is True
    assert lg.reached_goal
