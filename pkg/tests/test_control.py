import math

import numpy as np
import pytest

from crowdevac.control import (ControlSchedule, LeaderStrategy, WaypointPlan,
                               followers_center_of_mass, go_to_target_control,
                               schedule_to_control)
from crowdevac.state import CrowdState, FollowerState

from helpers import params_for


def _plan(*points, exit_pos=(10.0, 0.0)):
    stops = [(np.asarray(p), t) for p, t in points]
    stops.append((np.asarray(exit_pos), math.inf))
    return WaypointPlan(tuple(stops))


def test_pure_pursuit_unit_direction():
    strat = LeaderStrategy(beta=1.0, plan=_plan(exit_pos=(3.0, 4.0)))
    out = go_to_target_control(strat, (0.0, 0.0), (50.0, 50.0), 0.0)
    np.testing.assert_allclose(out, [0.6, 0.8], rtol=1e-12)


def test_pure_center_of_mass_attraction():
    strat = LeaderStrategy(beta=0.0, plan=_plan(exit_pos=(3.0, 4.0)))
    out = go_to_target_control(strat, (0.0, 0.0), (1.0, 1.0), 0.0)
    np.testing.assert_allclose(out, [1.0, 1.0], rtol=1e-12)


def test_blended_control():
    strat = LeaderStrategy(beta=0.6, plan=_plan(exit_pos=(1.0, 0.0)))
    out = go_to_target_control(strat, (0.0, 0.0), (0.0, 2.0), 0.0)
    np.testing.assert_allclose(out, [0.6, 0.8], rtol=1e-9)


def test_control_at_waypoint_has_no_pursuit_term():
    strat = LeaderStrategy(beta=1.0, plan=_plan(exit_pos=(2.0, 2.0)))
    out = go_to_target_control(strat, (2.0, 2.0), (0.0, 0.0), 0.0)
    np.testing.assert_allclose(out, [0.0, 0.0])


def test_no_followers_degenerates_to_pursuit():
    strat = LeaderStrategy(beta=0.0, plan=_plan(exit_pos=(3.0, 4.0)))
    out = go_to_target_control(strat, (0.0, 0.0), None, 0.0)
    np.testing.assert_allclose(out, [0.6, 0.8], rtol=1e-12)


def test_waypoint_switching_by_time():
    strat = LeaderStrategy(beta=1.0,
                           plan=_plan(((0.0, 5.0), 10.0), exit_pos=(5.0, 0.0)))
    before = go_to_target_control(strat, (0.0, 0.0), None, 9.9)
    after = go_to_target_control(strat, (0.0, 0.0), None, 10.0)
    np.testing.assert_allclose(before, [0.0, 1.0])
    np.testing.assert_allclose(after, [1.0, 0.0])


def test_waypoint_plan_validation():
    with pytest.raises(ValueError):
        WaypointPlan((((0.0, 0.0), 5.0), ((1.0, 1.0), 5.0), ((2.0, 2.0), math.inf)))
    with pytest.raises(ValueError):
        WaypointPlan((((0.0, 0.0), 5.0),))  # last entry must be open-ended


def test_control_bound():
    rng = np.random.default_rng(3)
    for _ in range(200):
        beta = rng.uniform(0, 1)
        y = rng.normal(0, 5, 2)
        m_f = rng.normal(0, 5, 2)
        tgt = rng.normal(0, 5, 2)
        strat = LeaderStrategy(beta=beta, plan=_plan(exit_pos=tgt))
        out = go_to_target_control(strat, y, m_f, 0.0)
        bound = beta + (1 - beta) * np.linalg.norm(m_f - y)
        assert np.linalg.norm(out) <= bound + 1e-12


def test_center_of_mass_cases():
    params = params_for(2, 0)
    state = CrowdState([FollowerState((0.0, 0.0), (0, 0), 0.5),
                        FollowerState((2.0, 0.0), (0, 0), 0.5)])
    np.testing.assert_allclose(followers_center_of_mass(state), [1.0, 0.0])

    single = CrowdState([FollowerState((3.0, 7.0), (0, 0), 1.0)])
    np.testing.assert_allclose(followers_center_of_mass(single), [3.0, 7.0])

    weighted = CrowdState([FollowerState((0.0, 0.0), (0, 0), 0.75),
                           FollowerState((4.0, 0.0), (0, 0), 0.25)])
    np.testing.assert_allclose(followers_center_of_mass(weighted), [1.0, 0.0],
                               rtol=1e-9)


def test_center_of_mass_requires_active_followers():
    state = CrowdState([FollowerState((0.0, 0.0), (0, 0), 1.0, evacuated_at=1.0)])
    with pytest.raises(ValueError):
        followers_center_of_mass(state)


def _schedule(points, start=(0.0, 0.0), times=(1.0, 2.0, 3.0), speed=1.0):
    return ControlSchedule(np.asarray(times), {0: np.asarray(points)},
                           {0: np.asarray(start)}, speed)


def test_schedule_direction_and_scaling():
    sched = _schedule([(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)], speed=2.0)
    np.testing.assert_allclose(schedule_to_control(sched, 0, 0.5), [2.0, 0.0])
    np.testing.assert_allclose(schedule_to_control(sched, 0, 1.5), [2.0, 0.0])


def test_schedule_right_continuous_at_switch():
    sched = _schedule([(1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
    np.testing.assert_allclose(schedule_to_control(sched, 0, 1.0), [0.0, 1.0])
    np.testing.assert_allclose(schedule_to_control(sched, 0, 2.0), [-1.0, 0.0])


def test_schedule_degenerate_segment_holds_position():
    sched = _schedule([(1.0, 0.0), (1.0, 0.0), (2.0, 0.0)])
    np.testing.assert_allclose(schedule_to_control(sched, 0, 1.5), [0.0, 0.0])


def test_schedule_piecewise_constant():
    rng = np.random.default_rng(0)
    times = np.array([1.0, 2.0, 3.0, 4.0])
    sched = ControlSchedule(times, {0: rng.normal(0, 3, (4, 2))},
                            {0: rng.normal(0, 3, 2)}, 1.0)
    for m, (lo, hi) in enumerate(zip([0.0, *times[:-1]], times)):
        ts = np.linspace(lo, hi - 1e-9, 7)
        vals = np.array([schedule_to_control(sched, 0, t) for t in ts])
        assert np.ptp(vals, axis=0).max() == 0.0


def test_lone_leader_converges_to_target():
    # beta = 1, no repulsion partners: distance to the waypoint decreases
    # every step until capture
    import crowdevac as ce
    from crowdevac.micro import euler_step, _leader_controls
    from crowdevac.state import LeaderState

    params = params_for(1, 1)
    env = ce.Environment((ce.Exit((8.0, 6.0), 2.0, 0.5),))
    strat = LeaderStrategy(aware=False, beta=1.0,
                           plan=_plan(exit_pos=(8.0, 6.0)))
    state = CrowdState(
        [FollowerState((-50.0, -50.0), (0.0, 0.0), params.rho_f)],
        [LeaderState((0.0, 0.0), (0.0, 0.0), params.rho_l, strategy=strat)])
    d_prev = np.linalg.norm(state.lpos[0] - [8.0, 6.0])
    for _ in range(200):
        controls = _leader_controls(state, None, np.array([-50.0, -50.0]))
        state = euler_step(params, env, state, controls)
        if not state.lactive[0]:
            break
        d = np.linalg.norm(state.lpos[0] - [8.0, 6.0])
        assert d < d_prev
        d_prev = d
    assert not state.lactive[0]
