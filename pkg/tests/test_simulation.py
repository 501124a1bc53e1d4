import math

import numpy as np
import pytest
from scipy.optimize import brentq

from reachnav.controller import ControllerParams, DirectionPolicy, HybridState, JumpKind
from reachnav.environment import ModifiedEnvironment
from reachnav.morphology import WorkspaceModel
from reachnav.simulation import (HybridTimeStamp, KnownMapSource, SafetyBreach, SingleIntegrator,
                                 StepContext, TrajectoryLog, compute_metrics, make_field, simulate)

from worlds import single_disk


def test_rk4_matches_exponential():
    f = lambda x: -1.0 * x  # noqa: E731
    y = np.array([1.0, 0.0])
    for k in range(1, 101):
        y = SingleIntegrator.step(y, 0.01, f, None)
        assert abs(y[0] - math.exp(-0.01 * k)) <= 1e-8
    assert y[1] == 0.0


def test_oa_flow_keeps_distance_to_disk():
    c, R = np.array([5.0, 0.0]), 1.0
    params = ControllerParams(0.5, 2.0, 1.0, 0.4, 0.45, 0.3, 0.5, 0.1)
    proj = lambda x: c + R * (x - c) / np.hypot(*(x - c))  # noqa: E731
    state = HybridState((5.0, 1.6), (5.0, 1.6), 1)
    field_ = make_field(SingleIntegrator(), state, StepContext(proj), params)
    y = state.x.copy()
    T, h = 3.0, 1e-3
    worst = 0.0
    for k in range(int(T / h)):
        y = SingleIntegrator.step(y, h, field_, None)
        worst = max(worst, abs(np.hypot(*(y - c)) - 1.6))
    assert worst <= 1e-4 * T


def test_stamps_order_lexicographically():
    assert HybridTimeStamp(1.0, 5) < HybridTimeStamp(2.0, 0)
    assert HybridTimeStamp(1.0, 1) < HybridTimeStamp(1.0, 2)
    assert sorted([HybridTimeStamp(1.0, 2), HybridTimeStamp(0.5, 9), HybridTimeStamp(1.0, 1)]) == [
        HybridTimeStamp(0.5, 9), HybridTimeStamp(1.0, 1), HybridTimeStamp(1.0, 2)]


@pytest.fixture(scope="module")
def disk_setup():
    model = single_disk()
    params = ControllerParams(0.5, 2.0, 1.0, model.r_a, 0.45, 0.3, 1.0, 0.15)
    env = ModifiedEnvironment.build(model, 1.0, 0.05)
    return model, params, env


def test_event_localized_against_analytic_crossing(disk_setup):
    model, params, env = disk_setup
    x0 = np.array([6.5, 0.01])
    src = KnownMapSource(env, params, DirectionPolicy())
    log = simulate(src, SingleIntegrator(), params, x0, model, dt=1e-2, budget=2000)
    t_jump = log.jumps[0][0]
    # flow in mode 0 is x0 exp(-kappa_s t); land when the shell distance reaches gamma_s
    g = lambda t: env.distance(x0 * math.exp(-params.kappa_s * t)) - params.r_a - params.gamma_s  # noqa: E731
    t_star = brentq(g, 0.0, 1.0, xtol=1e-12)
    assert abs(t_jump - t_star) <= 2e-6
    assert log.jumps[0][6] == JumpKind.LANDING.value


def test_single_disk_two_jumps_with_progress(disk_setup):
    model, params, env = disk_setup
    src = KnownMapSource(env, params, DirectionPolicy())
    log = simulate(src, SingleIntegrator(), params, (6.5, 0.01), model, dt=1e-2, budget=20000)
    res = compute_metrics(log, model, 0.5 * params.delta, 3.0)
    assert res.converged and res.jump_count == 2
    (t1, _, a1, b1, hx, hy, k1), (t2, _, a2, b2, _, _, k2) = log.jumps
    assert (a1, b1, k1) == (0, b1, "landing") and b1 in (-1, 1)
    assert (a2, b2, k2) == (b1, 0, "exit")
    x_exit = log.rows[[r[0] for r in log.rows].index(t2)]
    assert math.hypot(x_exit[2], x_exit[3]) <= math.hypot(hx, hy) - params.epsilon + 1e-9
    assert res.min_clearance >= model.r_a - 2 * 0.05


def test_target_side_direction_is_shorter(disk_setup):
    model, params, env = disk_setup
    lengths = {}
    for m in (-1, 1):
        pol = DirectionPolicy(memory={})
        src = KnownMapSource(env, params, pol)
        # pre-seed every chain id with the forced direction
        pol.memory.update({k: m for k in range(4)})
        src.policy = pol
        src.begin = _no_forget(src.begin, pol)
        log = simulate(src, SingleIntegrator(), params, (6.5, 0.4), model, dt=1e-2, budget=20000)
        lengths[m] = compute_metrics(log, model, 0.5, 3.0).path_length
    chosen = DirectionPolicy().choose(np.array([6.1, 0.4]), env.project((6.1, 0.4)).point, 0)
    assert chosen == -1
    assert lengths[-1] < lengths[1]


def _no_forget(begin, pol):
    def wrapped(state, t, log):
        keep = dict(pol.memory)
        out = begin(state, t, log)
        pol.memory.update(keep)
        return out
    return wrapped


def test_no_obstacle_run():
    model = WorkspaceModel(None, [], 0.3, 0.1)
    params = ControllerParams(0.5, 2.0, 1.0, 0.4, 0.45, 0.3, 1.0, 0.2)
    env = ModifiedEnvironment.build(model, 1.0, 0.05)
    src = KnownMapSource(env, params, DirectionPolicy())
    log = simulate(src, SingleIntegrator(), params, (3.0, 0.0), model, dt=1e-2, budget=100000,
                   convergence_radius=5e-4)
    res = compute_metrics(log, model, 5e-4, 3.0)
    assert res.converged and res.jump_count == 0
    assert res.min_clearance == 3.0
    assert res.path_length == pytest.approx(3.0, abs=1e-3)
    assert np.all(log.array("m") == 0)
    # mode-0 Lyapunov decrease
    assert np.all(np.diff(np.hypot(log.array("x"), log.array("y"))) <= 0)


def test_budget_exhaustion_is_not_converged(disk_setup):
    model, params, env = disk_setup
    src = KnownMapSource(env, params, DirectionPolicy())
    log = simulate(src, SingleIntegrator(), params, (6.5, 0.01), model, dt=1e-2, budget=50)
    res = compute_metrics(log, model, 0.5, 3.0)
    assert not res.converged and math.isnan(res.time_to_converge)
    assert len(log.rows) == 50


def test_breach_raises(disk_setup):
    model, params, env = disk_setup

    class Blind(KnownMapSource):
        def detect(self, state):
            return None

    src = Blind(env, params, DirectionPolicy())
    with pytest.raises(SafetyBreach):
        simulate(src, SingleIntegrator(), params, (6.5, 0.0), model, dt=1e-2, budget=5000)
    log = simulate(src, SingleIntegrator(), params, (6.5, 0.0), model, dt=1e-2, budget=5000,
                   raise_on_breach=False)
    assert log.breach is not None and log.breach["clearance"] < model.r_a
    assert compute_metrics(log, model, 0.5, 3.0).breach


def test_log_csv_round_trip(tmp_path, disk_setup):
    model, params, env = disk_setup
    src = KnownMapSource(env, params, DirectionPolicy())
    log = simulate(src, SingleIntegrator(), params, (6.5, 0.01), model, dt=2e-2, budget=3000)
    log.to_csv(tmp_path / "t.csv")
    log.jumps_to_csv(tmp_path / "j.csv")
    back = TrajectoryLog.from_csv(tmp_path / "t.csv", tmp_path / "j.csv")
    assert back.rows == [tuple(r) for r in log.rows]
    assert back.jumps == [tuple(r) for r in log.jumps]
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,j,x,y,hx,hy,m,clearance,ux,uy"
    st = back.stamps()
    assert all(a <= b for a, b in zip(st, st[1:]))


def test_metrics_examples():
    log = TrajectoryLog()
    for k in range(4):
        log.add(0.1 * k, 0, HybridState((3 - k, 0), (3, 0), 0), math.inf, (0, 0))
    res = compute_metrics(log, None, 0.5, 2.0)
    assert res.min_clearance == 2.0 and res.jump_count == 0
    assert res.path_length == pytest.approx(3.0)
    assert res.converged and res.time_to_converge == pytest.approx(0.3)
