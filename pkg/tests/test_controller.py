import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachnav.controller import (ControllerParams, DirectionPolicy, HybridState, JumpKind,
                                 ParameterError, Region, classify_from_projection, classify_region,
                                 control_input, direction_policy_default, jump_check,
                                 rotation_vector, update_law)
from reachnav.environment import ModifiedEnvironment, Projection
from reachnav.geometry import GeometryError, disk_polygon
from reachnav.morphology import WorkspaceModel

PARAMS = ControllerParams(kappa_s=0.5, kappa_r=2.0, alpha=1.0, r_a=0.4, gamma=0.45,
                          gamma_s=0.3, delta=0.5, epsilon=0.1)


class DiskEnv:
    """Exact reshaped environment for one disk obstacle."""

    def __init__(self, center=(5.0, 0.0), radius=1.0):
        self.c = np.asarray(center, float)
        self.R = radius

    def project(self, x):
        v = np.asarray(x, float) - self.c
        L = math.hypot(*v)
        p = self.c + self.R * v / L
        return Projection(L - self.R, p, True, 0, [p])

    def segment_blocked(self, x, chain, r_a):
        x = np.asarray(x, float)
        t = np.clip(np.dot(self.c, x) / np.dot(x, x), 0.0, 1.0) if np.dot(x, x) else 0.0
        return math.hypot(*(self.c - t * x)) < self.R + r_a


def oracle_region(x, c, R, ra, gamma):
    """Region tag straight from the set definitions, using analytic disk geometry."""
    x = np.asarray(x, float)
    v = x - c
    L = math.hypot(*v)
    if L - R - ra > gamma:
        return "far"
    n = v / L    # x - proj, scaled
    # closest point on [0, x] to the centre, sampled densely
    ts = np.linspace(0.0, 1.0, 20001)
    seg_d = np.min(np.hypot(ts * x[0] - c[0], ts * x[1] - c[1]))
    blocked = seg_d < R + ra
    if float(x @ n) >= 0 and blocked:
        return "landing"
    if not blocked:
        return "exit_always"
    ang = (math.atan2(n[1], n[0]) - math.atan2(x[1], x[0])) % (2 * math.pi)
    return "exit_cw" if ang >= math.pi else "exit_ccw"


def test_params_validation_messages():
    PARAMS.validate(d0=5.0, eps_bound=0.38)
    bad = [dict(kappa_s=0), dict(kappa_r=-1), dict(gamma_s=0), dict(gamma_s=0.5),
           dict(gamma=0.6), dict(delta=0), dict(epsilon=0)]
    for kw in bad:
        with pytest.raises(ParameterError):
            ControllerParams(**{**PARAMS.__dict__, **kw}).validate()
    with pytest.raises(ParameterError, match="delta"):
        PARAMS.validate(d0=0.8)
    with pytest.raises(ParameterError, match="epsilon exceeds Lemma-8 bound"):
        ControllerParams(**{**PARAMS.__dict__, "epsilon": 0.4}).validate(eps_bound=0.2)


def test_rotation_vector_examples():
    np.testing.assert_allclose(rotation_vector((1, 0), (0, 0), 1), (0, -1))
    np.testing.assert_allclose(rotation_vector((1, 0), (0, 0), -1), (0, 1))
    np.testing.assert_allclose(rotation_vector((0, 2), (0, 1), 1), (1, 0))
    with pytest.raises(GeometryError):
        rotation_vector((1, 1), (1, 1), 1)


coords = st.floats(-50, 50, allow_nan=False)


@given(coords, coords, coords, coords, st.sampled_from([-1, 1]))
def test_rotation_vector_unit_and_orthogonal(a, b, c, d, m):
    if math.hypot(a - c, b - d) < 1e-6:
        return
    v = rotation_vector((a, b), (c, d), m)
    assert abs(math.hypot(*v) - 1) < 1e-12
    n = np.array([a - c, b - d]) / math.hypot(a - c, b - d)
    assert abs(v @ n) < 1e-12


def test_control_input_examples():
    p = PARAMS
    np.testing.assert_allclose(control_input(HybridState((4, -2), (0, 0), 0), None, p), (-2, 1))
    np.testing.assert_allclose(control_input(HybridState((1, 0), (0, 0), 1), (0, 0), p), (0, -2))
    np.testing.assert_allclose(control_input(HybridState((0, 0), (0, 0), 0), None, p), (0, 0))
    with pytest.raises(ValueError):
        control_input(HybridState((1, 0), (0, 0), 1), None, p)


def test_hybrid_state_mode_checked():
    with pytest.raises(ValueError):
        HybridState((0, 0), (0, 0), 2)


@pytest.fixture(scope="module")
def disk_env():
    model = WorkspaceModel(None, [disk_polygon((5, 0), 1.0, 512)], 0.3, 0.1)
    return ModifiedEnvironment.build(model, 1.0, resolution=0.02)


def test_classify_examples(disk_env):
    assert classify_region((3.4, 0.0), disk_env, PARAMS) == Region.EXIT_ALWAYS
    assert classify_region((6.6, 0.0), disk_env, PARAMS) == Region.LANDING
    assert classify_region((10.0, 0.0), disk_env, PARAMS) == Region.FAR


def test_classify_directional_exits():
    # blocked, and x - proj leans away from the target on one side or the other
    x = np.array([1.0, 0.0])
    assert classify_from_projection(x, x - (-0.2, 1.0), blocked=True) == Region.EXIT_CCW
    assert classify_from_projection(x, x - (-0.2, -1.0), blocked=True) == Region.EXIT_CW
    assert classify_from_projection(x, x - (0.2, 1.0), blocked=True) == Region.LANDING
    assert classify_from_projection(x, x - (-0.2, 1.0), blocked=False) == Region.EXIT_ALWAYS


def test_classify_seam_at_pi():
    # x - proj antiparallel to x: the wrapped angle is exactly pi
    x, proj = np.array([3.0, 0.0]), np.array([4.0, 0.0])
    assert classify_from_projection(x, proj, blocked=True) == Region.EXIT_CW
    assert classify_from_projection(x, proj, blocked=True, m=1) == Region.EXIT_CW
    assert classify_from_projection(x, proj, blocked=True, m=-1) == Region.EXIT_CCW


def test_classify_matches_brute_force_oracle():
    env = DiskEnv()
    rng = np.random.default_rng(11)
    r = rng.uniform(1.0 + 0.4 + 1e-3, 1.0 + 0.4 + 0.45, 1500)
    th = rng.uniform(0, 2 * math.pi, 1500)
    pts = env.c + np.c_[r * np.cos(th), r * np.sin(th)]
    mism = 0
    for x in pts:
        got = classify_region(x, env, PARAMS).value
        want = oracle_region(x, env.c, env.R, 0.4, 0.45)
        mism += got != want
    # only points within the oracle's sampling step of a region seam may differ
    assert mism <= 2


def test_classify_known_map_matches_exact_disk(disk_env):
    env = DiskEnv()
    rng = np.random.default_rng(5)
    r = rng.uniform(1.42, 1.83, 400)
    th = rng.uniform(0, 2 * math.pi, 400)
    pts = env.c + np.c_[r * np.cos(th), r * np.sin(th)]
    agree = sum(classify_region(x, disk_env, PARAMS) == classify_region(x, env, PARAMS)
                for x in pts)
    assert agree >= 0.98 * len(pts)


def test_jump_examples():
    env = DiskEnv(center=(0.0, 5.0))
    # x at (3.85, 0.5)-ish in the cw exit region of a disk offset from the path
    p = PARAMS
    x = np.array([3.95, 0.0])
    x2 = np.array([3.85, 0.0])
    env = DiskEnv(center=(3.9, 1.75), radius=1.0)
    for xx in (x, x2):
        reg = classify_region(xx, env, p, 1)
        assert reg in (Region.EXIT_CW, Region.EXIT_ALWAYS)
    h = np.array([4.0, 0.0])
    assert jump_check(HybridState(x, h, 1), env, p) is None
    assert jump_check(HybridState(x2, h, 1), env, p) == JumpKind.EXIT
    # inside B_delta: jump whatever the region
    near = HybridState((0.3, 0.1), (4.0, 0.0), -1)
    assert jump_check(near, DiskEnv(center=(0.3, 1.65)), p) == JumpKind.NEAR_TARGET
    # leaving the gamma shell
    assert jump_check(HybridState((3.0, -1.0), h, 1), env, p) == JumpKind.LEFT_SHELL


def test_landing_jump_requires_inner_shell():
    env = DiskEnv()
    p = PARAMS
    assert jump_check(HybridState((6.65, 0.0), (0, 0), 0), env, p) == JumpKind.LANDING
    # landing region but still outside gamma_s
    assert jump_check(HybridState((6.75, 0.0), (0, 0), 0), env, p) is None
    # segment to the target misses the dilation
    assert jump_check(HybridState((3.35, 0.0), (0, 0), 0), env, p) is None


def test_update_law_examples():
    pol = DirectionPolicy()
    env = DiskEnv(center=(3.0, 2.5))
    s = HybridState((3, 1), (9, 9), 0)
    out = update_law(s, JumpKind.LANDING, pol, env.project((3, 1)).point, 0)
    np.testing.assert_array_equal(out.x, (3, 1))
    np.testing.assert_array_equal(out.h, (3, 1))
    assert out.m in (-1, 1)
    s = HybridState((2, 0), (5, 5), 1)
    out = update_law(s, JumpKind.EXIT, pol)
    np.testing.assert_array_equal(out.x, (2, 0))
    np.testing.assert_array_equal(out.h, (5, 5))
    assert out.m == 0
    with pytest.raises(ValueError):
        update_law(HybridState((1, 1), (0, 0), 0), JumpKind.EXIT, pol)


def test_direction_policy_examples():
    mem = {}
    # approach along +x toward a disk centred on the axis: tie goes clockwise
    assert direction_policy_default((6.6, 0.0), (6.0, 0.0), "c", mem) == 1
    assert direction_policy_default((6.5, -0.5), (5.9, -0.3), "c", mem) == 1
    mem = {"c": -1}
    assert direction_policy_default((6.6, 0.0), (6.0, 0.0), "c", mem) == -1
    # robot above the axis on the far side: counter-clockwise is the short way
    env = DiskEnv()
    x = np.array([6.6, 0.5])
    assert direction_policy_default(x, env.project(x).point, "d", {}) == -1
    x = np.array([6.6, -0.5])
    assert direction_policy_default(x, env.project(x).point, "d", {}) == 1


def test_random_policy_is_seeded_and_remembers():
    pa, pb = DirectionPolicy("random", seed=3), DirectionPolicy("random", seed=3)
    a = [pa.choose((1, 0), (0, 0), k) for k in range(40)]
    b = [pb.choose((1, 0), (0, 0), k) for k in range(40)]
    assert a == b and set(a) == {-1, 1}
    pol = DirectionPolicy("random", seed=1)
    first = pol.choose((1, 0), (0, 0), "x")
    assert all(pol.choose((1, 0), (0, 0), "x") == first for _ in range(10))
    pol.forget("x")
    assert "x" not in pol.memory


def flow_or_jump_oracle(x, h, m, env, p):
    """Membership in the flow set or the jump set, from the set definitions."""
    pr = env.project(x)
    d = pr.distance - p.r_a
    reg = oracle_region(x, env.c, env.R, p.r_a, p.gamma) if d <= p.gamma else "far"
    tol = 1e-9
    if m == 0:
        in_jump = d <= p.gamma_s and reg == "landing"
        in_flow = d >= p.gamma_s - tol or reg != "landing"
        return in_flow, in_jump
    own = "exit_cw" if m == 1 else "exit_ccw"
    progress = math.hypot(*h) - math.hypot(*x) >= p.epsilon
    in_jump = (d >= p.gamma or math.hypot(*x) <= p.delta
               or (reg in ("exit_always", own) and progress))
    strict_progress = math.hypot(*h) - math.hypot(*x) > p.epsilon + tol
    in_flow = (d <= p.gamma + tol and math.hypot(*x) >= p.delta - tol
               and not (reg in ("exit_always", own) and strict_progress))
    return in_flow, in_jump


def test_flow_jump_cover_and_jump_agreement():
    env = DiskEnv()
    p = PARAMS
    rng = np.random.default_rng(2)
    n = 3000
    r = rng.uniform(1.0 + 0.4 + 1e-4, 1.0 + 0.4 + 0.6, n)
    th = rng.uniform(0, 2 * math.pi, n)
    xs = env.c + np.c_[r * np.cos(th), r * np.sin(th)]
    hs = xs + rng.normal(0, 0.5, (n, 2))
    ms = rng.choice([-1, 0, 1], n)
    disagree = 0
    for x, h, m in zip(xs, hs, ms):
        fl, jp = flow_or_jump_oracle(x, h, int(m), env, p)
        assert fl or jp
        got = jump_check(HybridState(x, h, int(m)), env, p) is not None
        disagree += got != jp
    assert disagree <= 3


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(1.41, 1.74), st.sampled_from([-1, 1]),
       st.floats(0.0, 0.3))
def test_exit_jump_only_with_progress(th, r, m, extra):
    env = DiskEnv()
    x = env.c + r * np.array([math.cos(th), math.sin(th)])
    h = x * (1 + extra / max(math.hypot(*x), 1e-9))
    k = jump_check(HybridState(x, h, m), env, PARAMS)
    if k == JumpKind.EXIT:
        assert math.hypot(*x) <= math.hypot(*h) - PARAMS.epsilon + 1e-9


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(1.4001, 1.7), st.sampled_from(["target_side", "random"]))
def test_no_second_jump_after_landing(th, r, kind):
    env = DiskEnv()
    x = env.c + r * np.array([math.cos(th), math.sin(th)])
    s = HybridState(x, (0, 0), 0)
    if jump_check(s, env, PARAMS) != JumpKind.LANDING:
        return
    s2 = update_law(s, JumpKind.LANDING, DirectionPolicy(kind), env.project(x).point, 0)
    np.testing.assert_array_equal(s2.x, x)
    assert jump_check(s2, env, PARAMS) is None
