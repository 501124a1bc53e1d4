import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachnav.controller import ControllerParams, HybridState, JumpKind
from reachnav.geometry import (PolygonRegion, box_polygon, conic_hull_contains, disk_polygon,
                               distance_to_region, projection_set)
from reachnav.morphology import WorkspaceModel
from reachnav.sensor import (Arc, EncounterState, SensedBoundary, SensorConfig, SensorError,
                             VirtualRing, collision_corridor, collision_corridor_blocked, identify,
                             load_scan_csv, nearest_from_scan, place_ring_on_landing, ring_track,
                             save_scan_csv, scan, sensor_jump_identification)

PARAMS = ControllerParams(kappa_s=0.5, kappa_r=1.0, alpha=0.4, r_a=0.1, gamma=0.25,
                          gamma_s=0.1, delta=0.3, epsilon=0.05)
CFG = SensorConfig(1.0, 720)
WALL = WorkspaceModel(None, [box_polygon(2.0, -3.0, 2.5, 3.0)], 0.05, 0.05)
CHEVRON = WorkspaceModel(None, [PolygonRegion([[(2, 0), (3.5, 1.5), (3.5, 2.0), (1.5, 0),
                                                (3.5, -2.0), (3.5, -1.5)]])], 0.05, 0.05)


def test_config_validation():
    CFG.validate(alpha=0.4)
    with pytest.raises(ValueError):
        SensorConfig(1.0, 4).validate()
    with pytest.raises(ValueError):
        SensorConfig(0.7).validate(alpha=0.4)
    with pytest.raises(ValueError):
        SensorConfig(1.0, 360, -0.1).validate()


def test_scan_examples():
    empty = WorkspaceModel(None, [], 0.1, 0.0)
    s = scan((0, 0), empty, SensorConfig(3.0))
    assert np.all(s.ranges == 3.0) and not s.hits.any()
    assert np.all(np.diff(s.thetas) > 0) and s.thetas[0] == -math.pi and s.thetas[-1] < math.pi
    wall = WorkspaceModel(None, [box_polygon(1, -5, 3, 5)], 0.1, 0.0)
    s = scan((0, 0), wall, SensorConfig(3.0, 360))
    k = int(np.argmin(np.abs(s.thetas)))
    assert s.thetas[k] == 0.0 and s.ranges[k] == pytest.approx(1.0, abs=1e-12)
    far = WorkspaceModel(None, [disk_polygon((10, 0), 1.0)], 0.1, 0.0)
    assert np.all(scan((0, 0), far, SensorConfig(3.0)).ranges == 3.0)
    with pytest.raises(SensorError):
        scan((2.0, 0.0), wall, SensorConfig(3.0))


def test_scan_noise_seeded_and_clamped():
    cfg = SensorConfig(1.0, 360, 0.05)
    a = scan((1.6, 0.0), WALL, cfg, 4)
    b = scan((1.6, 0.0), WALL, cfg, 4)
    np.testing.assert_array_equal(a.ranges, b.ranges)
    assert np.all((a.ranges >= 0) & (a.ranges <= 1.0))
    clean = scan((1.6, 0.0), WALL, CFG)
    assert not np.array_equal(a.ranges, scan((1.6, 0.0), WALL, cfg, 5).ranges)
    # misses are never perturbed
    miss = scan((1.6, 0.0), WALL, SensorConfig(1.0, 360))
    assert np.all(a.ranges[~miss.hits] == 1.0)
    assert clean.sigma == 0.0


def test_nearest_examples():
    res = nearest_from_scan(scan((1.6, 0.2), WALL, CFG))
    assert res.unique and res.distance == pytest.approx(0.4, abs=1e-9)
    np.testing.assert_allclose(res.point, (2.0, 0.2), atol=1e-9)
    x = (2.3, 0.0)
    res = nearest_from_scan(scan(x, CHEVRON, CFG))
    exact = projection_set(x, CHEVRON.obstacles[0])
    assert not res.unique and len(res.points) == 2 == len(exact.points)
    assert res.distance == pytest.approx(exact.distance, abs=1e-3)
    for p in exact.points:
        assert min(np.hypot(*(np.asarray(q) - p)) for q in res.points) < 5e-3
    none = nearest_from_scan(scan((0, 0), WALL, CFG))
    assert none.points == [] and none.distance == 1.0


ROOM = WorkspaceModel(box_polygon(-3, -3, 3, 3),
                      [disk_polygon((1.0, 1.0), 0.5, 64), box_polygon(-2, -1, -1, 0.5)], 0.05, 0.05)


@settings(max_examples=150, deadline=None)
@given(st.floats(-2.8, 2.8), st.floats(-2.8, 2.8))
def test_noise_free_distance_bound(px, py):
    x = np.array([px, py])
    regs = ROOM.occupied_regions()
    true = min(distance_to_region(x, r) for r in regs)
    if true <= 1e-3:
        return
    cfg = SensorConfig(1.5, 360)
    res = nearest_from_scan(scan(x, ROOM, cfg))
    if true >= cfg.R_s:
        assert res.points == []
        return
    assert res.distance >= true - 1e-9
    # angular discretization, plus half a ray spacing of arc at that range for
    # projections onto a vertex, where the miss grows linearly with the bearing error
    half = math.pi / cfg.ray_count
    assert res.distance - true <= cfg.R_s * (1 - math.cos(half)) + true * half + 1e-9


def test_corridor_examples():
    np.testing.assert_allclose(sorted(map(tuple, collision_corridor((2, 0), 0.5))),
                               sorted([(2, 0.5), (2, -0.5), (0, 0.5), (0, -0.5)]), atol=1e-12)
    assert collision_corridor_blocked((2, 0), [(1, 0)], 0.5)
    assert not collision_corridor_blocked((2, 0), [(1, 0.6)], 0.5)
    assert not collision_corridor_blocked((2, 0), [(2.5, 0.0), (-0.2, 0.0)], 0.5)
    assert not collision_corridor_blocked((0, 0), [(0, 0)], 0.5)
    # the per-point widening catches a corner between two rays
    assert collision_corridor_blocked((2, 0), [(1, 0.55)], 0.5, gap=0.1)


def test_place_ring_flat_wall():
    x = np.array([2.7, 0.0])
    b = SensedBoundary(scan(x, WALL, CFG))
    proj = b.project(x)
    ring, gamma = place_ring_on_landing(x, proj, PARAMS, 0.2, b)
    assert gamma == pytest.approx(0.2)
    assert ring.radius == pytest.approx(0.3)
    np.testing.assert_allclose(ring.center, (2.8, 0.0), atol=1e-9)
    assert ring.slack(x, PARAMS.r_a) <= 1e-9


def test_landing_jump_sets_gamma_s():
    x = np.array([2.69, 0.1])
    b = SensedBoundary(scan(x, WALL, CFG))
    enc = EncounterState(beta=0.2)
    ev = identify(HybridState(x, (0, 0), 0), b, enc, PARAMS)
    assert ev.kind == "jump" and ev.jump == JumpKind.LANDING
    assert ev.gamma_s == pytest.approx(0.2 - PARAMS.r_a)
    assert ev.ring.slack(x, PARAMS.r_a) <= 1e-9
    # outside the beta shell nothing happens
    far = np.array([2.75, 0.1])
    assert identify(HybridState(far, (0, 0), 0), SensedBoundary(scan(far, WALL, CFG)), enc,
                    PARAMS) is None


def test_chevron_case_b_augments_with_fan_arc():
    x = np.array([2.3, 0.0])
    b = SensedBoundary(scan(x, CHEVRON, CFG))
    enc = EncounterState(beta=0.25)
    ev = identify(HybridState(x, (0, 0), 0), b, enc, PARAMS)
    assert ev.kind == "augment"
    arc = ev.arc
    np.testing.assert_allclose(arc.center, x)
    assert arc.radius == pytest.approx(0.3 / math.sqrt(2), abs=2e-3)
    assert arc.width == pytest.approx(math.pi / 2, abs=3 * CFG.spacing)
    for phi in np.linspace(-math.pi, math.pi, 721):
        q = x + np.array([math.cos(phi), math.sin(phi)])
        if abs(abs(phi) - 3 * math.pi / 4) < 1e-3:
            continue
        assert arc.contains_bearing(phi) == conic_hull_contains(x, ev.proj.points, q)
    # the arc lies on its circle
    pts = arc.samples(0.01)
    assert np.allclose(np.hypot(*(pts - x).T), arc.radius)
    # with the arc added the next landing sees one projection
    b2 = SensedBoundary(scan(x, CHEVRON, CFG), [arc])
    enc.overlays.append(arc)
    ev2 = identify(HybridState(x, (0, 0), 0), b2, enc, PARAMS)
    assert ev2 is None or ev2.kind == "jump"


def test_ring_track_convex_matches_exact_projection():
    model = WorkspaceModel(None, [disk_polygon((3.0, 0.0), 1.0, 720)], 0.05, 0.05)
    x = np.array([4.2, 0.0])
    b = SensedBoundary(scan(x, model, CFG))
    ring, _ = place_ring_on_landing(x, b.project(x), PARAMS, 0.2, b)
    for th in np.linspace(0, 1.5, 40):
        x = np.array([3.0, 0.0]) + 1.2 * np.array([math.cos(th), math.sin(th)])
        b = SensedBoundary(scan(x, model, CFG))
        ring, eff = ring_track(x, b, ring)
        exact = np.array([3.0, 0.0]) + 1.0 * (x - (3.0, 0.0)) / 1.2
        assert np.hypot(*(eff.point - exact)) < 5e-3
        assert eff.unique and not ring.held
        assert ring.slack(x, PARAMS.r_a) <= 1e-9


def test_ring_track_straight_wall_translates():
    x = np.array([2.7, -0.5])
    b = SensedBoundary(scan(x, WALL, CFG))
    ring, _ = place_ring_on_landing(x, b.project(x), PARAMS, 0.2, b)
    for y in np.linspace(-0.5, 0.5, 11):
        x = np.array([2.7, y])
        ring, eff = ring_track(x, SensedBoundary(scan(x, WALL, CFG)), ring)
        np.testing.assert_allclose(ring.center, (2.8, y), atol=1e-9)
        assert ring.radius == pytest.approx(0.3)


def test_ring_track_holds_in_narrow_notch():
    wall = PolygonRegion([[(2.5, -3), (4, -3), (4, 3), (2.5, 3), (2.5, 0.2), (2.9, 0.2),
                           (2.9, -0.2), (2.5, -0.2)]])
    model = WorkspaceModel(None, [wall], 0.05, 0.05)
    x = np.array([2.3, -0.8])
    b = SensedBoundary(scan(x, model, CFG))
    ring, _ = place_ring_on_landing(x, b.project(x), PARAMS, 0.2, b)
    held_seen = False
    for y in np.linspace(-0.8, 0.0, 41):
        x = np.array([2.3, y])
        b = SensedBoundary(scan(x, model, CFG))
        ring, eff = ring_track(x, b, ring)
        held_seen |= ring.held
        assert eff.unique and eff.distance >= 0
        # penetration stays below one ray spacing of arc at the ring radius
        assert distance_to_region(ring.center, wall) >= ring.radius * (1 - CFG.spacing)
        if ring.held:
            assert math.hypot(*(eff.point - ring.center)) == pytest.approx(ring.radius)
    assert held_seen


def test_sensor_jump_identification_examples():
    # mode 1 past the r_a + alpha shell
    x = np.array([3.05, 0.0])
    s = scan(x, WALL, CFG)
    ring = VirtualRing((2.8, 0.0), 0.3)
    assert sensor_jump_identification(HybridState(x, (3.1, 0), 1), s, ring, PARAMS) == \
        JumpKind.LEFT_SHELL
    # clear corridor but not enough progress
    wall = WorkspaceModel(None, [box_polygon(1.0, 0.3, 1.5, 3.0)], 0.05, 0.05)
    x = np.array([1.2, 0.1])
    s = scan(x, wall, CFG)
    ring = VirtualRing((1.2, 0.0), 0.3)
    assert sensor_jump_identification(HybridState(x, (1.22, 0), 1), s, ring, PARAMS) is None
    assert sensor_jump_identification(HybridState(x, (1.4, 0), 1), s, ring, PARAMS) == \
        JumpKind.EXIT
    with pytest.raises(SensorError):
        sensor_jump_identification(HybridState(x, (1.4, 0), 1), s, None, PARAMS)


def test_arc_projection():
    arc = Arc((0, 0), 1.0, 0.0, math.pi / 2)
    d, p = arc.project((2.0, 2.0))
    assert d == pytest.approx(2 * math.sqrt(2) - 1)
    np.testing.assert_allclose(p, (math.sqrt(0.5), math.sqrt(0.5)))
    d, p = arc.project((0.0, -2.0))
    np.testing.assert_allclose(p, (1.0, 0.0), atol=1e-12)
    whole = Arc.spanning((0, 0), 1.0, [(1, 0), (-0.5, 0.8), (-0.5, -0.8)])
    assert whole.width == pytest.approx(2 * math.pi)


def test_scan_csv_round_trip(tmp_path):
    s = scan((1.6, 0.3), WALL, SensorConfig(1.0, 64))
    save_scan_csv(s, tmp_path / "s.csv")
    back = load_scan_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.origin, s.origin)
    np.testing.assert_array_equal(back.thetas, s.thetas)
    np.testing.assert_array_equal(back.ranges, s.ranges)
    assert back.R_s == s.R_s
    assert (tmp_path / "s.csv").read_text().startswith("# x=1.6 y=0.3 R_s=1.0\ntheta_rad,range_m\n")
