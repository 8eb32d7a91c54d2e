import math

import numpy as np
import pytest

from pseudolat.geometry import CircularTrajectory, LinearTrajectory, Position3, WaypointSeries
from pseudolat.relocation import RelocationPolicy, predict_target, relocate

POLICY = RelocationPolicy(min_radius=10.0, shrink_factor=0.7, max_center_step=50.0, altitude=100.0)


def series(points):
    t = np.array([p[0] for p in points], dtype=float)
    p = np.array([p[1] for p in points], dtype=float)
    return WaypointSeries(t, p)


class TestPredict:
    def test_constant_velocity_extrapolation(self):
        hist = series([(0.0, (0, 0, 0)), (1.0, (1, 0, 0))])
        assert np.allclose(predict_target(hist, 2.0).as_array(), [3, 0, 0])

    def test_single_point_returned(self):
        hist = series([(0.0, (5, 5, 0))])
        assert np.allclose(predict_target(hist, 10.0).as_array(), [5, 5, 0])

    def test_static_history(self):
        hist = series([(0.0, (2, 3, 0)), (1.0, (2, 3, 0)), (2.0, (2, 3, 0))])
        assert np.allclose(predict_target(hist, 7.0).as_array(), [2, 3, 0])

    def test_uses_last_two_points_only(self):
        hist = series([(0.0, (0, 0, 0)), (1.0, (100, 0, 0)), (2.0, (100, 1, 0))])
        assert np.allclose(predict_target(hist, 1.0).as_array(), [100, 2, 0])


class TestRelocate:
    def make_spec(self, center=(0, 0, 100), radius=50.0, phase0=0.0):
        return CircularTrajectory(
            center=Position3(*center), radius=radius, angular_speed=0.1, phase0=phase0
        )

    def test_predicted_at_center_only_shrinks(self):
        spec = self.make_spec()
        new = relocate(spec, Position3(0, 0, 0), POLICY)
        assert np.allclose(new.center.as_array(), [0, 0, 100])
        assert new.radius == pytest.approx(35.0)
        assert new.angular_speed == spec.angular_speed

    def test_step_clamped_along_bearing(self):
        spec = self.make_spec()
        new = relocate(spec, Position3(1000.0, 0.0, 0.0), POLICY)
        assert np.allclose(new.center.as_array(), [50.0, 0.0, 100.0])

    def test_radius_floor(self):
        spec = self.make_spec(radius=12.0)
        new = relocate(spec, Position3(0, 0, 0), POLICY)
        assert new.radius == POLICY.min_radius

    def test_rejects_linear(self):
        spec = LinearTrajectory(start=Position3(0, 0, 100), velocity=Position3(10, 0, 0))
        with pytest.raises(ValueError):
            relocate(spec, Position3(0, 0, 0), POLICY)

    def test_phase_continuity_nearest_point(self):
        spec = self.make_spec(phase0=0.3)
        uav = spec.center.as_array() + spec.radius * np.array(
            [math.cos(spec.phase0), math.sin(spec.phase0), 0.0]
        )
        new = relocate(spec, Position3(30.0, 40.0, 0.0), POLICY)
        first = new.center.as_array() + new.radius * np.array(
            [math.cos(new.phase0), math.sin(new.phase0), 0.0]
        )
        # No point of the new circle is closer to the anchor's current spot.
        angles = np.linspace(0, 2 * math.pi, 720, endpoint=False)
        pts = new.center.as_array()[None, :] + new.radius * np.column_stack(
            [np.cos(angles), np.sin(angles), np.zeros_like(angles)]
        )
        assert np.linalg.norm(first - uav) <= np.min(np.linalg.norm(pts - uav, axis=1)) + 1e-9

    def test_repeated_relocation_converges_geometrically(self):
        # Closed-form fixed point: center -> target, radius -> floor.
        target = Position3(200.0, -120.0, 0.0)
        spec = self.make_spec()
        d0 = math.hypot(200.0, -120.0)
        n_steps = math.ceil(d0 / POLICY.max_center_step)
        dist_prev = d0
        for k in range(n_steps + 2):
            spec = relocate(spec, target, POLICY)
            dist = math.hypot(spec.center.x - target.x, spec.center.y - target.y)
            assert dist <= dist_prev + 1e-12
            assert math.hypot(spec.center.x, spec.center.y) <= d0 + 1e-9
            expected_radius = max(POLICY.min_radius, 50.0 * POLICY.shrink_factor ** (k + 1))
            assert spec.radius == pytest.approx(expected_radius, rel=1e-12)
            dist_prev = dist
        assert dist_prev < 1e-3

    def test_center_step_bound_invariant(self):
        rng = np.random.default_rng(3)
        spec = self.make_spec()
        for _ in range(50):
            predicted = Position3(*rng.uniform(-500, 500, 2), 0.0)
            new = relocate(spec, predicted, POLICY)
            step = np.linalg.norm(new.center.as_array()[:2] - spec.center.as_array()[:2])
            assert step <= POLICY.max_center_step + 1e-9
            assert new.radius >= POLICY.min_radius
            spec = new

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            RelocationPolicy(min_radius=0.0, shrink_factor=0.5, max_center_step=10, altitude=50)
        with pytest.raises(ValueError):
            RelocationPolicy(min_radius=5.0, shrink_factor=1.5, max_center_step=10, altitude=50)
        with pytest.raises(ValueError):
            RelocationPolicy(min_radius=5.0, shrink_factor=0.5, max_center_step=0, altitude=50)


def test_empty_history_unrepresentable():
    # The series type itself refuses to hold zero estimates, which enforces
    # the predictor's nonempty-history precondition at construction time.
    with pytest.raises(ValueError):
        WaypointSeries(np.array([]), np.zeros((0, 3)))
