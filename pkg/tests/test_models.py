import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ngslam.models import (
    ControlInput,
    LinearModel,
    Pose,
    VehicleParams,
    axle_velocity,
    inverse_measurement,
    jacobian_landmark,
    jacobian_pose,
    motion_jacobians,
    motion_step,
    predict_measurement,
    wrap_angle,
)


def finite_diff_jacobian(pose, lm, h=1e-6):
    """Central finite differences of the measurement, bearing rows wrapped."""
    fd = np.empty((2, 3))
    for j in range(3):
        dp = np.zeros(3)
        dp[j] = h
        diff = predict_measurement(pose + dp, lm) - predict_measurement(pose - dp, lm)
        diff[1] = wrap_angle(diff[1])
        fd[:, j] = diff / (2 * h)
    return fd


def finite_diff_jacobian_lm(pose, lm, h=1e-6):
    fd = np.empty((2, 2))
    for j in range(2):
        dm = np.zeros(2)
        dm[j] = h
        diff = predict_measurement(pose, lm + dm) - predict_measurement(pose, lm - dm)
        diff[1] = wrap_angle(diff[1])
        fd[:, j] = diff / (2 * h)
    return fd


class TestWrapAngle:
    def test_zero(self):
        assert wrap_angle(0.0) == 0.0

    def test_three_pi(self):
        assert np.isclose(wrap_angle(3 * np.pi), np.pi)

    def test_minus_pi_maps_to_plus_pi(self):
        # half-open interval convention: -pi is not a representative
        assert wrap_angle(-np.pi) == pytest.approx(np.pi)

    @given(st.floats(min_value=-1e4, max_value=1e4))
    @settings(max_examples=300)
    def test_wraps_into_interval_and_preserves_mod(self, theta):
        w = float(wrap_angle(theta))
        assert -np.pi < w <= np.pi
        assert np.isclose(np.sin(w), np.sin(theta), atol=1e-7)
        assert np.isclose(np.cos(w), np.cos(theta), atol=1e-7)


class TestMotionStep:
    def test_zero_velocity_is_identity(self):
        params = VehicleParams(dt=1.0)
        pose = np.array([1.0, -2.0, 0.5])
        out = motion_step(pose, ControlInput(0.0, 0.3), params)
        np.testing.assert_allclose(out, pose, atol=1e-15)

    def test_zero_velocity_identity_with_offsets(self):
        params = VehicleParams(sensor_offset_a=3.78, sensor_offset_b=0.5, dt=0.5)
        pose = np.array([0.3, 0.7, -1.2])
        out = motion_step(pose, ControlInput(0.0, -0.4), params)
        np.testing.assert_allclose(out, pose, atol=1e-15)

    def test_straight_line(self):
        out = motion_step(np.zeros(3), ControlInput(1.0, 0.0), VehicleParams(dt=1.0))
        np.testing.assert_allclose(out, [1.0, 0.0, 0.0], atol=1e-15)

    def test_quarter_steer_heading_rate(self):
        params = VehicleParams(wheelbase=2.83, dt=1.0)
        out = motion_step(np.zeros(3), ControlInput(1.0, np.pi / 4), params)
        assert out[2] == pytest.approx(np.tan(np.pi / 4) / 2.83, abs=1e-12)
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(0.0)

    def test_matches_fine_step_integration(self):
        # one Euler step at small dt vs many tiny substeps: O(dt^2) agreement
        dt = 0.01
        params = VehicleParams(wheelbase=2.83, dt=dt)
        u = ControlInput(1.0, np.pi / 4)
        coarse = motion_step(np.zeros(3), u, params)
        fine = np.zeros(3)
        fine_params = VehicleParams(wheelbase=2.83, dt=dt / 256)
        for _ in range(256):
            fine = motion_step(fine, u, fine_params, wrap=False)
        # heading integrates exactly; positions agree to O(dt^2)
        assert coarse[2] == pytest.approx(fine[2], abs=1e-12)
        assert np.hypot(*(coarse[:2] - fine[:2])) < 5e-5

    def test_rejects_steering_at_right_angle(self):
        with pytest.raises(ValueError):
            motion_step(np.zeros(3), ControlInput(1.0, np.pi / 2), VehicleParams())

    def test_broadcasts_over_pose_blocks(self):
        params = VehicleParams(dt=0.25)
        poses = np.random.default_rng(0).normal(size=(7, 3))
        u = np.array([2.0, 0.1])
        block = motion_step(poses, np.broadcast_to(u, (7, 2)), params)
        single = np.stack([motion_step(p, ControlInput(*u), params) for p in poses])
        np.testing.assert_allclose(block, single, atol=1e-14)


class TestMotionJacobians:
    @pytest.mark.parametrize("seed", range(20))
    def test_finite_difference_agreement(self, seed):
        rng = np.random.default_rng(seed)
        params = VehicleParams(
            wheelbase=2.83, sensor_offset_a=rng.uniform(0, 4), sensor_offset_b=rng.uniform(0, 1),
            dt=0.25,
        )
        pose = rng.normal(scale=3.0, size=3)
        u = np.array([rng.uniform(-3, 5), rng.uniform(-0.8, 0.8)])
        fx, fu = motion_jacobians(pose, u, params)
        h = 1e-6
        for j in range(3):
            dp = np.zeros(3)
            dp[j] = h
            fd = (
                motion_step(pose + dp, u, params, wrap=False)
                - motion_step(pose - dp, u, params, wrap=False)
            ) / (2 * h)
            np.testing.assert_allclose(fx[:, j], fd, atol=1e-6)
        for j in range(2):
            du = np.zeros(2)
            du[j] = h
            fd = (
                motion_step(pose, u + du, params, wrap=False)
                - motion_step(pose, u - du, params, wrap=False)
            ) / (2 * h)
            np.testing.assert_allclose(fu[:, j], fd, atol=1e-6)


class TestAxleVelocity:
    def test_zero_steering_is_identity(self):
        assert axle_velocity(5.0, 0.0, VehicleParams()) == 5.0

    def test_paper_geometry_value(self):
        params = VehicleParams(wheelbase=2.83, track=0.76)
        expected = 1.0 / (1.0 - 0.76 / 5.66)
        got = axle_velocity(1.0, np.pi / 4, params)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(1.1551, abs=1e-3)

    def test_linear_in_encoder_velocity(self):
        assert axle_velocity(0.0, 0.7, VehicleParams()) == 0.0

    def test_rejects_out_of_model_steering(self):
        # tan(alpha) large enough to zero the denominator
        params = VehicleParams(wheelbase=1.0, track=2.0)
        with pytest.raises(ValueError):
            axle_velocity(1.0, np.arctan(1.01), params)


class TestMeasurementModel:
    def test_three_four_five(self):
        z = predict_measurement(np.zeros(3), np.array([3.0, 4.0]))
        assert z[0] == pytest.approx(5.0)
        assert z[1] == pytest.approx(np.arctan2(4, 3))

    def test_dead_ahead_after_rotation(self):
        z = predict_measurement(np.array([0.0, 0.0, np.pi / 2]), np.array([0.0, 2.0]))
        np.testing.assert_allclose(z, [2.0, 0.0], atol=1e-15)

    def test_direct_formula_case(self):
        pose = np.array([1.0, 1.0, 0.3])
        lm = np.array([4.0, 5.0])
        z = predict_measurement(pose, lm)
        assert z[0] == pytest.approx(np.hypot(3.0, 4.0))
        assert z[1] == pytest.approx(np.arctan2(4.0, 3.0) - 0.3)
        np.testing.assert_allclose(inverse_measurement(pose, z), lm, atol=1e-12)

    def test_rejects_zero_range(self):
        with pytest.raises(ValueError):
            predict_measurement(np.array([2.0, 3.0, 0.1]), np.array([2.0, 3.0]))

    def test_inverse_simple_cases(self):
        np.testing.assert_allclose(
            inverse_measurement(np.zeros(3), np.array([5.0, np.arctan2(4, 3)])),
            [3.0, 4.0],
            atol=1e-12,
        )
        np.testing.assert_allclose(
            inverse_measurement(np.zeros(3), np.array([1.0, 0.0])), [1.0, 0.0], atol=1e-15
        )

    def test_inverse_rejects_zero_range(self):
        with pytest.raises(ValueError):
            inverse_measurement(np.zeros(3), np.array([0.0, 0.3]))

    def test_round_trip_random(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            pose = rng.normal(scale=10.0, size=3)
            pose[2] = wrap_angle(pose[2])
            lm = pose[:2] + rng.normal(scale=15.0, size=2)
            if np.hypot(*(lm - pose[:2])) < 1e-6:
                continue
            z = predict_measurement(pose, lm)
            np.testing.assert_allclose(inverse_measurement(pose, z), lm, atol=1e-10)


class TestJacobians:
    def test_unit_east_landmark(self):
        jp = jacobian_pose(np.zeros(3), np.array([1.0, 0.0]))
        np.testing.assert_allclose(jp, [[-1, 0, 0], [0, -1, -1]], atol=1e-15)
        jl = jacobian_landmark(np.zeros(3), np.array([1.0, 0.0]))
        np.testing.assert_allclose(jl, np.eye(2), atol=1e-15)

    def test_bearing_heading_entry_always_minus_one(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            pose = rng.normal(scale=5, size=3)
            lm = pose[:2] + rng.normal(scale=10, size=2)
            assert jacobian_pose(pose, lm)[1, 2] == -1.0

    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 1000:
            pose = rng.normal(scale=10.0, size=3)
            lm = pose[:2] + rng.normal(scale=12.0, size=2)
            if np.hypot(*(lm - pose[:2])) < 0.5:
                continue
            checked += 1
            fd = finite_diff_jacobian(pose, lm)
            scale = np.maximum(np.abs(fd), 1e-3)
            assert np.max(np.abs(jacobian_pose(pose, lm) - fd) / scale) < 1e-5
            fd_lm = finite_diff_jacobian_lm(pose, lm)
            scale = np.maximum(np.abs(fd_lm), 1e-3)
            assert np.max(np.abs(jacobian_landmark(pose, lm) - fd_lm) / scale) < 1e-5

    def test_landmark_jacobian_negates_pose_columns(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            pose = rng.normal(scale=8.0, size=3)
            lm = pose[:2] + rng.normal(scale=10.0, size=2)
            if np.hypot(*(lm - pose[:2])) < 1e-3:
                continue
            jp = jacobian_pose(pose, lm)
            np.testing.assert_allclose(jacobian_landmark(pose, lm), -jp[:, :2], atol=1e-14)

    def test_translation_symmetry(self):
        pose = np.array([0.0, 0.0, 0.4])
        lm = np.array([5.0, -3.0])
        shift = np.array([17.0, -8.0])
        shifted_pose = pose + np.array([*shift, 0.0])
        np.testing.assert_allclose(
            jacobian_pose(pose, lm), jacobian_pose(shifted_pose, lm + shift), atol=1e-12
        )

    def test_rejects_zero_range(self):
        with pytest.raises(ValueError):
            jacobian_pose(np.zeros(3), np.zeros(2))


class TestBearingWrapNearSeam:
    @given(st.floats(min_value=-0.05, max_value=0.05), st.booleans())
    @settings(max_examples=300)
    def test_innovations_near_pi_stay_small(self, eps, flip):
        # measurement bearing just past +pi vs prediction just under it
        model_bearing = np.pi - 0.01
        measured = wrap_angle(model_bearing + eps + (2 * np.pi if flip else 0.0))
        innov = wrap_angle(measured - model_bearing)
        assert abs(innov) < np.pi / 2


class TestLinearModel:
    def test_inverse_round_trip(self):
        model = LinearModel(np.array([[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]]), np.array([[2.0, 0.3], [0.1, 1.5]]))
        pose = np.array([0.5, -1.0, 0.2])
        lm = np.array([3.0, 4.0])
        z = model.predict(pose, lm)
        np.testing.assert_allclose(model.inverse(pose, z), lm, atol=1e-12)

    def test_jacobians_constant(self):
        h = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 1.0]])
        model = LinearModel(h, np.eye(2))
        np.testing.assert_allclose(model.jacobian_pose(np.zeros(3), np.zeros(2)), h)


class TestPose:
    def test_from_array_wraps(self):
        p = Pose.from_array([1.0, 2.0, 3 * np.pi])
        assert p.theta == pytest.approx(np.pi)
        np.testing.assert_allclose(p.as_array(), [1.0, 2.0, np.pi])

    def test_vehicle_params_validation(self):
        with pytest.raises(ValueError):
            VehicleParams(wheelbase=0.0)
        with pytest.raises(ValueError):
            VehicleParams(dt=0.0)
        with pytest.raises(ValueError):
            VehicleParams(track=-1.0)
