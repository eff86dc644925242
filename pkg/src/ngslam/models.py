"""Vehicle motion and range-bearing sensor models with analytic Jacobians.

Array conventions used throughout the package:

- pose: ``[px, py, theta]`` with ``theta`` in radians, wrapped to ``(-pi, pi]``
- landmark: ``[mx, my]`` in meters
- measurement: ``[range, bearing]`` with ``range >= 0`` and wrapped bearing

All model functions broadcast over leading dimensions, so a ``(P, 3)`` block
of poses against a ``(P, 2)`` block of landmarks yields ``(P, 2)`` outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(theta):
    """Wrap an angle (or array of angles) to the interval ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), TWO_PI)


@dataclass(frozen=True, slots=True)
class Pose:
    """Vehicle pose: planar position plus heading."""

    px: float
    py: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.theta], dtype=float)

    @classmethod
    def from_array(cls, x) -> "Pose":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), float(wrap_angle(x[2])))


@dataclass(frozen=True, slots=True)
class ControlInput:
    """Axle velocity (m/s) and steering angle (rad), |alpha| < pi/2."""

    v: float
    alpha: float

    def __post_init__(self):
        if not abs(self.alpha) < np.pi / 2:
            raise ValueError(f"steering angle must satisfy |alpha| < pi/2, got {self.alpha}")

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.alpha], dtype=float)


@dataclass(frozen=True, slots=True)
class VehicleParams:
    """Geometry and step size of the Ackerman vehicle.

    ``sensor_offset_a`` / ``sensor_offset_b`` are the longitudinal/lateral
    offsets of the reference point from the rear axle; both default to zero
    (pure bicycle model).
    """

    wheelbase: float = 2.83
    track: float = 0.76
    sensor_offset_a: float = 0.0
    sensor_offset_b: float = 0.0
    dt: float = 0.1

    def __post_init__(self):
        if self.wheelbase <= 0.0:
            raise ValueError(f"wheelbase must be positive, got {self.wheelbase}")
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.track < 0.0:
            raise ValueError(f"track must be non-negative, got {self.track}")


def _control_arrays(control) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(control, ControlInput):
        return np.asarray(control.v, dtype=float), np.asarray(control.alpha, dtype=float)
    u = np.asarray(control, dtype=float)
    return u[..., 0], u[..., 1]


def motion_step(pose, control, params: VehicleParams, *, wrap: bool = True) -> np.ndarray:
    """Propagate a pose one step through the noise-free Ackerman model.

    ``control`` may be a :class:`ControlInput` or an array ``[..., (v, alpha)]``.
    With ``wrap=False`` the heading is left unwrapped, which keeps sigma-point
    clouds continuous across the +/-pi seam.
    """
    pose = np.asarray(pose, dtype=float)
    v, alpha = _control_arrays(control)
    if np.any(np.abs(alpha) >= np.pi / 2):
        raise ValueError("steering angle must satisfy |alpha| < pi/2")
    theta = pose[..., 2]
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    rate = v / params.wheelbase * np.tan(alpha)
    a, b = params.sensor_offset_a, params.sensor_offset_b
    out = np.empty(np.broadcast(pose[..., 0], v).shape + (3,), dtype=float)
    out[..., 0] = pose[..., 0] + params.dt * (v * cos_t - rate * (a * sin_t + b * cos_t))
    out[..., 1] = pose[..., 1] + params.dt * (v * sin_t + rate * (a * cos_t + b * sin_t))
    heading = theta + params.dt * rate
    out[..., 2] = wrap_angle(heading) if wrap else heading
    return out


def motion_jacobians(pose, control, params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of :func:`motion_step` w.r.t. pose (3x3) and control (3x2)."""
    pose = np.asarray(pose, dtype=float)
    v, alpha = _control_arrays(control)
    theta = pose[2]
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    tan_a = np.tan(alpha)
    sec2_a = 1.0 + tan_a * tan_a
    a, b = params.sensor_offset_a, params.sensor_offset_b
    l, dt = params.wheelbase, params.dt

    fx = np.eye(3)
    fx[0, 2] = dt * (-v * sin_t - v / l * tan_a * (a * cos_t - b * sin_t))
    fx[1, 2] = dt * (v * cos_t + v / l * tan_a * (-a * sin_t + b * cos_t))

    fu = np.empty((3, 2))
    fu[0, 0] = dt * (cos_t - tan_a * (a * sin_t + b * cos_t) / l)
    fu[1, 0] = dt * (sin_t + tan_a * (a * cos_t + b * sin_t) / l)
    fu[2, 0] = dt * tan_a / l
    fu[0, 1] = dt * (-v / l) * sec2_a * (a * sin_t + b * cos_t)
    fu[1, 1] = dt * (v / l) * sec2_a * (a * cos_t + b * sin_t)
    fu[2, 1] = dt * (v / l) * sec2_a
    return fx, fu


def axle_velocity(encoder_velocity, alpha, params: VehicleParams):
    """Convert wheel-encoder velocity to axle-center velocity."""
    denom = 1.0 - params.track * np.tan(alpha) / (2.0 * params.wheelbase)
    if np.any(denom <= 0.0):
        raise ValueError("steering configuration outside the velocity-transform model")
    return encoder_velocity / denom


MIN_RANGE = 1e-12


def predict_measurement(pose, landmark) -> np.ndarray:
    """Expected ``[range, bearing]`` from a pose to a landmark."""
    pose = np.asarray(pose, dtype=float)
    landmark = np.asarray(landmark, dtype=float)
    dx = landmark[..., 0] - pose[..., 0]
    dy = landmark[..., 1] - pose[..., 1]
    rng = np.hypot(dx, dy)
    if np.any(rng < MIN_RANGE):
        raise ValueError("zero range: landmark coincides with the vehicle position")
    bearing = wrap_angle(np.arctan2(dy, dx) - pose[..., 2])
    return np.stack([rng, bearing], axis=-1)


def inverse_measurement(pose, z) -> np.ndarray:
    """Landmark location implied by a pose and a ``[range, bearing]`` reading."""
    pose = np.asarray(pose, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(z[..., 0] <= 0.0):
        raise ValueError("range must be positive to invert a measurement")
    heading = z[..., 1] + pose[..., 2]
    return np.stack(
        [pose[..., 0] + z[..., 0] * np.cos(heading), pose[..., 1] + z[..., 0] * np.sin(heading)],
        axis=-1,
    )


def jacobian_pose(pose, landmark) -> np.ndarray:
    """Derivative of the range-bearing measurement w.r.t. the pose (..., 2, 3)."""
    pose = np.asarray(pose, dtype=float)
    landmark = np.asarray(landmark, dtype=float)
    dx = landmark[..., 0] - pose[..., 0]
    dy = landmark[..., 1] - pose[..., 1]
    q = dx * dx + dy * dy
    rng = np.sqrt(q)
    if np.any(rng < MIN_RANGE):
        raise ValueError("zero range: measurement Jacobian undefined")
    out = np.empty(np.broadcast(dx, dy).shape + (2, 3), dtype=float)
    out[..., 0, 0] = -dx / rng
    out[..., 0, 1] = -dy / rng
    out[..., 0, 2] = 0.0
    out[..., 1, 0] = dy / q
    out[..., 1, 1] = -dx / q
    out[..., 1, 2] = -1.0
    return out


def jacobian_landmark(pose, landmark) -> np.ndarray:
    """Derivative of the range-bearing measurement w.r.t. the landmark (..., 2, 2)."""
    jp = jacobian_pose(pose, landmark)
    return -jp[..., :, :2]


class RangeBearingModel:
    """Default sensor model tying the measurement functions together.

    Solvers, association, and landmark estimation consume the model through
    this interface so a synthetic :class:`LinearModel` can be swapped in when
    a closed-form oracle is needed.
    """

    #: indices of angular measurement components (wrapped in residuals)
    angular = (1,)
    #: spatial radius pruning of association candidates is meaningful
    supports_radius_prune = True

    def predict(self, pose, landmark):
        return predict_measurement(pose, landmark)

    def jacobian_pose(self, pose, landmark):
        return jacobian_pose(pose, landmark)

    def jacobian_landmark(self, pose, landmark):
        return jacobian_landmark(pose, landmark)

    def inverse(self, pose, z):
        return inverse_measurement(pose, z)

    def residual(self, z, z_pred):
        d = np.asarray(z, dtype=float) - np.asarray(z_pred, dtype=float)
        out = np.array(d, dtype=float)
        out[..., 1] = wrap_angle(out[..., 1])
        return out

    def batch_terms(self, poses, z, landmarks, r_inv):
        """Per-pose gradient and Gauss-Newton Hessian of the measurement
        negative log-likelihood, summed over the associated batch.

        poses: (P, 3), z: (C, 2), landmarks: (C, 2) -> ((P, 3), (P, 3, 3)).
        """
        poses = np.asarray(poses, dtype=float)
        pred = predict_measurement(poses[:, None, :], landmarks[None, :, :])
        innov = z[None, :, :] - pred
        innov[..., 1] = wrap_angle(innov[..., 1])
        jac = jacobian_pose(poses[:, None, :], landmarks[None, :, :])
        grads = -np.einsum("pcij,ik,pck->pj", jac, r_inv, innov)
        hessians = np.einsum("pcij,ik,pckl->pjl", jac, r_inv, jac)
        return grads, hessians


class LinearModel:
    """Synthetic affine sensor ``z = Hx @ pose + Hm @ landmark + c``.

    Exists for verification: with an affine model the Bayes update has a
    closed Kalman form, so solver and filter outputs can be checked exactly.
    ``Hm`` must be invertible for landmark initialization.
    """

    angular = ()
    supports_radius_prune = False

    def __init__(self, h_pose, h_landmark=None, offset=None):
        self.h_pose = np.asarray(h_pose, dtype=float)
        self.h_landmark = (
            np.zeros((2, 2)) if h_landmark is None else np.asarray(h_landmark, dtype=float)
        )
        self.offset = np.zeros(2) if offset is None else np.asarray(offset, dtype=float)

    def predict(self, pose, landmark):
        pose = np.asarray(pose, dtype=float)
        landmark = np.asarray(landmark, dtype=float)
        return (
            pose @ self.h_pose.T + landmark @ self.h_landmark.T + self.offset
        )

    def jacobian_pose(self, pose, landmark):
        shape = np.broadcast(np.asarray(pose)[..., 0], np.asarray(landmark)[..., 0]).shape
        return np.broadcast_to(self.h_pose, shape + (2, 3)).copy()

    def jacobian_landmark(self, pose, landmark):
        shape = np.broadcast(np.asarray(pose)[..., 0], np.asarray(landmark)[..., 0]).shape
        return np.broadcast_to(self.h_landmark, shape + (2, 2)).copy()

    def inverse(self, pose, z):
        rhs = np.asarray(z, dtype=float) - self.predict(pose, np.zeros(2))
        return np.linalg.solve(self.h_landmark, rhs)

    def residual(self, z, z_pred):
        return np.asarray(z, dtype=float) - np.asarray(z_pred, dtype=float)

    def batch_terms(self, poses, z, landmarks, r_inv):
        poses = np.asarray(poses, dtype=float)
        pred = (
            poses[:, None, :] @ self.h_pose.T
            + landmarks[None, :, :] @ self.h_landmark.T
            + self.offset
        )
        innov = z[None, :, :] - pred
        hth = self.h_pose.T @ r_inv @ self.h_pose * len(z)
        grads = -np.einsum("ij,ik,pck->pj", self.h_pose, r_inv, innov)
        hessians = np.broadcast_to(hth, (poses.shape[0], 3, 3)).copy()
        return grads, hessians


RANGE_BEARING = RangeBearingModel()
