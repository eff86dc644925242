"""Joint-state EKF-SLAM baseline: one Gaussian over [pose; all landmarks].

Kept deliberately standard; it exists as the accuracy/runtime comparison
point whose update cost grows quadratically with the number of landmarks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .gaussian import Gaussian, repair_spd
from .map_store import EMPTY_MAP, LandmarkEstimate, associate
from .models import (
    RANGE_BEARING,
    ControlInput,
    Pose,
    VehicleParams,
    motion_jacobians,
    motion_step,
    wrap_angle,
)
from .proposal import DEFAULT_Q_ADD
from .rbpf import FilterConfig, StepResult


@dataclass(frozen=True)
class JointState:
    """Mean/covariance over the stacked [pose; landmarks] vector plus the
    id registry mapping landmark ids to their 2x2 blocks."""

    mean: np.ndarray
    cov: np.ndarray
    ids: tuple[int, ...] = ()

    @property
    def n_landmarks(self) -> int:
        return len(self.ids)

    def offset(self, lm_id: int) -> int:
        return 3 + 2 * self.ids.index(lm_id)

    def id_at(self, offset: int) -> int:
        return self.ids[(offset - 3) // 2]

    def landmark(self, lm_id: int) -> LandmarkEstimate:
        j = self.offset(lm_id)
        return LandmarkEstimate(
            id=lm_id, mean=self.mean[j : j + 2].copy(), cov=self.cov[j : j + 2, j : j + 2].copy()
        )

    def pose_gaussian(self) -> Gaussian:
        return Gaussian(self.mean[:3], repair_spd(self.cov[:3, :3]))


def initial_state(pose=(0.0, 0.0, 0.0), pose_cov=None) -> JointState:
    cov = 1e-9 * np.eye(3) if pose_cov is None else np.asarray(pose_cov, dtype=float)
    return JointState(mean=np.asarray(pose, dtype=float).copy(), cov=cov.copy())


def ekf_predict(
    state: JointState,
    control: ControlInput,
    control_noise,
    params: VehicleParams,
    q_add=None,
) -> JointState:
    """Propagate the pose block through the motion model; landmark means and
    the landmark-landmark covariance block are untouched."""
    q_add = DEFAULT_Q_ADD if q_add is None else np.asarray(q_add, dtype=float)
    fx, fu = motion_jacobians(state.mean[:3], control, params)
    mean = state.mean.copy()
    mean[:3] = motion_step(state.mean[:3], control, params)
    cov = state.cov.copy()
    cov[:3, :3] = fx @ state.cov[:3, :3] @ fx.T + fu @ np.asarray(control_noise) @ fu.T + q_add
    if cov.shape[0] > 3:
        cov[:3, 3:] = fx @ state.cov[:3, 3:]
        cov[3:, :3] = cov[:3, 3:].T
    return JointState(mean=mean, cov=repair_spd(cov), ids=state.ids)


def ekf_update_joint(
    state: JointState, z_batch, matched, r, model=RANGE_BEARING
) -> JointState:
    """Joint Kalman update with the stacked innovation of all matched pairs."""
    if not matched:
        return state
    z_batch = np.asarray(z_batch, dtype=float)
    r = np.asarray(r, dtype=float)
    n = state.mean.size
    c = len(matched)
    pose = state.mean[:3]

    h = np.zeros((2 * c, n))
    innov = np.empty(2 * c)
    for i, (lm_id, k) in enumerate(matched):
        j = state.offset(lm_id)
        lm_mean = state.mean[j : j + 2]
        h[2 * i : 2 * i + 2, :3] = model.jacobian_pose(pose, lm_mean)
        h[2 * i : 2 * i + 2, j : j + 2] = model.jacobian_landmark(pose, lm_mean)
        innov[2 * i : 2 * i + 2] = model.residual(z_batch[k], model.predict(pose, lm_mean))

    hp = h @ state.cov
    s = hp @ h.T
    for i in range(c):
        s[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] += r
    s = repair_spd(s)
    gain = np.linalg.solve(s, hp).T

    mean = state.mean + gain @ innov
    mean[2] = wrap_angle(mean[2])
    cov = repair_spd(state.cov - gain @ hp)
    return JointState(mean=mean, cov=cov, ids=state.ids)


def augment(state: JointState, z, r, lm_id: int, model=RANGE_BEARING) -> JointState:
    """Append a new landmark block initialized from the current pose estimate,
    with cross-covariances from the initialization Jacobians."""
    z = np.asarray(z, dtype=float)
    r = np.asarray(r, dtype=float)
    pose = state.mean[:3]
    lm_mean = np.asarray(model.inverse(pose, z), dtype=float)

    g_m = model.jacobian_landmark(pose, lm_mean)
    g_x = model.jacobian_pose(pose, lm_mean)
    g_m_inv = np.linalg.inv(g_m)
    d_pose = -g_m_inv @ g_x  # landmark sensitivity to the pose estimate
    d_z = g_m_inv

    n = state.mean.size
    mean = np.concatenate([state.mean, lm_mean])
    cov = np.zeros((n + 2, n + 2))
    cov[:n, :n] = state.cov
    cross = d_pose @ state.cov[:3, :]
    cov[n:, :n] = cross
    cov[:n, n:] = cross.T
    cov[n:, n:] = d_pose @ state.cov[:3, :3] @ d_pose.T + d_z @ r @ d_z.T
    return JointState(mean=mean, cov=repair_spd(cov), ids=state.ids + (lm_id,))


class EKFSlamFilter:
    """Sequential EKF-SLAM with the same association gates as the particle
    filter (only the filter config's noise and gate fields are used)."""

    def __init__(
        self,
        cfg: FilterConfig,
        vehicle: VehicleParams | None = None,
        initial_pose=(0.0, 0.0, 0.0),
        model=RANGE_BEARING,
    ):
        self.cfg = cfg
        self.vehicle = vehicle if vehicle is not None else VehicleParams()
        self.model = model
        self.state = initial_state(initial_pose)
        self._next_id = 0

    def _map_view(self):
        view = EMPTY_MAP
        for lm_id in self.state.ids:
            view = view.set(self.state.landmark(lm_id))
        return view

    def step(self, control: ControlInput, z_batch=None, dt: float | None = None) -> StepResult:
        t0 = time.perf_counter()
        cfg = self.cfg
        params = self.vehicle if dt is None else dc_replace(self.vehicle, dt=float(dt))
        self.state = ekf_predict(self.state, control, cfg.control_noise(), params)

        matched = new = discarded = 0
        if z_batch is not None and len(z_batch) > 0:
            z_batch = np.asarray(z_batch, dtype=float)
            r = cfg.measurement_noise()
            assoc = associate(
                self._map_view(),
                self.state.pose_gaussian(),
                self.state.mean[:3],
                z_batch,
                r,
                gates=(cfg.gate_match, cfg.gate_new),
                pruning_slack=cfg.pruning_slack,
                model=self.model,
            )
            self.state = ekf_update_joint(self.state, z_batch, assoc.matched, r, self.model)
            for k in assoc.new_landmarks:
                self.state = augment(self.state, z_batch[k], r, self._next_id, self.model)
                self._next_id += 1
            matched, new, discarded = (
                len(assoc.matched),
                len(assoc.new_landmarks),
                len(assoc.discarded),
            )

        return StepResult(
            estimated_pose=Pose.from_array(self.state.mean[:3]),
            ess=1.0,
            resampled=False,
            duration_s=time.perf_counter() - t0,
            n_matched=matched,
            n_new=new,
            n_discarded=discarded,
        )
