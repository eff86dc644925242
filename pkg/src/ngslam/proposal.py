"""Pose proposal solvers for the particle filter.

Three interchangeable strategies compute each particle's pose sampling
distribution from the motion prior and the current associated measurements:

- ``prior``: the motion prior itself (measurements enter only via weights)
- ``unscented``: one-shot sigma-point measurement update of the prior
- ``natural_gradient``: iterative natural-gradient descent on the Gaussian
  parameters of the variational posterior approximation
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussian import (
    Gaussian,
    NotPositiveDefiniteError,
    kl_mvn,
    repair_spd,
    sigma_points,
    unscented_estimate,
)
from .models import RANGE_BEARING, ControlInput, VehicleParams, motion_step, wrap_angle

VARIANTS = ("prior", "unscented", "natural_gradient")
EXPECTATION_MODES = ("sigma_point", "mean_only")

#: floor covariance keeping the motion prior full rank when control noise
#: projects onto fewer than three pose directions
DEFAULT_Q_ADD = np.diag([1e-4, 1e-4, 1e-6])


class SolverDivergenceError(RuntimeError):
    """Natural-gradient iteration produced a non-SPD or exploding iterate."""


@dataclass(frozen=True)
class ProposalStrategy:
    """Which solver to run and its iteration controls."""

    variant: str = "natural_gradient"
    max_iters: int = 10
    kl_threshold: float = 1e-6
    expectation_mode: str = "sigma_point"
    kl_blowup: float = 1e4
    kappa: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown proposal variant {self.variant!r}")
        if self.expectation_mode not in EXPECTATION_MODES:
            raise ValueError(f"unknown expectation mode {self.expectation_mode!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.kl_threshold <= 0.0:
            raise ValueError("kl_threshold must be positive")


@dataclass(frozen=True)
class AssociatedBatch:
    """Measurements matched to landmarks for the current step.

    z: (C, 2) measurements; means: (C, 2) landmark means; covs: (C, 2, 2)
    landmark covariances.
    """

    z: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __len__(self) -> int:
        return self.z.shape[0]

    @classmethod
    def empty(cls) -> "AssociatedBatch":
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2, 2)))


def predict_prior(
    prev_pose,
    control: ControlInput,
    control_noise,
    params: VehicleParams,
    q_add=None,
    kappa: float | None = None,
) -> Gaussian:
    """Motion prior for the new pose given the previous sampled pose.

    The previous pose is treated as known (zero covariance), so the sigma
    points of the augmented [pose; control] Gaussian vary only in the control
    subspace.  A small additive regularizer keeps the result full rank.
    """
    prev_pose = np.asarray(prev_pose, dtype=float)
    control_noise = np.asarray(control_noise, dtype=float)
    q_add = DEFAULT_Q_ADD if q_add is None else np.asarray(q_add, dtype=float)

    aug_mean = np.concatenate([prev_pose, control.as_array()])
    aug_cov = np.zeros((5, 5))
    aug_cov[3:, 3:] = control_noise
    pts = sigma_points(aug_mean, aug_cov, kappa)
    propagated = motion_step(pts.points[:, :3], pts.points[:, 3:], params, wrap=False)
    mean, cov = unscented_estimate(propagated, pts.w_mean, pts.w_cov, q_add)
    mean[2] = wrap_angle(mean[2])
    return Gaussian(mean, repair_spd(cov))


def _r_inverse(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return np.linalg.inv(0.5 * (r + r.T))


def nll_gradient(x, batch: AssociatedBatch, r, model=RANGE_BEARING) -> np.ndarray:
    """Gradient of the measurement negative log-likelihood at a single pose."""
    grads, _ = model.batch_terms(np.asarray(x, dtype=float)[None, :], batch.z, batch.means, _r_inverse(r))
    return grads[0]


def nll_hessian_gn(x, batch: AssociatedBatch, r, model=RANGE_BEARING) -> np.ndarray:
    """Gauss-Newton (PSD) approximation of the negative log-likelihood Hessian."""
    _, hessians = model.batch_terms(
        np.asarray(x, dtype=float)[None, :], batch.z, batch.means, _r_inverse(r)
    )
    return hessians[0]


def nll_value(x, batch: AssociatedBatch, r, model=RANGE_BEARING) -> float:
    """Measurement negative log-likelihood (up to its constant term)."""
    x = np.asarray(x, dtype=float)
    r_inv = _r_inverse(r)
    total = 0.0
    for k in range(len(batch)):
        innov = model.residual(batch.z[k], model.predict(x, batch.means[k]))
        total += 0.5 * float(innov @ r_inv @ innov)
    return total


def objective_value(
    q: Gaussian, prior: Gaussian, batch: AssociatedBatch, r, model=RANGE_BEARING,
    kappa: float | None = None,
) -> float:
    """Variational objective: KL(q || prior) plus the expected measurement
    negative log-likelihood under q, the expectation taken by sigma-point
    quadrature."""
    kl = kl_mvn(q.mean, q.cov, prior.mean, prior.cov, chol_q=q.chol, chol_p=prior.chol)
    pts = sigma_points(q.mean, q.cov, kappa)
    expected = sum(
        w * nll_value(p, batch, r, model) for w, p in zip(pts.w_mean, pts.points)
    )
    return kl + float(expected)


def nano_solve(
    prior: Gaussian,
    batch: AssociatedBatch,
    r,
    cfg: ProposalStrategy,
    model=RANGE_BEARING,
    return_trace: bool = False,
):
    """Natural-gradient Gaussian approximation of the pose posterior.

    Starting from the prior, each iteration rebuilds the information matrix
    from the prior information plus the expected Gauss-Newton curvature, then
    moves the mean along the preconditioned gradient of the variational
    objective.  Iteration stops when the KL divergence between successive
    iterates falls below ``cfg.kl_threshold``.
    """
    if len(batch) == 0:
        raise ValueError("nano_solve requires a nonempty associated batch")
    r_inv = _r_inverse(r)
    prior_info = np.linalg.inv(prior.cov)
    x_prior = prior.mean

    x_cur, cov_cur = x_prior.copy(), prior.cov.copy()
    chol_cur = prior.chol
    trace = [(x_cur.copy(), cov_cur.copy())]
    for _ in range(cfg.max_iters):
        if cfg.expectation_mode == "sigma_point":
            pts = sigma_points(x_cur, cov_cur, cfg.kappa)
            grads, hessians = model.batch_terms(pts.points, batch.z, batch.means, r_inv)
            exp_grad = pts.w_mean @ grads
            exp_hess = np.einsum("p,pij->ij", pts.w_mean, hessians)
        else:
            grads, hessians = model.batch_terms(x_cur[None, :], batch.z, batch.means, r_inv)
            exp_grad, exp_hess = grads[0], hessians[0]

        info_next = prior_info + exp_hess
        try:
            cov_next = repair_spd(np.linalg.inv(info_next))
        except (NotPositiveDefiniteError, np.linalg.LinAlgError) as err:
            raise SolverDivergenceError(f"iterate covariance not SPD: {err}") from err
        x_next = x_cur - cov_next @ exp_grad - cov_next @ (prior_info @ (x_cur - x_prior))

        chol_next = np.linalg.cholesky(cov_next)
        step_kl = kl_mvn(x_cur, cov_cur, x_next, cov_next, chol_q=chol_cur, chol_p=chol_next)
        x_cur, cov_cur, chol_cur = x_next, cov_next, chol_next
        trace.append((x_cur.copy(), cov_cur.copy()))
        if step_kl > cfg.kl_blowup:
            raise SolverDivergenceError(f"KL between iterates blew up ({step_kl:.3e})")
        if step_kl < cfg.kl_threshold:
            break

    mean = x_cur.copy()
    mean[2] = wrap_angle(mean[2])
    result = Gaussian(mean, cov_cur)
    if return_trace:
        return result, trace
    return result


def unscented_solve(
    prior: Gaussian, batch: AssociatedBatch, r, model=RANGE_BEARING,
    kappa: float | None = None,
) -> Gaussian:
    """One-shot sigma-point measurement update of the prior (UKF style).

    The batch is processed as one stacked measurement vector with
    block-diagonal noise.  Angular components are averaged in a chart
    centered on the prediction at the prior mean.
    """
    if len(batch) == 0:
        raise ValueError("unscented_solve requires a nonempty associated batch")
    c = len(batch)
    pts = sigma_points(prior.mean, prior.cov, kappa)
    pred = np.stack(
        [
            np.asarray(model.predict(p[None, :], batch.means), dtype=float).reshape(c, 2)
            for p in pts.points
        ]
    )  # (2n+1, C, 2)

    ref = pred[0]
    for idx in model.angular:
        pred[..., idx] = ref[None, :, idx] + wrap_angle(pred[..., idx] - ref[None, :, idx])
    flat = pred.reshape(len(pts.points), 2 * c)

    z_hat = pts.w_mean @ flat
    resid = flat - z_hat
    s = (resid.T * pts.w_cov) @ resid
    r = np.asarray(r, dtype=float)
    for k in range(c):
        s[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] += r
    s = repair_spd(s)

    dev_x = pts.points - prior.mean
    cross = (dev_x.T * pts.w_cov) @ resid
    gain = cross @ np.linalg.inv(s)

    innov = (batch.z - z_hat.reshape(c, 2)).copy()
    for idx in model.angular:
        innov[:, idx] = wrap_angle(innov[:, idx])
    mean = prior.mean + gain @ innov.reshape(2 * c)
    cov = repair_spd(prior.cov - gain @ s @ gain.T)
    mean = mean.copy()
    mean[2] = wrap_angle(mean[2])
    return Gaussian(mean, cov)


def prior_solve(prior: Gaussian) -> Gaussian:
    """Identity strategy: sample straight from the motion prior."""
    return prior


def propose(
    prior: Gaussian, batch: AssociatedBatch, r, cfg: ProposalStrategy, model=RANGE_BEARING
) -> Gaussian:
    """Dispatch to the configured solver; empty batches fall back to the prior."""
    if len(batch) == 0 or cfg.variant == "prior":
        return prior_solve(prior)
    if cfg.variant == "unscented":
        return unscented_solve(prior, batch, r, model, cfg.kappa)
    return nano_solve(prior, batch, r, cfg, model)
