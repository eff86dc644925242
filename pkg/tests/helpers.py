"""Shared test fixtures and independent oracle implementations.

Oracles here are deliberately written as plain, loop-based textbook code so
they stay independent of the library's vectorized paths.
"""

import numpy as np

from ngslam.gaussian import Gaussian
from ngslam.models import LinearModel
from ngslam.proposal import AssociatedBatch


def random_spd(rng, n, scale=1.0):
    a = rng.normal(size=(n, n))
    return scale * (a @ a.T + n * np.eye(n))


def affine_fixture(seed=0, n_meas=1, noise=0.3):
    """Prior, affine model, batch, and noise for closed-form Kalman checks."""
    rng = np.random.default_rng(seed)
    h_pose = rng.normal(size=(2, 3))
    h_lm = np.eye(2)
    model = LinearModel(h_pose, h_lm, offset=rng.normal(size=2))
    prior = Gaussian(rng.normal(size=3), random_spd(rng, 3, scale=0.1))
    lms = rng.normal(scale=2.0, size=(n_meas, 2))
    z = np.stack([model.predict(prior.mean, lm) for lm in lms])
    z += noise * rng.normal(size=z.shape)
    r = np.diag([0.5, 0.1])
    batch = AssociatedBatch(z, lms, np.tile(1e-9 * np.eye(2), (n_meas, 1, 1)))
    return prior, model, batch, r


def affine_kalman_posterior(prior, model, batch, r):
    """Information-form Kalman posterior for an affine measurement model."""
    h = model.h_pose
    r_inv = np.linalg.inv(r)
    info = np.linalg.inv(prior.cov)
    acc = np.zeros(3)
    for k in range(len(batch)):
        info = info + h.T @ r_inv @ h
        acc = acc + h.T @ r_inv @ (batch.z[k] - model.predict(prior.mean, batch.means[k]))
    cov = np.linalg.inv(info)
    mean = prior.mean + cov @ acc
    return mean, cov


def textbook_ukf_update(prior, model, batch, r, kappa=None):
    """Plain-loop UKF measurement update with a stacked batch vector."""
    n = prior.dim
    if kappa is None:
        kappa = 3.0 - n
    scale = n + kappa
    chol = np.linalg.cholesky(prior.cov)
    pts = [prior.mean.copy()]
    for i in range(n):
        pts.append(prior.mean + np.sqrt(scale) * chol[:, i])
    for i in range(n):
        pts.append(prior.mean - np.sqrt(scale) * chol[:, i])
    w = [kappa / scale] + [1.0 / (2.0 * scale)] * (2 * n)

    c = len(batch)
    zs = []
    for p in pts:
        stacked = np.concatenate([model.predict(p, batch.means[k]) for k in range(c)])
        zs.append(stacked)
    zs = np.array(zs)
    z_hat = sum(wi * zi for wi, zi in zip(w, zs))
    s = np.zeros((2 * c, 2 * c))
    cross = np.zeros((n, 2 * c))
    for wi, p, zi in zip(w, pts, zs):
        dz = zi - z_hat
        s += wi * np.outer(dz, dz)
        cross += wi * np.outer(p - prior.mean, dz)
    for k in range(c):
        s[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] += r
    gain = cross @ np.linalg.inv(s)
    innov = np.concatenate([batch.z[k] for k in range(c)]) - z_hat
    mean = prior.mean + gain @ innov
    cov = prior.cov - gain @ s @ gain.T
    return mean, 0.5 * (cov + cov.T)
