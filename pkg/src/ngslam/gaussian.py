"""Multivariate Gaussian algebra: densities, sampling, KL, unscented transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_TWO_PI = float(np.log(2.0 * np.pi))


class NotPositiveDefiniteError(ValueError):
    """Raised when a covariance fails Cholesky factorization after repair."""


def _cholesky(cov: np.ndarray) -> np.ndarray | None:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None


def repair_spd(cov: np.ndarray, jitter_rel: float = 1e-9) -> np.ndarray:
    """Symmetrize a covariance and, if needed, add one round of trace-scaled
    jitter so Cholesky succeeds.  Raises if the matrix is still indefinite.
    """
    cov = np.asarray(cov, dtype=float)
    sym = 0.5 * (cov + cov.T)
    if _cholesky(sym) is not None:
        return sym
    n = sym.shape[0]
    jitter = jitter_rel * max(np.trace(sym), 0.0) / n
    repaired = sym + jitter * np.eye(n)
    if _cholesky(repaired) is not None:
        return repaired
    raise NotPositiveDefiniteError("covariance not positive definite after jitter repair")


class Gaussian:
    """Mean/covariance pair, validated SPD at construction.

    The lower Cholesky factor is computed eagerly and reused by sampling,
    densities, and KL divergence.
    """

    __slots__ = ("mean", "cov", "chol")

    def __init__(self, mean, cov):
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean size {mean.size}")
        asym = np.max(np.abs(cov - cov.T)) if cov.size else 0.0
        if asym > 1e-9 * (1.0 + np.max(np.abs(cov))):
            raise ValueError(f"covariance is not symmetric (max asymmetry {asym:.3e})")
        cov = 0.5 * (cov + cov.T)
        chol = _cholesky(cov)
        if chol is None:
            raise NotPositiveDefiniteError("covariance is not positive definite")
        self.mean = mean
        self.cov = cov
        self.chol = chol

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def __repr__(self) -> str:
        return f"Gaussian(mean={self.mean!r}, cov={self.cov!r})"


@dataclass(frozen=True)
class SigmaPointSet:
    """Symmetric 2n+1 sigma points with their mean and covariance weights."""

    points: np.ndarray
    w_mean: np.ndarray
    w_cov: np.ndarray


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Matrix square root tolerating exact zero eigenvalues (PSD inputs)."""
    chol = _cholesky(cov)
    if chol is not None:
        return chol
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    floor = -1e-10 * max(1.0, np.max(np.abs(vals)))
    if np.min(vals) < floor:
        raise NotPositiveDefiniteError("matrix has significantly negative eigenvalues")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sigma_points(mean, cov, kappa: float | None = None) -> SigmaPointSet:
    """Classic symmetric sigma-point set with scaling ``n + kappa = 3`` by default.

    Accepts positive *semi*-definite covariances (zero-variance directions
    collapse onto the mean), which the augmented prior propagation relies on.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    n = mean.size
    if kappa is None:
        kappa = 3.0 - n
    scale = n + kappa
    if scale <= 0.0:
        raise ValueError("n + kappa must be positive")
    spread = np.sqrt(scale) * psd_sqrt(cov)
    points = np.empty((2 * n + 1, n), dtype=float)
    points[0] = mean
    points[1 : n + 1] = mean + spread.T
    points[n + 1 :] = mean - spread.T
    w = np.full(2 * n + 1, 1.0 / (2.0 * scale))
    w[0] = kappa / scale
    return SigmaPointSet(points=points, w_mean=w, w_cov=w.copy())


def unscented_estimate(
    values: np.ndarray, w_mean: np.ndarray, w_cov: np.ndarray, additive_cov=None
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and scatter of transformed sigma points (arrays in, arrays out)."""
    mean = w_mean @ values
    resid = values - mean
    cov = (resid.T * w_cov) @ resid
    if additive_cov is not None:
        cov = cov + additive_cov
    return mean, cov


def ut_propagate(g: Gaussian, f, additive_cov=None, kappa: float | None = None) -> Gaussian:
    """Unscented propagation of ``g`` through ``f`` plus optional additive noise."""
    pts = sigma_points(g.mean, g.cov, kappa)
    values = np.array([np.asarray(f(p), dtype=float) for p in pts.points])
    mean, cov = unscented_estimate(values, pts.w_mean, pts.w_cov, additive_cov)
    return Gaussian(mean, repair_spd(cov))


def kl_divergence(q: Gaussian, p: Gaussian) -> float:
    """Closed-form ``KL(q || p)`` for Gaussians of equal dimension."""
    if q.dim != p.dim:
        raise ValueError("KL divergence requires equal dimensions")
    return kl_mvn(q.mean, q.cov, p.mean, p.cov, chol_q=q.chol, chol_p=p.chol)


def kl_mvn(mean_q, cov_q, mean_p, cov_p, chol_q=None, chol_p=None) -> float:
    """Array-level Gaussian KL divergence (used by solver inner loops)."""
    if chol_q is None:
        chol_q = _cholesky(cov_q)
    if chol_p is None:
        chol_p = _cholesky(cov_p)
    if chol_q is None or chol_p is None:
        raise NotPositiveDefiniteError("KL divergence requires SPD covariances")
    n = np.asarray(mean_q).size
    y = np.linalg.solve(chol_p, np.asarray(mean_p) - np.asarray(mean_q))
    quad = float(y @ y)
    a = np.linalg.solve(chol_p, chol_q)
    trace = float(np.sum(a * a))
    log_det_q = 2.0 * float(np.sum(np.log(np.diag(chol_q))))
    log_det_p = 2.0 * float(np.sum(np.log(np.diag(chol_p))))
    return 0.5 * (quad + trace - n - (log_det_q - log_det_p))


def log_density(g: Gaussian, x) -> float:
    """Exact Gaussian log-pdf evaluated via the cached Cholesky factor."""
    y = np.linalg.solve(g.chol, np.asarray(x, dtype=float) - g.mean)
    return -0.5 * (g.dim * LOG_TWO_PI + g.log_det() + float(y @ y))


def sample(g: Gaussian, rng: np.random.Generator) -> np.ndarray:
    """Draw one sample; deterministic given the generator state."""
    return g.mean + g.chol @ rng.standard_normal(g.dim)


def substream(root_seed: int, stream_id: int, domain: int = 0) -> np.random.Generator:
    """Independent, reproducible random stream keyed by (root seed, domain,
    stream id).

    Streams are counter-based (Philox), so results do not depend on the order
    in which parallel consumers draw from their own streams.  ``domain``
    separates unrelated consumers (filter particles vs. the simulator) that
    share a root seed.
    """
    seq = np.random.SeedSequence(entropy=root_seed, spawn_key=(domain, stream_id))
    return np.random.Generator(np.random.Philox(seq))
