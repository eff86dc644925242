"""Rao-Blackwellized particle filter: predict, associate, propose, sample,
update landmarks, weight, resample, extract estimate."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .gaussian import Gaussian, sample as gaussian_sample, substream
from .map_store import (
    EMPTY_MAP,
    GATE_MATCH,
    GATE_NEW,
    LandmarkMap,
    associate,
    ekf_update,
    init_landmark,
    _innovation_covs,
)
from .models import RANGE_BEARING, ControlInput, Pose, VehicleParams, wrap_angle
from .proposal import (
    AssociatedBatch,
    ProposalStrategy,
    SolverDivergenceError,
    predict_prior,
    propose,
)

LOG_TWO_PI = float(np.log(2.0 * np.pi))

ESTIMATE_RULES = ("max_weight", "weighted_mean")
WEIGHT_FORMS = ("product", "paper_sum")


@dataclass(frozen=True)
class FilterConfig:
    """Particle filter configuration; noise defaults follow the benchmark
    setup (velocity 2 m/s, steering 6 deg, range 1 m, bearing 3 deg)."""

    n_particles: int = 10
    proposal: ProposalStrategy = field(default_factory=ProposalStrategy)
    sigma_v: float = 2.0
    sigma_g: float = float(np.radians(6.0))
    sigma_r: float = 1.0
    sigma_b: float = float(np.radians(3.0))
    gate_match: float = GATE_MATCH
    gate_new: float = GATE_NEW
    resample_threshold: float = 0.5
    estimate_rule: str = "max_weight"
    weight_form: str = "product"
    pruning_slack: float = 2.0
    keep_trajectories: bool = False

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        for name in ("sigma_v", "sigma_g", "sigma_r", "sigma_b"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.resample_threshold <= 1.0:
            raise ValueError("resample_threshold must be in (0, 1]")
        if self.estimate_rule not in ESTIMATE_RULES:
            raise ValueError(f"unknown estimate rule {self.estimate_rule!r}")
        if self.weight_form not in WEIGHT_FORMS:
            raise ValueError(f"unknown weight form {self.weight_form!r}")

    def control_noise(self) -> np.ndarray:
        return np.diag([self.sigma_v**2, self.sigma_g**2])

    def measurement_noise(self) -> np.ndarray:
        return np.diag([self.sigma_r**2, self.sigma_b**2])


@dataclass
class Particle:
    """One filter hypothesis: sampled pose, its proposal Gaussian, a
    copy-on-write landmark map, and an accumulated log weight."""

    pose: np.ndarray
    gaussian: Gaussian
    lm_map: LandmarkMap
    log_weight: float
    rng: np.random.Generator
    lineage: int
    trajectory: tuple | None = None


@dataclass(frozen=True)
class StepResult:
    estimated_pose: Pose
    ess: float
    resampled: bool
    duration_s: float
    n_matched: int
    n_new: int
    n_discarded: int
    divergences: int = 0


def importance_log_weight(
    particle: Particle,
    associations,
    z_batch,
    r,
    weight_form: str = "product",
    model=RANGE_BEARING,
) -> float:
    """Log importance weight increment from the matched measurements.

    Each match contributes a Gaussian factor with the innovation evaluated at
    the sampled pose and covariance from :func:`innovation_cov` (proposal pose
    covariance plus landmark covariance plus sensor noise).  ``product``
    accumulates factors in the log domain; ``paper_sum`` instead sums the
    densities before taking the log.
    """
    if not associations.matched:
        return 0.0
    z_batch = np.asarray(z_batch, dtype=float)
    means, covs, zs = [], [], []
    for lm_id, k in associations.matched:
        lm = particle.lm_map.get(lm_id)
        means.append(lm.mean)
        covs.append(lm.cov)
        zs.append(z_batch[k])
    means, covs, zs = np.stack(means), np.stack(covs), np.stack(zs)

    l_all = _innovation_covs(
        particle.gaussian.cov, particle.pose, means, covs, r, model
    )
    innov = model.residual(zs, model.predict(particle.pose, means))
    terms = np.empty(len(zs))
    for i in range(len(zs)):
        chol = np.linalg.cholesky(l_all[i])
        y = np.linalg.solve(chol, innov[i])
        terms[i] = -0.5 * (
            2.0 * LOG_TWO_PI + 2.0 * np.sum(np.log(np.diag(chol))) + float(y @ y)
        )
    if weight_form == "product":
        return float(np.sum(terms))
    hi = float(np.max(terms))
    return hi + float(np.log(np.sum(np.exp(terms - hi))))


def systematic_resample(weights, u: float, n_out: int | None = None) -> np.ndarray:
    """Low-variance resampling: offspring indices from one uniform draw.

    Offspring counts never deviate from ``n_out * w_i`` by more than one.
    """
    weights = np.asarray(weights, dtype=float)
    if n_out is None:
        n_out = weights.size
    positions = (np.arange(n_out) + float(u)) / n_out
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right").clip(0, weights.size - 1)


def normalized_weights(log_weights) -> np.ndarray:
    """Exponentiate and normalize log weights stably (sums to 1 exactly)."""
    log_weights = np.asarray(log_weights, dtype=float)
    shifted = np.exp(log_weights - np.max(log_weights))
    return shifted / np.sum(shifted)


def effective_sample_size(weights) -> float:
    weights = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(weights**2))


def extract_estimate(poses, log_weights, rule: str = "max_weight") -> np.ndarray:
    """Point estimate from the particle cloud.

    ``max_weight`` returns the pose of the highest-weight particle (ties go
    to the lowest index); ``weighted_mean`` averages positions linearly and
    headings circularly.
    """
    poses = np.asarray(poses, dtype=float)
    log_weights = np.asarray(log_weights, dtype=float)
    if poses.shape[0] == 0:
        raise ValueError("cannot extract an estimate from an empty particle set")
    if rule == "max_weight":
        return poses[int(np.argmax(log_weights))].copy()
    w = normalized_weights(log_weights)
    est = np.empty(3)
    est[:2] = w @ poses[:, :2]
    est[2] = np.arctan2(w @ np.sin(poses[:, 2]), w @ np.cos(poses[:, 2]))
    return est


class RBPFilter:
    """Particle filter over vehicle pose with per-particle landmark maps.

    Per-particle work is a pure function of the particle's own state and RNG
    substream, so results are identical for any ``workers`` count.
    """

    def __init__(
        self,
        cfg: FilterConfig,
        vehicle: VehicleParams | None = None,
        seed: int = 0,
        initial_pose=(0.0, 0.0, 0.0),
        model=RANGE_BEARING,
        workers: int = 1,
    ):
        self.cfg = cfg
        self.vehicle = vehicle if vehicle is not None else VehicleParams()
        self.seed = seed
        self.model = model
        self.workers = max(1, int(workers))
        self._pool = ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None
        self._lineage_counter = 0
        self.divergence_count = 0
        self._resample_rng = substream(seed, 0)

        pose0 = np.asarray(initial_pose, dtype=float)
        g0 = Gaussian(pose0, 1e-9 * np.eye(3))
        self.particles = [
            Particle(
                pose=pose0.copy(),
                gaussian=g0,
                lm_map=EMPTY_MAP,
                log_weight=0.0,
                rng=self._next_substream(),
                lineage=self._lineage_counter,
                trajectory=() if cfg.keep_trajectories else None,
            )
            for _ in range(cfg.n_particles)
        ]

    def _next_substream(self) -> np.random.Generator:
        self._lineage_counter += 1
        return substream(self.seed, self._lineage_counter)

    def _advance(self, particle: Particle, control, z_batch, params):
        cfg = self.cfg
        r = cfg.measurement_noise()
        prior = predict_prior(particle.pose, control, cfg.control_noise(), params)

        if z_batch is None or len(z_batch) == 0:
            assoc = None
            batch = AssociatedBatch.empty()
        else:
            assoc = associate(
                particle.lm_map,
                prior,
                prior.mean,
                z_batch,
                r,
                gates=(cfg.gate_match, cfg.gate_new),
                pruning_slack=cfg.pruning_slack,
                model=self.model,
            )
            if assoc.matched:
                ests = [particle.lm_map.get(j) for j, _ in assoc.matched]
                batch = AssociatedBatch(
                    z=np.stack([z_batch[k] for _, k in assoc.matched]),
                    means=np.stack([e.mean for e in ests]),
                    covs=np.stack([e.cov for e in ests]),
                )
            else:
                batch = AssociatedBatch.empty()

        diverged = 0
        try:
            proposal = propose(prior, batch, r, cfg.proposal, self.model)
        except SolverDivergenceError:
            proposal = prior
            diverged = 1

        pose = gaussian_sample(proposal, particle.rng)
        pose[2] = wrap_angle(pose[2])

        lm_map = particle.lm_map
        if assoc is not None:
            for lm_id, k in assoc.matched:
                lm_map = lm_map.set(
                    ekf_update(lm_map.get(lm_id), pose, z_batch[k], r, self.model)
                )
            next_id = lm_map.max_id() + 1
            for k in assoc.new_landmarks:
                lm_map = lm_map.set(
                    init_landmark(pose, z_batch[k], r, lm_id=next_id, model=self.model)
                )
                next_id += 1

        new_particle = Particle(
            pose=pose,
            gaussian=proposal,
            lm_map=lm_map,
            log_weight=particle.log_weight,
            rng=particle.rng,
            lineage=particle.lineage,
            trajectory=(
                None if particle.trajectory is None else (pose, particle.trajectory)
            ),
        )
        if assoc is not None and assoc.matched:
            new_particle.log_weight += importance_log_weight(
                new_particle, assoc, z_batch, r, cfg.weight_form, self.model
            )
        counts = (
            (len(assoc.matched), len(assoc.new_landmarks), len(assoc.discarded))
            if assoc is not None
            else (0, 0, 0)
        )
        return new_particle, counts, diverged

    def step(self, control: ControlInput, z_batch=None, dt: float | None = None) -> StepResult:
        """Advance the filter one step; ``z_batch`` is a ``(K, 2)`` array of
        range-bearing detections (or ``None``)."""
        t0 = time.perf_counter()
        params = self.vehicle if dt is None else replace(self.vehicle, dt=float(dt))
        if z_batch is not None:
            z_batch = np.asarray(z_batch, dtype=float)

        if self._pool is not None:
            outcome = list(
                self._pool.map(lambda p: self._advance(p, control, z_batch, params), self.particles)
            )
        else:
            outcome = [self._advance(p, control, z_batch, params) for p in self.particles]

        self.particles = [o[0] for o in outcome]
        matched = sum(o[1][0] for o in outcome)
        new = sum(o[1][1] for o in outcome)
        discarded = sum(o[1][2] for o in outcome)
        diverged = sum(o[2] for o in outcome)
        self.divergence_count += diverged

        log_weights = np.array([p.log_weight for p in self.particles])
        weights = normalized_weights(log_weights)
        ess = effective_sample_size(weights)
        estimate = extract_estimate(
            np.stack([p.pose for p in self.particles]), log_weights, self.cfg.estimate_rule
        )

        resampled = False
        if ess < self.cfg.resample_threshold * self.cfg.n_particles:
            self._resample(weights)
            resampled = True

        return StepResult(
            estimated_pose=Pose.from_array(estimate),
            ess=ess,
            resampled=resampled,
            duration_s=time.perf_counter() - t0,
            n_matched=matched,
            n_new=new,
            n_discarded=discarded,
            divergences=diverged,
        )

    def _resample(self, weights) -> None:
        u = float(self._resample_rng.random())
        indices = systematic_resample(weights, u, self.cfg.n_particles)
        survivors = []
        for idx in indices:
            src = self.particles[int(idx)]
            survivors.append(
                Particle(
                    pose=src.pose.copy(),
                    gaussian=src.gaussian,
                    lm_map=src.lm_map,
                    log_weight=0.0,
                    rng=self._next_substream(),
                    lineage=self._lineage_counter,
                    trajectory=src.trajectory,
                )
            )
        self.particles = survivors

    def best_particle(self) -> Particle:
        log_weights = np.array([p.log_weight for p in self.particles])
        return self.particles[int(np.argmax(log_weights))]
