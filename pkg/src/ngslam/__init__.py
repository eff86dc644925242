"""Landmark-based vehicle SLAM toolkit.

Rao-Blackwellized particle filtering with three interchangeable pose
proposal solvers (motion prior, unscented update, natural-gradient Gaussian
approximation), an EKF-SLAM baseline, a synthetic simulator, event-file
ingestion, and a benchmarking CLI.
"""

from .gaussian import Gaussian, NotPositiveDefiniteError, kl_divergence, log_density, sample, ut_propagate
from .map_store import AssociationSet, LandmarkEstimate, LandmarkMap, associate, ekf_update, init_landmark, innovation_cov
from .models import ControlInput, LinearModel, Pose, RangeBearingModel, VehicleParams, wrap_angle
from .proposal import AssociatedBatch, ProposalStrategy, SolverDivergenceError, nano_solve, predict_prior, prior_solve, unscented_solve
from .rbpf import FilterConfig, Particle, RBPFilter, StepResult
from .ekf_slam import EKFSlamFilter, JointState

__version__ = "0.1.0"

__all__ = [
    "AssociatedBatch",
    "AssociationSet",
    "ControlInput",
    "EKFSlamFilter",
    "FilterConfig",
    "Gaussian",
    "JointState",
    "LandmarkEstimate",
    "LandmarkMap",
    "LinearModel",
    "NotPositiveDefiniteError",
    "Particle",
    "Pose",
    "ProposalStrategy",
    "RBPFilter",
    "RangeBearingModel",
    "SolverDivergenceError",
    "StepResult",
    "VehicleParams",
    "associate",
    "ekf_update",
    "init_landmark",
    "innovation_cov",
    "kl_divergence",
    "log_density",
    "nano_solve",
    "predict_prior",
    "prior_solve",
    "sample",
    "unscented_solve",
    "ut_propagate",
    "wrap_angle",
]
