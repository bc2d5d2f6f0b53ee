"""Contextual bandits under within-round interference.

Units arriving in a round affect each other's rewards through an interference
matrix ``W``. The package provides the reward model and its linearizing
transform, an online least-squares estimator with eigenvalue clipping,
interference-aware epsilon-greedy / UCB / Thompson sampling policies, value
estimators (IPW, DM, DR) with asymptotic inference, synthetic and MovieLens
environments, and experiment drivers.
"""
from .domain import BetaVector, BoundConstants, Round, oracle_action, transform_covariates
from .environment import EnvironmentConfig, SyntheticEnvironment
from .estimator import ClippingSchedule, EstimatorState
from .policies import InterferenceBandit, PolicyConfig

__all__ = [
    "BetaVector", "BoundConstants", "Round", "oracle_action", "transform_covariates",
    "EnvironmentConfig", "SyntheticEnvironment", "ClippingSchedule", "EstimatorState",
    "InterferenceBandit", "PolicyConfig",
]
__version__ = "0.1.0"
