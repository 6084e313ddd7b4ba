"""Online convex optimisation under arbitrary feedback delays."""
from .base_olo import OMD, PFTRL, BaseLearner, BaseUpdatePacket, DriftRegretLedger, check_ledger, make_learner
from .config import ExperimentConfig, load_config, parse_config
from .estimators import SmoothingSchedule, one_point_estimate, two_point_estimate
from .geometry import Ball, Box
from .harness import (
    DelayGenerator,
    DomainSpec,
    EnvSpec,
    LossSpec,
    PlayerSpec,
    RegretTrace,
    fit_scaling,
    run_episode,
    sweep,
)
from .losses import LinearStream, QuadraticStream, SmoothedPiecewise, SumFamily, build_family
from .timeline import DelayProfile, DelaySchedule, EventOrder, profile, profile_of, realize, verify_identities
from .wrappers import W2P, WBCO, WOCO, FeedbackPacket, SkipWrapper

__all__ = [
    "OMD", "PFTRL", "BaseLearner", "BaseUpdatePacket", "DriftRegretLedger", "check_ledger",
    "make_learner", "ExperimentConfig", "load_config", "parse_config", "SmoothingSchedule",
    "one_point_estimate", "two_point_estimate", "Ball", "Box", "DelayGenerator", "DomainSpec",
    "EnvSpec", "LossSpec", "PlayerSpec", "RegretTrace", "fit_scaling", "run_episode", "sweep",
    "LinearStream", "QuadraticStream", "SmoothedPiecewise", "SumFamily", "build_family",
    "DelayProfile", "DelaySchedule", "EventOrder", "profile", "profile_of", "realize",
    "verify_identities", "W2P", "WBCO", "WOCO", "FeedbackPacket", "SkipWrapper",
]
