"""Rank-based singularity, mode and actuation analysis for planar closed-loop linkages."""

from .errors import DescriptionError, NumericalError, PKMError
from .kinematics import EEPose, ee_pose, forward_position, inverse_position, jacobians, velocity_solutions
from .mechanism import Configuration, Mechanism, build_mechanism, configuration, constraints, inequality, load_mechanism
from .singularity import classify, rank_with_tolerance, singular_locus_scan

__version__ = "0.1.0"

__all__ = [
    "Configuration",
    "DescriptionError",
    "EEPose",
    "Mechanism",
    "NumericalError",
    "PKMError",
    "build_mechanism",
    "classify",
    "configuration",
    "constraints",
    "ee_pose",
    "forward_position",
    "inequality",
    "inverse_position",
    "jacobians",
    "load_mechanism",
    "rank_with_tolerance",
    "singular_locus_scan",
    "velocity_solutions",
]
