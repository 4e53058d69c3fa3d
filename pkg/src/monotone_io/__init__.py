"""Monotonicity certification and analysis for input/output ODE models."""

from .certify import (
    CertificationReport,
    SamplePlan,
    competitive_test,
    incremental_positivity_test,
    kamke_test,
    sign_pattern_certify,
    trajectory_monotonicity_test,
)
from .characteristic import (
    Characteristic,
    bounded_reachability_check,
    compute_characteristic,
    limit_sandwich_check,
    verify_planar_gas,
)
from .integrate import Trajectory, integrate, jacobian_fd
from .interconnect import (
    CascadeModel,
    FeedbackLoop,
    SmallGainReport,
    cascade,
    cascade_characteristic,
    closed_loop_verify,
    small_gain_certify,
)
from .invariance import invariance_certify, polytope_tangent_vectors_ok, trajectory_containment_check
from .model import SystemModel, SystemOrders, builtin, load_model, parse_model
from .order import OrderInterval, OrthantOrder
from .polytope import Box, Polytope

__version__ = "0.1.0"
