"""Semiclassical (WKB) solver for continuous-time portfolio problems with HARA utility."""

from __future__ import annotations

from .errors import (
    AllPathsInvalid,
    ConfigError,
    DegenerateBump,
    DomainError,
    InnerNewtonDivergence,
    MaxIterationsExceeded,
    NotPositiveDefinite,
    OutOfDomain,
    SingularA,
    SingularGain,
    WKBError,
)
from .flowmap import InversionResult, flow, flow_jacobian_fd, invert_flow, variational_gain
from .hamiltonian import HamiltonianSystem
from .leapfrog import PhasePoint, PhaseTrajectory, TimeGrid, integrate_backward, integrate_backward_batch
from .mcsim import SimConfig, compare_policies, simulate_expected_utility
from .model import DiffusionModel, ModelSpec, SeparableModel, lognormal, model_from_config, ornstein_uhlenbeck
from .oracle import OUOracle, cara_closed_forms, lognormal_policy, lognormal_s0
from .utility import UtilityKind, UtilitySpec
from .wkb import Numerics, PolicyResult, ValueResult, policy_at, s0_at, s1_at, value_at, value_surface

__version__ = "0.1.0"
