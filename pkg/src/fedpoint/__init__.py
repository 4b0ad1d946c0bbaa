"""Federated proximal-point optimization laboratory.

Simulates a client-server network solving strongly convex finite sums with
stochastic proximal-point methods (plain, variance-reduced, composite, and
Catalyst-accelerated) and first-order baselines, with exact communication
accounting and reproducible seeded runs.
"""

from .problem import (
    ClientObjective,
    FederatedProblem,
    ProblemConstants,
    Regularizer,
    compute_constants,
    estimate_delta,
    power_iteration,
    sigma_star_sq,
)
from .prox import ProxResult, ProxSpec
from .optim import (
    ScaffoldState,
    SppmState,
    SvrpState,
    TheoremParams,
    sppm_params,
    svrp_params,
)
from .fedsim import CommEvent, CommLedger, RunTrace, simulate
from .catalyst import CatalystParams, catalyst_params, catalyzed_svrp_run
from .data import LibsvmDataset, SyntheticSpec, generate_synthetic, parse_libsvm, partition

__version__ = "0.1.0"

__all__ = [
    "ClientObjective",
    "FederatedProblem",
    "ProblemConstants",
    "Regularizer",
    "compute_constants",
    "estimate_delta",
    "power_iteration",
    "sigma_star_sq",
    "ProxResult",
    "ProxSpec",
    "ScaffoldState",
    "SppmState",
    "SvrpState",
    "TheoremParams",
    "sppm_params",
    "svrp_params",
    "CommEvent",
    "CommLedger",
    "RunTrace",
    "simulate",
    "CatalystParams",
    "catalyst_params",
    "catalyzed_svrp_run",
    "LibsvmDataset",
    "SyntheticSpec",
    "generate_synthetic",
    "parse_libsvm",
    "partition",
    "__version__",
]
