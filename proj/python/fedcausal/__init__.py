"""Multi-site causal effect estimation with federated weighting and site selection."""

from ._core import (
    FedCausalError,
    estimate,
    generate,
    monte_carlo,
    project_simplex,
    run,
    scenario_ids,
    true_psi,
)

__all__ = [
    "FedCausalError",
    "estimate",
    "generate",
    "monte_carlo",
    "project_simplex",
    "run",
    "scenario_ids",
    "true_psi",
]
