"""Multi-task combinatorial bandit simulator for budget allocation.

A library plus CLI implementing hierarchical Bayesian reward posteriors
(linear, Gaussian-process and tangent-linearized network models), two-step
Thompson sampling, an exact multiple-choice knapsack allocator, baseline
policies, and seeded synthetic experiments with Bayes-regret evaluation.
"""

__version__ = "0.1.0"

from .core import (
    ActionGrid,
    Allocation,
    ArmBlock,
    ArmSpace,
    BaseArm,
    CampaignMeta,
    History,
    Observation,
    flat_index,
    flat_index_inverse,
    make_grid,
    transform_features,
)
from .kernels import (
    LinearKernel,
    MLPSpec,
    NTKKernel,
    RBFKernel,
    init_mlp,
    kernel_eval,
    ntk_features,
    prior_mean,
)
from .mckp import ValueTable, solve, solve_bruteforce
from .posterior import (
    GammaPosterior,
    GPosteriorState,
    HierModel,
    PosteriorNumericalError,
    ThetaPosterior,
    batch_append,
    memory_collapse,
    posterior_g,
    posterior_g_gamma_space,
    posterior_theta,
    sample_g,
    sample_theta,
)

__all__ = [
    "__version__",
    "ActionGrid",
    "Allocation",
    "ArmBlock",
    "ArmSpace",
    "BaseArm",
    "CampaignMeta",
    "History",
    "Observation",
    "flat_index",
    "flat_index_inverse",
    "make_grid",
    "transform_features",
    "LinearKernel",
    "MLPSpec",
    "NTKKernel",
    "RBFKernel",
    "init_mlp",
    "kernel_eval",
    "ntk_features",
    "prior_mean",
    "ValueTable",
    "solve",
    "solve_bruteforce",
    "GammaPosterior",
    "GPosteriorState",
    "HierModel",
    "PosteriorNumericalError",
    "ThetaPosterior",
    "batch_append",
    "memory_collapse",
    "posterior_g",
    "posterior_g_gamma_space",
    "posterior_theta",
    "sample_g",
    "sample_theta",
]
