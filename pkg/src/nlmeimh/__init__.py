"""Independent Metropolis-Hastings sampling of random effects in nonlinear mixed effects models.

The sampler's Gaussian proposal is centred at the individual MAP estimate, with
covariance from either a linearization of the structural model or a Laplace
expansion. Random-walk Metropolis and MALA kernels are provided for comparison.
"""

__version__ = "0.1.0"

from .errors import (
    DataFormatError, DomainError, EvaluationError, FactorizationError, JacobianError,
    NlmeError, NotConvergedError, ProposalError,
)
from .structural import (
    CONSTANT, LINEAR, PK1_ORAL, JacobianResult, StructuralModel, get_model, jacobian,
    pk1_oral, polynomial_model, register_model,
)
from .model import (
    IndividualRecord, PopulationParams, Posterior, grad_log_joint, log_joint,
    log_likelihood, log_prior, to_latent, to_natural,
)
from .mapsolve import MapOptions, MapResult, find_map, find_map_multistart
from .proposal import (
    GaussianProposal, expected_info_gap, laplace_proposal, linearized_proposal,
    proposal_logpdf, proposal_sample,
)
from .samplers import (
    KERNELS, Chain, ChainState, KernelConfig, make_kernel, mala_candidate, mh_step,
    run_chain, run_replicates, tune_mala,
)
from .diagnostics import (
    QuantileTrace, ReplicateSummary, acceptance_rate, ess, replicate_summary,
    running_quantiles,
)
from .datagen import SimConfig, read_dataset, simulate, warfarin_theta, write_dataset
