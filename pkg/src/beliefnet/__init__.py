"""Belief propagation, free-energy minimization and belief consensus on pairwise MRFs."""

import sys

from .bp import MAX, SUM, BPResult, MessageStore, Schedule, map_decode, run_bp
from .consensus import (
    ConsensusParams,
    ConsensusProblem,
    LocalProblem,
    PreconditionError,
    StepRule,
    bethe_consensus,
    mfe_consensus,
    run_coupled_inequality,
    run_dual_decomposition,
)
from .fdd import FddDecision, FddParams, HypothesisBank, LocalEvidence, centralized_posterior, distributed_fdd
from .free_energy import bethe_free_energy, gibbs_free_energy, kl_divergence, mean_field_free_energy
from .io import InputError, parse_model, parse_scenario, serialize_model
from .model import (
    BeliefState,
    ModelError,
    PairwiseMRF,
    StateCapExceeded,
    exact_marginals,
    map_assignment,
    partition_function,
    validate,
)
from .optimize import BOParams, BOResult, minimize_bethe_direct, minimize_bethe_via_bp, minimize_mean_field

__all__ = [n for n, v in dict(globals()).items() if not n.startswith("_") and not isinstance(v, type(sys))]
__version__ = "0.1.0"
