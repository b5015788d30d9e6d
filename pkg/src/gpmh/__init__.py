"""Metropolis-Hastings with a Gaussian-process surrogate of a noisy log-likelihood."""
from .decision import Decision, PairStats, conditional_error, decide, unconditional_error
from .design import DesignStrategy, select_evaluation
from .gp import Evaluation, GpHyperparams, GpPosterior, HyperpriorSpec, fit_map
from .likelihoods import SlConfig, SyntheticLikelihood, ToyTarget, UniformBox
from .sampler import RunConfig, RunResult, run_gp_mh, run_mh_blfi, run_reference_mh

__version__ = "0.1.0"
