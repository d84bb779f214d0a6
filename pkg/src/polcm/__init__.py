"""Identifiability checks and maximum-likelihood estimation for linear
causal models with latent variables."""

from .covariance import covariance_full, standardize_model
from .estimator import EstimateResult, EstimatorConfig, estimate
from .graph import GraphError, PolcmGraph, Trek, d_separated, enumerate_simple_treks, load_graph
from .identifiability import Verdict, check_identifiability
from .metrics import mse_group_sign, mse_orthogonal
from .simulator import SimConfig, random_polcm, simulate

__version__ = "0.1.0"
