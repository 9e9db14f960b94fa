"""Rank-based estimation of Sobol' and Cramer-von Mises sensitivity indices.

The estimators pair each observation with its right neighbour in the input
ordering.  Alongside them the package evaluates asymptotic variances from
a generative model, builds the discrete martingale decomposition behind
the central limit theorems, and runs replicate experiments that check the
fluctuation results numerically.
"""

from .errors import SensIndexError
from .estimators import (
    EstimateReport,
    MomentVector,
    chatterjee_estimate,
    cvm_rank_estimate,
    h,
    sobol_multivariate,
    sobol_rank_estimate,
    theta_hat,
    tn_curve,
    tn_cvm_integral,
)
from .models import GenerativeModel, get_model, quantile_transfer, sample_model, true_indices
from .ranking import Sample, TiePolicy, neighbor_map, ranks, sort_permutation

__version__ = "0.1.0"

__all__ = [
    "EstimateReport", "GenerativeModel", "MomentVector", "Sample", "SensIndexError", "TiePolicy",
    "chatterjee_estimate", "cvm_rank_estimate", "get_model", "h", "neighbor_map",
    "quantile_transfer", "ranks", "sample_model", "sobol_multivariate", "sobol_rank_estimate",
    "sort_permutation", "theta_hat", "tn_curve", "tn_cvm_integral", "true_indices",
]
