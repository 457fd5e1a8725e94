"""Nearest-neighbour-ratio (NNR) estimators of Rényi and f-divergences."""
from ._backend import BACKEND
from .baselines import kde_density, knn_density, plugin_divergence
from .distributions import (DistributionSpec, OracleValue, oracle, pdf,
                            quadrature_divergence, renyi_gaussian_closed_form, sample)
from .ensemble import (EnsembleWeights, default_index_set, ensemble_divergence,
                       ensemble_estimate, solve_weights)
from .errors import EstimatorError
from .metric_space import (Metric, Neighbor, PooledIndex, brute_force_k_nearest,
                           build_index, k_nearest, load_points)
from .nnr import (DivergenceEstimate, clamp_renyi, EstimatorConfig, GFunction, NeighborCounts,
                  estimate_f_divergence, estimate_J_alpha, estimate_renyi, g_eval,
                  k_opt_heuristic, nnr_counts, nnr_estimate)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DistributionSpec", "DivergenceEstimate", "EnsembleWeights",
    "EstimatorConfig", "EstimatorError", "GFunction", "Metric", "Neighbor",
    "NeighborCounts", "OracleValue", "PooledIndex", "brute_force_k_nearest",
    "build_index", "clamp_renyi", "default_index_set", "ensemble_divergence", "ensemble_estimate",
    "estimate_J_alpha", "estimate_f_divergence", "estimate_renyi", "g_eval",
    "k_nearest", "k_opt_heuristic", "kde_density", "knn_density", "load_points",
    "nnr_counts", "nnr_estimate", "oracle", "pdf", "plugin_divergence",
    "quadrature_divergence", "renyi_gaussian_closed_form", "sample", "solve_weights",
]
