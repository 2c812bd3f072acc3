"""Cramér-Rao type bounds for prediction, evaluated numerically.

Subpackages by role: `model` and `families` (dominated models), `expectation`
(integration engine), `l2diff` (scores, Fisher information, differentiability
diagnostics), `covariance` (covariance inequality on finite laws), `bounds`
(prediction risk and its lower bounds), `reconstruction` (exponential-form
recovery from an efficient predictor), `catalog` (built-in models with closed
forms) and `cli` (batch reports).
"""

__version__ = "0.1.0"

from .bounds import (BiasedPredictand, Predictand, Predictor, cr_bound_biased, cr_bound_unbiased,
                     efficiency_gap, efficiency_residual, evaluate_biased, evaluate_predictor, G_general,
                     G_simplified, msep_decompose, psi_jacobian, qep)
from .catalog import (CatalogEntry, ar1_prediction, bernoulli, exponential_family_builder, gaussian_location,
                      gaussian_mean, get_entry, poisson, uniform_scale)
from .covariance import DiscreteJoint, covariance_bound, equality_condition_holds, project_onto_scores
from .expectation import ExpectationResult, IntegrationSpec, expect, expect_under_shifted
from .l2diff import (check_continuous_l2, check_l2_diff, check_lemma_106, fisher_information,
                     hellinger_remainder, score, score_mean)
from .model import DominatedModel, ParameterDomain, density, likelihood_ratio, sample
from .reconstruction import (axis_path, gradient_condition_check, path_independence_check, polyline_path,
                             reconstruct, reconstruct_A, reconstruct_B, straight_path, validate_density_ratio)

__all__ = [
    "ar1_prediction", "axis_path", "bernoulli", "BiasedPredictand", "CatalogEntry",
    "check_continuous_l2", "check_l2_diff", "check_lemma_106", "covariance_bound", "cr_bound_biased",
    "cr_bound_unbiased", "density", "DiscreteJoint", "DominatedModel", "efficiency_gap",
    "efficiency_residual", "equality_condition_holds", "evaluate_biased", "evaluate_predictor",
    "expect", "expect_under_shifted", "ExpectationResult", "exponential_family_builder",
    "fisher_information", "G_general", "G_simplified", "gaussian_location", "gaussian_mean",
    "get_entry", "gradient_condition_check", "hellinger_remainder", "IntegrationSpec",
    "likelihood_ratio", "msep_decompose", "ParameterDomain", "path_independence_check", "poisson",
    "polyline_path", "Predictand", "Predictor", "project_onto_scores", "psi_jacobian", "qep",
    "reconstruct", "reconstruct_A", "reconstruct_B", "sample", "score", "score_mean", "straight_path",
    "uniform_scale", "validate_density_ratio",
]
