"""Numerical counterparts of the quantities that govern order-estimation error rates."""

from .brackets import Bracket, BracketConditions, bracket_conditions, build_mixture_bracket, entropy_estimate, is_delta_bracket
from .conic import ConicCoords, conic_coords, conic_inverse, conic_t_bound, match_components
from .constants import (OverestimationConstants, c1_constant, lemma2_bound, overestimation_constants,
                        regression_c2_bound)
from .core import (HStar, InequalityCheck, Lemma2Result, MomentEstimate, check_hv_inequality, estimate_m_alpha,
                   h_star, in_s_k_delta, kl_at, kl_batch, prior_mass_s_k, verify_lemma2)
from .testing import TestBounds, phi_test, test_error_bounds

__all__ = [
    "Bracket", "BracketConditions", "bracket_conditions", "build_mixture_bracket", "entropy_estimate",
    "is_delta_bracket", "ConicCoords", "conic_coords", "conic_inverse", "conic_t_bound", "match_components",
    "OverestimationConstants", "c1_constant", "lemma2_bound", "overestimation_constants", "regression_c2_bound",
    "HStar", "InequalityCheck", "Lemma2Result", "MomentEstimate", "check_hv_inequality", "estimate_m_alpha",
    "h_star", "in_s_k_delta", "kl_at", "kl_batch", "prior_mass_s_k", "verify_lemma2",
    "TestBounds", "phi_test", "test_error_bounds",
]
