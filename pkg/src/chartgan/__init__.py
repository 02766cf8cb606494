"""Chart-decomposed Gaussian manifolds, coupling localization and generalization checks."""

from .chart_model import ChartGaussian, EmpiricalSample, ManifoldSpec, build_atlas, sample_chart, sample_mixture
from .coupling import CostMatrix, CouplingMatrix, cost_matrix, solve_coupling, verify_localization
from .generator import PiecewiseAffineGenerator, ideal_generator, pti_index, pti_membership
from .metrics import LkEstimate, exact_1d, lk_empirical, lk_monte_carlo, lk_paper_form
from .permutation import Permutation

__all__ = [
    "ChartGaussian", "EmpiricalSample", "ManifoldSpec", "build_atlas", "sample_chart", "sample_mixture",
    "CostMatrix", "CouplingMatrix", "cost_matrix", "solve_coupling", "verify_localization",
    "PiecewiseAffineGenerator", "ideal_generator", "pti_index", "pti_membership",
    "LkEstimate", "exact_1d", "lk_empirical", "lk_monte_carlo", "lk_paper_form", "Permutation",
]
__version__ = "0.1.0"
