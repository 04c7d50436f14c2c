"""PCE-based ANCOVA global sensitivity analysis for models with correlated inputs."""

from .ancova import (AncovaReport, HdmrTerm, ancova_indices, extract_hdmr, render_index_table,
                     smooth_and_requantify, sobol_indices)
from .basis import (BasisSet, UnivariateBasis, build_univariate_basis, evaluate_basis, total_degree_count,
                    total_degree_indices)
from .benchmarks import (ComparisonTable, DcNetwork, TestModel, compare_strategies, make_benchmark, mc_ancova,
                         transform_substitution_error)
from .exceptions import InputError, NumericalError
from .marginals import (DependenceModel, MarginalModel, SampleMatrix, empirical_moments, fit_marginal, read_csv,
                        sample_correlated)
from .regression import (PCERegressor, PceModel, corrected_loo_error, fit_pce, lar_path, load_model,
                         save_model)
from .transforms import (IsoTransformer, fictive_correlation, make_transform, nataf_forward, nataf_inverse,
                         rosenblatt_forward, rosenblatt_inverse)

__version__ = "0.1.0"

__all__ = [
    "AncovaReport", "BasisSet", "ComparisonTable", "DcNetwork", "DependenceModel", "HdmrTerm", "InputError",
    "IsoTransformer", "MarginalModel", "NumericalError", "PCERegressor", "PceModel", "SampleMatrix",
    "TestModel", "UnivariateBasis", "ancova_indices", "build_univariate_basis", "compare_strategies",
    "corrected_loo_error", "empirical_moments", "evaluate_basis", "extract_hdmr", "fictive_correlation",
    "fit_marginal", "fit_pce", "lar_path", "load_model", "make_benchmark", "make_transform", "mc_ancova",
    "nataf_forward", "nataf_inverse", "read_csv", "render_index_table", "rosenblatt_forward",
    "rosenblatt_inverse", "sample_correlated", "save_model", "smooth_and_requantify", "sobol_indices",
    "total_degree_count", "total_degree_indices", "transform_substitution_error",
]
