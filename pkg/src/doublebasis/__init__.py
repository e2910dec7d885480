"""Distribution-to-real regression with orthonormal-basis projections and random features.

Each input distribution, seen only through a sample set, is reduced to its
empirical cosine-basis coefficients.  The Double-Basis estimator maps those
coefficients through random Fourier features and fits a linear model; the
Kernel-Kernel estimator smooths training responses by coefficient distance.
"""

from doublebasis.basis import (
    BasisConfig,
    DomainTransform,
    MultiIndexSet,
    choose_truncation,
    coefficient_matrix,
    enumerate_index_set,
    estimate_coefficients,
    eval_density,
    l2_distance,
)
from doublebasis.errors import DataError, DomainError, DoubleBasisError, NumericError, ResourceError
from doublebasis.regress import (
    DoubleBasisModel,
    KernelKernelModel,
    fit_double_basis,
    kk_fit,
    predict,
    solve_ols,
    solve_ridge,
)
from doublebasis.rks import FeatureMap, choose_feature_count, draw_feature_map

__all__ = [
    "BasisConfig", "DomainTransform", "MultiIndexSet", "choose_truncation", "coefficient_matrix",
    "enumerate_index_set", "estimate_coefficients", "eval_density", "l2_distance",
    "DataError", "DomainError", "DoubleBasisError", "NumericError", "ResourceError",
    "DoubleBasisModel", "KernelKernelModel", "fit_double_basis", "kk_fit", "predict",
    "solve_ols", "solve_ridge", "FeatureMap", "choose_feature_count", "draw_feature_map",
]

__version__ = "0.1.0"
