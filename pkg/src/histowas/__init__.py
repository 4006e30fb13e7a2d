"""Spatial point-pattern features and histology-wide association studies."""

from .assoc import (AssociationResult, FeatureMatrix, PhenotypeVector, StudyConfig, aggregate_to_subjects,
                    benjamini_hochberg, bonferroni_threshold, fit_univariate, run_study, zscore)
from .features import (DEFAULT_ROSTER, FeatureConfig, center_curve, extract_spatial_features,
                       summarize_curve)
from .geometry import (ObservationWindow, PointPattern, Polygon, contains, convex_hull, dbscan,
                       distance_to_boundary, estimate_window)
from .ppstats import (CurveEstimate, EdgeCorrection, ann, f_function, g_empirical_cdf, g_function,
                      global_density, isotropic_weight, j_function, k_function, l_function)
from .simulate import CsrConfig, generate_csr, run_validation, theoretical_curve

__version__ = "0.1.0"

__all__ = [
    "AssociationResult", "FeatureMatrix", "PhenotypeVector", "StudyConfig", "aggregate_to_subjects",
    "benjamini_hochberg", "bonferroni_threshold", "fit_univariate", "run_study", "zscore",
    "DEFAULT_ROSTER", "FeatureConfig", "center_curve", "extract_spatial_features", "summarize_curve",
    "ObservationWindow", "PointPattern", "Polygon", "contains", "convex_hull", "dbscan",
    "distance_to_boundary", "estimate_window",
    "CurveEstimate", "EdgeCorrection", "ann", "f_function", "g_empirical_cdf", "g_function",
    "global_density", "isotropic_weight", "j_function", "k_function", "l_function",
    "CsrConfig", "generate_csr", "run_validation", "theoretical_curve",
]
