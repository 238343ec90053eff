"""Functional and representational similarity through usable information."""

from .alignment import (
    directed_rep_similarity,
    fit_affine,
    fit_invertible_affine,
    fit_map,
    fit_orthogonal,
    fit_orthogonal_scale,
    symmetric_rep_similarity,
)
from .core import (
    AFFINE,
    INVERTIBLE_AFFINE,
    ORTHOGONAL,
    ORTHOGONAL_SCALE,
    FamilyKind,
    LinearMap,
    PredictiveFamily,
    RepresentationSet,
    SimilarityReport,
    TaskHead,
    center,
    total_variance,
)
from .functional import (
    StitchResult,
    TrainConfig,
    coarsen_labels,
    cross_entropy,
    directed_func_similarity,
    marginal_entropy,
    stitch_pair,
    symmetric_func_similarity,
    train_head,
    train_stitcher,
    usable_information,
)
from .metrics import MetricConfig, linear_cka, mean_cca, rsa, spearman, svcca
from .synthetic import ScenarioKind, ScenarioSpec, generate

__version__ = "0.1.0"
