"""Regression learners for the nuisance fits."""
from .base import EmptyFit, SaturatedFit, fit_learner, fit_saturated
from .boosting import BoostedFit, fit_boosted_stumps
from .logistic import FitError, LogisticFit, fit_logistic, score_residual
from .selection import (
    CvPartition,
    CvResult,
    EnsembleFit,
    Problem,
    cross_entropy,
    cross_validate,
    cv_select,
    fit_convex_ensemble,
    fit_weighted,
    make_partition,
    squared_error,
    super_learner,
)
from .spec import (
    EMPTY,
    GBM_DEEP,
    GBM_MEDIUM,
    GBM_SHALLOW,
    INTERCEPT,
    LOGISTIC,
    PRESETS,
    SATURATED,
    LearnerSpec,
    format_spec,
    parse_spec,
)
