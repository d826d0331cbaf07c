"""Estimators of the longitudinal G-formula and their nuisance fits."""
from .itmle import cv_itmle, itmle
from .nuisance import (
    Chain,
    CleverTerm,
    EstimationError,
    EstimatorReport,
    KnownPropensity,
    OutcomeRegressionFit,
    PropensityFit,
    SuperLearnerSpec,
    Term,
    fit_plan,
    fit_propensities,
    weight_products,
)
from .sequential import direct_plugin, dr_pseudo_outcomes, dr_transform, ipw, ipw_risk, ltmle

ESTIMATORS = ("plugin", "ipw", "ltmle", "dr_transform", "itmle", "cv_itmle")
