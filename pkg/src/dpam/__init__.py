"""Sparse additive regression with smoothness and sparsity penalties."""

from .model import (
    BV1,
    BV2,
    SOB1,
    SOB2,
    AdditiveFit,
    ComponentClass,
    ComponentFit,
    Dataset,
    InvalidInputError,
    Kind,
    Rule,
    empirical_norm,
    evaluate_component,
    evaluate_model,
    tv_seminorm,
)
from .solver import FitOptions, PenaltyPlan, component_update, fit_additive, kkt_residuals, objective, predict
from .tuning import build_plan, rates_scale_adaptive, rates_scale_dependent
from .uniprox import SolverError

__version__ = "0.1.0"
