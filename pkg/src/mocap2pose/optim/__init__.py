"""Gradient-based minimisers, the Gaussian-mixture pose prior and gradient checking."""

from .adam import AdamConfig, adam_minimize
from .gmm import GmmModel, gmm_fit_em, gmm_neg_log_prob, load_gmm, save_gmm
from .gradcheck import GradCheckResult, finite_diff_grad, grad_check
from .lbfgs import LbfgsConfig, ObjectiveEval, OptimizationError, OptimizeResult, lbfgs_minimize

__all__ = [
    "AdamConfig", "adam_minimize",
    "GmmModel", "gmm_fit_em", "gmm_neg_log_prob", "load_gmm", "save_gmm",
    "GradCheckResult", "finite_diff_grad", "grad_check",
    "LbfgsConfig", "ObjectiveEval", "OptimizationError", "OptimizeResult", "lbfgs_minimize",
]
