"""Estimation and parameter-recovery tools for the generalized partial credit model."""

from .model import (
    ItemBank,
    ItemParams,
    NrmParams,
    ResponseMatrix,
    gpcm_category_probs,
    gpcm_log_likelihood,
    gpcm_to_nrm,
    grad_item_loglik,
    grad_theta_loglik,
    nrm_category_probs,
)

__version__ = "0.1.0"
