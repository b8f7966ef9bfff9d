"""Samplers for the continuation-ratio mixture models."""

from .chain import DRAW_FIELDS, Chain, fit
from .crbb import MhAdapter, bb_log_posterior, step_mh_crbb
from .diagnostics import DiagnosticBundle, diagnostics, effective_sample_size, split_rhat, sorted_top_weights
from .state import GibbsState, McmcConfig, ModelData, NumericalFailure, initial_state
from .steps import (
    draw_gaussian_2d,
    gibbs_sweep,
    log_mixture_weights,
    refresh_empty_stage,
    step_update_atoms,
    step_update_config,
    step_update_hyper,
    step_update_sigma2,
    step_update_weights,
    step_update_weights_cw,
)

__all__ = [
    "Chain", "DRAW_FIELDS", "fit",
    "MhAdapter", "bb_log_posterior", "step_mh_crbb",
    "DiagnosticBundle", "diagnostics", "effective_sample_size", "split_rhat", "sorted_top_weights",
    "GibbsState", "McmcConfig", "ModelData", "NumericalFailure", "initial_state",
    "draw_gaussian_2d", "gibbs_sweep", "log_mixture_weights", "refresh_empty_stage",
    "step_update_atoms", "step_update_config", "step_update_hyper", "step_update_sigma2",
    "step_update_weights", "step_update_weights_cw",
]
