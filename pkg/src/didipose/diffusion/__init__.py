"""Occlude-and-replace discrete diffusion over pose tokens."""
from .denoiser import (
    DenoiserConfig, DenoiserParams, denoise_from_condition, denoise_log_probs, denoise_logits,
    encode_condition, observation_features,
)
from .infer import INIT_MODES, infer, infer_tokens, initial_tokens, resolve_init_mode, strided_steps
from .losses import LossWeights, aux_from_log_f, prior_term, total_from_log_f, vlb_from_log_f
from .schedule import (
    ALPHA_FLOOR, MATRIX_VARIANTS, Schedule, make_linear_schedule, variant_schedule,
)
from .train import DiffusionTrainConfig, dataset_features, tokenize_dataset, train_diffusion
from .transition import (
    LOG_ZERO, TransitionParams, cumulative_forward, log_p_theta_step, log_posterior, posterior,
    prior_kl, sample_forward, transition_matrix,
)

__all__ = [
    "ALPHA_FLOOR", "DenoiserConfig", "DenoiserParams", "DiffusionTrainConfig", "INIT_MODES",
    "LOG_ZERO", "LossWeights", "MATRIX_VARIANTS", "Schedule", "TransitionParams",
    "aux_from_log_f", "cumulative_forward", "dataset_features", "denoise_from_condition",
    "denoise_log_probs", "denoise_logits", "encode_condition", "infer", "infer_tokens",
    "initial_tokens", "log_p_theta_step", "log_posterior", "make_linear_schedule",
    "observation_features", "posterior", "prior_kl", "prior_term", "resolve_init_mode",
    "sample_forward", "strided_steps", "tokenize_dataset", "total_from_log_f", "train_diffusion",
    "transition_matrix", "variant_schedule", "vlb_from_log_f",
]
