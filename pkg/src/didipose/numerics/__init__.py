"""Minimal reverse-mode differentiation over numpy arrays (FP64 by default)."""
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, relative_error
from .layers import init_attention, init_linear, linear, multi_head_attention
from .optim import AdamWConfig, OptimizerState, adamw_step, collect_grads, zero_grads
from .tensor import (
    ComputationTape, Tensor, add, as_tensor, concat, div, embedding_lookup, exp, gelu,
    getitem, is_grad_enabled, layer_norm, log, log_softmax, logaddexp, logsumexp, make_op,
    matmul, mean, mul, no_grad, power, reshape, round_ste, softmax, sub, sum_, swapaxes, tanh,
    transpose, unbroadcast,
)

__all__ = [
    "AdamWConfig", "ComputationTape", "OptimizerState", "Tensor", "adamw_step", "add",
    "as_tensor", "collect_grads", "concat", "div", "embedding_lookup", "exp", "gelu",
    "getitem", "grad_check", "init_attention", "init_linear", "is_grad_enabled",
    "layer_norm", "linear", "load_checkpoint", "log", "log_softmax", "logaddexp",
    "logsumexp", "make_op", "matmul", "mean", "mul", "multi_head_attention", "no_grad",
    "power", "relative_error", "reshape", "round_ste", "save_checkpoint", "softmax", "sub",
    "sum_", "swapaxes", "tanh", "transpose", "unbroadcast", "zero_grads",
]
