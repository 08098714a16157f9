"""AdamW with bias correction and decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    eps: float = 1e-8


@dataclass
class OptimizerState:
    config: AdamWConfig
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: OptimizerState) -> None:
    """One in-place update of ``params`` (name -> Tensor) from ``grads`` (name -> array).

    Parameters without a gradient entry (or with ``None``) are treated as
    having zero gradient; weight decay still applies to them.
    """
    cfg = state.config
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"adamw: grad for {name} has shape {g.shape}, param {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data *= 1.0 - cfg.lr * cfg.weight_decay
        p.data -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def collect_grads(params: dict) -> dict:
    return {name: p.grad for name, p in params.items()}


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.grad = None
