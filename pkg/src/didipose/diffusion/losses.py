"""Variational bound, auxiliary clean-token likelihood and their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..numerics import Tensor, sum_
from .transition import TransitionParams, log_p_theta_step, log_posterior, prior_kl


@dataclass(frozen=True)
class LossWeights:
    aux: float = 5e-4

    def __post_init__(self):
        if not self.aux >= 0:
            raise ConfigError(f"auxiliary loss weight must be >= 0, got {self.aux}")


def vlb_from_log_f(log_f: Tensor, k0, k_s, s, tp: TransitionParams) -> Tensor:
    """Per-position ``KL(q(k_{s-1} | k_s, k_0) || p(k_{s-1} | k_s))``, summed over positions,
    averaged over the batch.  At s = 1 this is the reconstruction term ``-log p(k_0 | k_1)``."""
    k0 = np.asarray(k0, dtype=np.int64)
    B = k0.shape[0]
    s_col = np.asarray(s, dtype=np.int64).reshape(-1, 1)
    log_q = log_posterior(k_s, k0, s_col, tp)
    q = np.exp(log_q)
    support = q > 0
    entropy_part = float(np.sum(q * np.where(support, log_q, 0.0)))
    log_p = log_p_theta_step(log_f, k_s, s_col, tp)
    cross = sum_(log_p * np.where(support, q, 0.0))
    return (-cross + entropy_part) * (1.0 / B)


def aux_from_log_f(log_f: Tensor, k0) -> Tensor:
    """Mean negative log-likelihood of the true clean tokens."""
    k0 = np.asarray(k0, dtype=np.int64)
    onehot = np.zeros(log_f.shape)
    np.put_along_axis(onehot, (k0 - 1)[..., None], 1.0, axis=-1)
    return -sum_(log_f * onehot) * (1.0 / k0.size)


def total_from_log_f(log_f: Tensor, k0, k_s, s, tp: TransitionParams,
                     weights: LossWeights = LossWeights()) -> tuple[Tensor, Tensor, Tensor]:
    """``(total, vlb, aux)`` with ``total = weights.aux * aux + vlb``."""
    vlb = vlb_from_log_f(log_f, k0, k_s, s, tp)
    aux = aux_from_log_f(log_f, k0)
    return vlb + aux * weights.aux, vlb, aux


def prior_term(k0, tp: TransitionParams) -> float:
    """Parameter-free ``KL(q(k_S | k_0) || p(k_S))`` summed over positions, batch mean."""
    k0 = np.asarray(k0, dtype=np.int64)
    return float(prior_kl(k0, tp).sum() / k0.shape[0])
