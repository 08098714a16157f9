"""Denoiser training against a frozen codec."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DataError, DivergenceError
from ..numerics import AdamWConfig, OptimizerState, adamw_step, collect_grads, zero_grads
from ..quantizer import CodecParams, encode_tokens
from .denoiser import DenoiserParams, denoise_log_probs, observation_features
from .losses import LossWeights, prior_term, total_from_log_f
from .transition import TransitionParams, sample_forward


@dataclass(frozen=True)
class DiffusionTrainConfig:
    lr: float = 5.5e-4
    beta1: float = 0.9
    beta2: float = 0.96
    weight_decay: float = 0.045
    eps: float = 1e-8
    batch_size: int = 64
    steps: int = 2000
    aux_weight: float = 5e-4
    seed: int = 0

    def adamw(self) -> AdamWConfig:
        return AdamWConfig(self.lr, self.beta1, self.beta2, self.weight_decay, self.eps)

    def to_dict(self) -> dict:
        return asdict(self)


def tokenize_dataset(dataset, codec: CodecParams, batch: int = 1024) -> np.ndarray:
    """Clean token sequences (n, N) for every pose, from the frozen codec."""
    out = [encode_tokens(dataset.coords[lo:lo + batch], codec)[0]
           for lo in range(0, len(dataset.coords), batch)]
    if not out:
        return np.zeros((0, codec.config.tokens), dtype=np.int64)
    return np.concatenate(out, axis=0)


def _step_rng(seed: int, step: int) -> np.random.Generator:
    # Keyed on the optimizer step so a resumed run replays the same draws.
    return np.random.default_rng(np.random.SeedSequence([seed, 11, step]))


def train_diffusion(tokens, obs_feat, dp: DenoiserParams, tp: TransitionParams,
                    cfg: DiffusionTrainConfig, state: OptimizerState | None = None,
                    on_step=None):
    """Train in place; returns ``(dp, state, log)``.

    ``tokens`` (n, N) clean codes, ``obs_feat`` (n, 3J) observation features.
    Each sequence in a batch draws its own step s uniformly from 1..S and
    every position is corrupted independently.  ``log`` has one row per
    optimizer step: step, s_sampled (batch mean), vlb, aux, total, prior_kl
    and occ_tokens (Occ symbols in the corrupted batch).
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    obs_feat = np.asarray(obs_feat, dtype=np.float64)
    n = len(tokens)
    if n == 0:
        raise DataError("diffusion training needs a nonempty dataset")
    if len(obs_feat) != n:
        raise DataError(f"{n} token sequences but {len(obs_feat)} observations")
    state = state or OptimizerState(cfg.adamw())
    weights = LossWeights(cfg.aux_weight)
    params = dp.params
    S = tp.steps
    bs = min(cfg.batch_size, n)
    log = []
    target = state.step + cfg.steps
    while state.step < target:
        rng = _step_rng(cfg.seed, state.step)
        idx = rng.choice(n, size=bs, replace=False) if bs < n else rng.permutation(n)
        k0 = tokens[idx]
        s = rng.integers(1, S + 1, size=bs)
        k_s = sample_forward(k0, s, tp, rng)
        zero_grads(params)
        log_f = denoise_log_probs(k_s, s, obs_feat[idx], dp)
        total, vlb, aux = total_from_log_f(log_f, k0, k_s, s, tp, weights)
        value = total.item()
        if not np.isfinite(value):
            raise DivergenceError(
                f"diffusion loss became {value} at optimizer step {state.step} "
                f"(vlb={vlb.item()}, aux={aux.item()})")
        total.backward()
        adamw_step(params, collect_grads(params), state)
        row = {"step": state.step, "s_sampled": float(s.mean()), "vlb": vlb.item(),
               "aux": aux.item(), "total": value, "prior_kl": prior_term(k0, tp),
               "occ_tokens": int(np.sum(k_s == tp.occ))}
        log.append(row)
        if on_step is not None:
            on_step(row)
    return dp, state, log


def dataset_features(dataset, coord_scale: float) -> np.ndarray:
    return observation_features(dataset.proj2d, dataset.visible, coord_scale)
