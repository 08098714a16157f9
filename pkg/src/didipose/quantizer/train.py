"""Codec training with straight-through gradients through the FSQ rounding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError, DivergenceError
from ..numerics import AdamWConfig, OptimizerState, Tensor, adamw_step, collect_grads, zero_grads
from .codec import CodecParams, encode_tokens, reconstruct_graph


@dataclass(frozen=True)
class CodecTrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.15
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 20
    seed: int = 0

    def adamw(self) -> AdamWConfig:
        return AdamWConfig(self.lr, self.beta1, self.beta2, self.weight_decay, self.eps)


def reconstruction_loss(codec: CodecParams, poses_mm: np.ndarray, quantize: bool = True) -> Tensor:
    """Mean squared error over joints and axes in network units (metres).

    The input is made root-relative first; the decoder output already is.
    """
    target = (poses_mm - poses_mm[:, :1]) / codec.config.coord_scale
    diff = reconstruct_graph(codec, poses_mm, quantize) - target
    return (diff * diff).mean()


def codebook_usage(codec: CodecParams, poses_mm: np.ndarray, batch: int = 1024) -> float:
    """Fraction of the |C| codewords emitted over all token positions."""
    seen = set()
    for lo in range(0, len(poses_mm), batch):
        tokens, _, _ = encode_tokens(poses_mm[lo:lo + batch], codec)
        seen.update(np.unique(tokens).tolist())
    return len(seen) / codec.config.fsq.codebook_size


def train_codec(poses_mm, codec: CodecParams, cfg: CodecTrainConfig,
                state: OptimizerState | None = None, on_epoch=None):
    """Train in place; returns ``(codec, state, log)``.

    ``poses_mm`` is an array (n, J, 3) or anything with a ``coords`` array.
    ``log`` holds one dict per epoch: epoch, step, loss, usage.  Passing a
    ``state`` from an earlier run resumes its step counter and moments.
    """
    poses_mm = np.asarray(getattr(poses_mm, "coords", poses_mm), dtype=np.float64)
    if len(poses_mm) == 0:
        raise DataError("codec training needs a nonempty dataset")
    state = state or OptimizerState(cfg.adamw())
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7, state.step]))
    params = codec.params
    log = []
    n = len(poses_mm)
    bs = min(cfg.batch_size, n)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for lo in range(0, n, bs):
            batch = poses_mm[order[lo:lo + bs]]
            zero_grads(params)
            loss = reconstruction_loss(codec, batch)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"codec loss became {value} at optimizer step {state.step}")
            loss.backward()
            adamw_step(params, collect_grads(params), state)
            total += value * len(batch)
            count += len(batch)
        entry = {"epoch": epoch + 1, "step": state.step, "loss": total / count,
                 "usage": codebook_usage(codec, poses_mm)}
        log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    return codec, state, log
