"""Conditional transformer predicting clean-token distributions.

Each block applies step-modulated layer norm before self-attention over the
token sequence, cross-attention to the condition tokens and a feed-forward
layer.  The condition tokens come from a two-layer network over the
flattened 2D observation with hidden joints zeroed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, ShapeError, TokenRangeError
from ..numerics import (
    Tensor, embedding_lookup, gelu, init_attention, init_linear, layer_norm, linear,
    log_softmax, multi_head_attention, reshape,
)


@dataclass(frozen=True)
class DenoiserConfig:
    codebook_size: int = 4375
    tokens: int = 16
    steps: int = 100
    joints: int = 17
    width: int = 64
    heads: int = 4
    blocks: int = 2
    cond_tokens: int = 4
    cond_hidden: int = 128
    ff_ratio: int = 4
    cond_pos: bool = False
    coord_scale: float = 1000.0

    def __post_init__(self):
        for label in ("codebook_size", "tokens", "steps", "joints", "width", "heads",
                      "cond_tokens", "cond_hidden", "ff_ratio"):
            if getattr(self, label) < 1:
                raise ConfigError(f"denoiser {label} must be positive")
        if self.blocks < 0:
            raise ConfigError("denoiser blocks must be >= 0")
        if self.width % self.heads:
            raise ConfigError(f"denoiser width {self.width} not divisible by heads {self.heads}")

    @property
    def occ(self) -> int:
        return self.codebook_size + 1

    def to_dict(self) -> dict:
        return asdict(self)


def _adaln_params(rng, prefix, width):
    # Zero-initialised modulation: gain starts at 1, bias at 0.
    zero = lambda *shape: Tensor(np.zeros(shape), requires_grad=True)
    return {f"{prefix}.gain.w": zero(width, width), f"{prefix}.gain.b": zero(width),
            f"{prefix}.bias.w": zero(width, width), f"{prefix}.bias.b": zero(width)}


class DenoiserParams:
    """Named parameter tensors plus the config that shapes them."""

    def __init__(self, config: DenoiserConfig, params: dict):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: DenoiserConfig, rng: np.random.Generator) -> "DenoiserParams":
        W, c = config.width, config
        p = {
            "tok_emb": Tensor(rng.normal(0, 0.02, (c.codebook_size + 1, W)), requires_grad=True),
            "pos_emb": Tensor(rng.normal(0, 0.02, (c.tokens, W)), requires_grad=True),
            "step_emb": Tensor(rng.normal(0, 0.02, (c.steps + 1, W)), requires_grad=True),
        }
        p["cond.fc1.w"], p["cond.fc1.b"] = init_linear(rng, 3 * c.joints, c.cond_hidden)
        p["cond.fc2.w"], p["cond.fc2.b"] = init_linear(rng, c.cond_hidden, c.cond_tokens * W)
        if c.cond_pos:
            p["cond.pos"] = Tensor(rng.normal(0, 0.02, (c.cond_tokens, W)), requires_grad=True)
        for i in range(c.blocks):
            b = f"blk{i}"
            for ln in ("ln1", "ln2", "ln3"):
                p.update(_adaln_params(rng, f"{b}.{ln}", W))
            p.update(init_attention(rng, W, f"{b}.self"))
            p.update(init_attention(rng, W, f"{b}.cross"))
            p[f"{b}.ff1.w"], p[f"{b}.ff1.b"] = init_linear(rng, W, c.ff_ratio * W)
            p[f"{b}.ff2.w"], p[f"{b}.ff2.b"] = init_linear(rng, c.ff_ratio * W, W)
        p.update(_adaln_params(rng, "final", W))
        p["head.w"], p["head.b"] = init_linear(rng, W, c.codebook_size)
        return cls(config, p)

    def arrays(self) -> dict:
        return {k: v.data for k, v in self.params.items()}

    @classmethod
    def from_arrays(cls, config: DenoiserConfig, arrays: dict) -> "DenoiserParams":
        ref = cls.init(config, np.random.default_rng(0))
        missing = set(ref.params) ^ set(arrays)
        if missing:
            raise ShapeError(f"denoiser parameter names do not match config: {sorted(missing)[:5]}")
        params = {}
        for k, v in arrays.items():
            if v.shape != ref.params[k].shape:
                raise ShapeError(f"denoiser parameter {k} has shape {v.shape}, expected {ref.params[k].shape}")
            params[k] = Tensor(np.array(v, dtype=np.float64), requires_grad=True)
        return cls(config, params)


def observation_features(proj2d, visible, coord_scale: float) -> np.ndarray:
    """Flattened (2J coordinates in metres, J visibility flags); hidden joints zeroed."""
    proj2d = np.asarray(proj2d, dtype=np.float64)
    visible = np.asarray(visible, dtype=bool)
    if proj2d.ndim == 2:
        proj2d, visible = proj2d[None], visible[None]
    coords = proj2d - proj2d[:, :1]
    coords = np.where(visible[..., None], coords, 0.0) / coord_scale
    B = coords.shape[0]
    return np.concatenate([coords.reshape(B, -1), visible.reshape(B, -1).astype(np.float64)], axis=1)


def encode_condition(obs_feat, dp: DenoiserParams) -> Tensor:
    """Observation features (B, 3J) to condition tokens (B, M, W)."""
    c, p = dp.config, dp.params
    obs_feat = np.asarray(obs_feat, dtype=np.float64)
    if obs_feat.ndim != 2 or obs_feat.shape[1] != 3 * c.joints:
        raise ShapeError(f"observation features {obs_feat.shape} do not match {c.joints} joints")
    h = gelu(linear(obs_feat, p["cond.fc1.w"], p["cond.fc1.b"]))
    cond = reshape(linear(h, p["cond.fc2.w"], p["cond.fc2.b"]), (len(obs_feat), c.cond_tokens, c.width))
    if c.cond_pos:
        cond = cond + p["cond.pos"]
    return cond


def _adaln(x, emb, p, prefix):
    gain = linear(emb, p[f"{prefix}.gain.w"], p[f"{prefix}.gain.b"]) + 1.0
    bias = linear(emb, p[f"{prefix}.bias.w"], p[f"{prefix}.bias.b"])
    return layer_norm(x) * gain + bias


def denoise_from_condition(k_s, s, cond: Tensor, dp: DenoiserParams) -> Tensor:
    """Logits (B, N, |C|) of ``f(k_0 | k_s, y)`` given encoded condition tokens."""
    c, p = dp.config, dp.params
    k_s = np.asarray(k_s, dtype=np.int64)
    if k_s.ndim == 1:
        k_s = k_s[None]
    B, N = k_s.shape
    if N != c.tokens:
        raise ShapeError(f"denoiser expects {c.tokens} tokens, got {N}")
    if k_s.min() < 1 or k_s.max() > c.occ:
        raise TokenRangeError(f"token outside 1..{c.occ}")
    s = np.broadcast_to(np.asarray(s, dtype=np.int64).reshape(-1), (B,))
    if s.min() < 1 or s.max() > c.steps:
        raise ShapeError(f"step outside 1..{c.steps}")
    if cond.shape[0] != B:
        raise ShapeError(f"condition batch {cond.shape[0]} != token batch {B}")
    x = embedding_lookup(p["tok_emb"], k_s - 1) + p["pos_emb"]
    emb = reshape(embedding_lookup(p["step_emb"], s), (B, 1, c.width))
    for i in range(c.blocks):
        b = f"blk{i}"
        h = _adaln(x, emb, p, f"{b}.ln1")
        x = x + multi_head_attention(h, h, p, f"{b}.self", c.heads)
        h = _adaln(x, emb, p, f"{b}.ln2")
        x = x + multi_head_attention(h, cond, p, f"{b}.cross", c.heads)
        h = _adaln(x, emb, p, f"{b}.ln3")
        x = x + linear(gelu(linear(h, p[f"{b}.ff1.w"], p[f"{b}.ff1.b"])), p[f"{b}.ff2.w"], p[f"{b}.ff2.b"])
    return linear(_adaln(x, emb, p, "final"), p["head.w"], p["head.b"])


def denoise_logits(k_s, s, obs_feat, dp: DenoiserParams) -> Tensor:
    """Logits of ``f(k_0 | k_s, y)`` from raw observation features."""
    return denoise_from_condition(k_s, s, encode_condition(obs_feat, dp), dp)


def denoise_log_probs(k_s, s, obs_feat, dp: DenoiserParams) -> Tensor:
    return log_softmax(denoise_logits(k_s, s, obs_feat, dp), axis=-1)
