"""Pose codec: Local-MLP encoder, FSQ bottleneck, Local-MLP decoder.

Features are held joint-major, (batch, J, D); the joint shift moves channel
segments along the joint axis.  Networks work in metres (``coord_scale`` mm
per unit) and all public functions take and return millimetres.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, ShapeError, TokenRangeError
from ..numerics import (
    Tensor, as_tensor, gelu, init_linear, layer_norm, linear, make_op, no_grad,
    swapaxes,
)
from .fsq import FSQConfig, bound, code_to_index, index_to_code, quantize_ste


@dataclass(frozen=True)
class CodecConfig:
    joints: int = 17
    levels: tuple[int, ...] = (7, 5, 5, 5, 5)
    local_joints: int = 3
    tokens: int = 16
    enc_width: int = 120
    dec_width: int = 60
    enc_blocks: int = 4
    dec_blocks: int = 1
    mlp_ratio: int = 2
    coord_scale: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        FSQConfig(self.levels)
        X = self.local_joints
        if X < 1 or X % 2 == 0:
            raise ConfigError(f"local_joints X={X} must be odd and >= 1")
        if X > self.joints:
            raise ConfigError(f"local_joints X={X} exceeds joint count {self.joints}")
        for label in ("enc_width", "dec_width"):
            width = getattr(self, label)
            if width % X:
                raise ConfigError(f"{label}={width} is not divisible by local_joints X={X}")
        for label in ("joints", "tokens", "enc_width", "dec_width", "mlp_ratio"):
            if getattr(self, label) < 1:
                raise ConfigError(f"{label} must be positive")
        if self.enc_blocks < 0 or self.dec_blocks < 0 or self.coord_scale <= 0:
            raise ConfigError("block counts must be >= 0 and coord_scale > 0")

    @property
    def fsq(self) -> FSQConfig:
        return FSQConfig(self.levels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d


def _shift_last2(data: np.ndarray, X: int, sign: int) -> np.ndarray:
    """Shift channel segments of a (..., J, D) array along J by ``sign * offset``."""
    J, D = data.shape[-2:]
    seg = D // X
    out = np.zeros_like(data)
    for g in range(X):
        off = sign * (g - X // 2)
        c = slice(g * seg, (g + 1) * seg)
        if off == 0:
            out[..., :, c] = data[..., :, c]
        elif off > 0 and off < J:
            out[..., off:, c] = data[..., :J - off, c]
        elif off < 0 and -off < J:
            out[..., :J + off, c] = data[..., -off:, c]
    return out


def _check_shift(D: int, X: int):
    if X < 1 or X % 2 == 0:
        raise ShapeError(f"joint_shift: X={X} must be odd")
    if D % X:
        raise ShapeError(f"joint_shift: {D} channels not divisible into {X} segments")


def joint_shift_jd(features, X: int) -> Tensor:
    """Joint shift on joint-major features (..., J, D)."""
    x = as_tensor(features)
    _check_shift(x.shape[-1], X)
    return make_op(_shift_last2(x.data, X, +1), (x,),
                   lambda g: (_shift_last2(g, X, -1),), "joint_shift")


def joint_shift(features, X: int) -> Tensor:
    """Joint shift on channel-major features (..., D, J).

    Channels split into X equal contiguous segments; segment g moves along the
    joint axis by ``g - X//2`` (positive = towards higher joint index) and the
    vacated positions are zero.
    """
    x = as_tensor(features)
    return swapaxes(joint_shift_jd(swapaxes(x, -1, -2), X), -1, -2)


def _init_block(rng, prefix: str, width: int, ratio: int) -> dict:
    p = {f"{prefix}.ln.g": Tensor(np.ones(width), requires_grad=True),
         f"{prefix}.ln.b": Tensor(np.zeros(width), requires_grad=True)}
    for name, n_in, n_out in (("js_in", width, width), ("js_out", width, width),
                              ("fc1", width, ratio * width), ("fc2", ratio * width, width)):
        p[f"{prefix}.{name}.w"], p[f"{prefix}.{name}.b"] = init_linear(rng, n_in, n_out)
    return p


def local_mlp_block(x, params: dict, prefix: str, X: int) -> Tensor:
    """``x + ChannelMLP(JSBlock(LayerNorm(x)))`` on (..., J, D) features."""
    x = as_tensor(x)
    p = lambda name: params[f"{prefix}.{name}"]
    if x.shape[-1] != p("ln.g").shape[0]:
        raise ShapeError(f"local_mlp_block {prefix}: width {x.shape[-1]} != {p('ln.g').shape[0]}")
    h = layer_norm(x, p("ln.g"), p("ln.b"))
    h = linear(h, p("js_in.w"), p("js_in.b"))
    h = joint_shift_jd(h, X)
    h = linear(h, p("js_out.w"), p("js_out.b"))
    h = gelu(linear(h, p("fc1.w"), p("fc1.b")))
    h = linear(h, p("fc2.w"), p("fc2.b"))
    return x + h


class CodecParams:
    """Codec weights (name -> Tensor) plus the configuration that shapes them."""

    def __init__(self, config: CodecConfig, params: dict):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: CodecConfig, rng: np.random.Generator) -> "CodecParams":
        c = config
        p = {}
        p["embed.w"], p["embed.b"] = init_linear(rng, 3, c.enc_width)
        for i in range(c.enc_blocks):
            p.update(_init_block(rng, f"enc.{i}", c.enc_width, c.mlp_ratio))
        p["token_mix.w"], p["token_mix.b"] = init_linear(rng, c.joints, c.tokens)
        p["proj.w"], p["proj.b"] = init_linear(rng, c.enc_width, c.fsq.dim)
        p["unproj.w"], p["unproj.b"] = init_linear(rng, c.fsq.dim, c.dec_width)
        p["token_unmix.w"], p["token_unmix.b"] = init_linear(rng, c.tokens, c.joints)
        for i in range(c.dec_blocks):
            p.update(_init_block(rng, f"dec.{i}", c.dec_width, c.mlp_ratio))
        p["readout.w"], p["readout.b"] = init_linear(rng, c.dec_width, 3)
        return cls(config, p)

    def arrays(self) -> dict:
        return {k: v.data for k, v in self.params.items()}

    @classmethod
    def from_arrays(cls, config: CodecConfig, arrays: dict) -> "CodecParams":
        ref = cls.init(config, np.random.default_rng(0)).params
        if set(ref) != set(arrays):
            missing = sorted(set(ref) ^ set(arrays))
            raise ShapeError(f"codec parameter set mismatch: {missing[:5]}")
        params = {}
        for name, t in ref.items():
            if arrays[name].shape != t.shape:
                raise ShapeError(f"codec parameter {name}: {arrays[name].shape} != {t.shape}")
            params[name] = Tensor(np.array(arrays[name], dtype=np.float64), requires_grad=True)
        return cls(config, params)


def _mix_axis(h: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Linear map across the second-to-last axis: (B, A, D) -> (B, A', D)."""
    return swapaxes(linear(swapaxes(h, -1, -2), w, b), -1, -2)


def _as_batch(poses) -> tuple[np.ndarray, bool]:
    arr = np.asarray(getattr(poses, "coords", poses), dtype=np.float64)
    single = arr.ndim == 2
    return (arr[None] if single else arr), single


def encoder_features(codec: CodecParams, poses_mm: np.ndarray) -> tuple[Tensor, Tensor]:
    """Token features F (B, N, D) and pre-quantization vectors Q (B, N, d)."""
    c, p = codec.config, codec.params
    if poses_mm.shape[-2:] != (c.joints, 3):
        raise ShapeError(f"codec expects poses (B, {c.joints}, 3), got {poses_mm.shape}")
    x = Tensor(poses_mm / c.coord_scale)
    h = linear(x, p["embed.w"], p["embed.b"])
    for i in range(c.enc_blocks):
        h = local_mlp_block(h, p, f"enc.{i}", c.local_joints)
    feats = _mix_axis(h, p["token_mix.w"], p["token_mix.b"])
    q = linear(feats, p["proj.w"], p["proj.b"])
    return feats, q


def code_to_token_feature(code, codec: CodecParams) -> Tensor:
    """Decoder-side token feature ``unproj(code)``, (..., dec_width)."""
    p = codec.params
    return linear(as_tensor(code), p["unproj.w"], p["unproj.b"])


def decoder_from_codes(codec: CodecParams, codes) -> Tensor:
    """Root-relative poses in network units from codes (B, N, d)."""
    c, p = codec.config, codec.params
    t = code_to_token_feature(codes, codec)
    h = _mix_axis(t, p["token_unmix.w"], p["token_unmix.b"])
    for i in range(c.dec_blocks):
        h = local_mlp_block(h, p, f"dec.{i}", c.local_joints)
    out = linear(h, p["readout.w"], p["readout.b"])
    root = out[:, :1, :]
    return out - root


def reconstruct_graph(codec: CodecParams, poses_mm: np.ndarray, quantize: bool = True) -> Tensor:
    """Differentiable encode -> FSQ -> decode, in network units.

    ``quantize=False`` skips the rounding (smooth surrogate used for
    finite-difference checks).
    """
    fsq = codec.config.fsq
    _, q = encoder_features(codec, poses_mm)
    codes = quantize_ste(q, fsq) if quantize else bound(q, fsq)
    return decoder_from_codes(codec, codes)


def encode_tokens(poses, codec: CodecParams):
    """Tokens (B, N) in 1..|C|, features F and pre-quantization Q.

    A single (J, 3) pose gives unbatched outputs.
    """
    arr, single = _as_batch(poses)
    fsq = codec.config.fsq
    with no_grad():
        feats, q = encoder_features(codec, arr)
        codes = quantize_ste(q, fsq).data.astype(np.int64)
    tokens = code_to_index(codes, fsq)
    if single:
        return tokens[0], feats.data[0], q.data[0]
    return tokens, feats.data, q.data


def decode_pose(tokens, codec: CodecParams) -> np.ndarray:
    """Poses (B, J, 3) in millimetres from clean tokens (B, N)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None]
    fsq = codec.config.fsq
    if tokens.shape[-1] != codec.config.tokens:
        raise ShapeError(f"decoder expects {codec.config.tokens} tokens, got {tokens.shape[-1]}")
    if np.any(tokens == fsq.codebook_size + 1):
        raise TokenRangeError("Occ token passed to the pose decoder; resolve it first")
    codes = index_to_code(tokens, fsq).astype(np.float64)
    with no_grad():
        out = decoder_from_codes(codec, codes).data * codec.config.coord_scale
    return out[0] if single else out
