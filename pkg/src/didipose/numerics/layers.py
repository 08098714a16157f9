"""Layer-level helpers composed from the tensor primitives."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, matmul, reshape, softmax, transpose


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped (in, out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = matmul(x, weight)
    if bias is not None:
        out = out + bias
    return out


def init_linear(rng: np.random.Generator, n_in: int, n_out: int, scale: float | None = None,
                dtype=np.float64) -> tuple[Tensor, Tensor]:
    """Uniform fan-in initialisation (weight, zero bias)."""
    bound = scale if scale is not None else 1.0 / np.sqrt(n_in)
    w = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype), requires_grad=True)
    b = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)
    return w, b


def multi_head_attention(q_src, kv_src, params: dict, prefix: str, heads: int) -> Tensor:
    """Scaled dot-product attention from ``q_src`` (B, Nq, W) to ``kv_src`` (B, Nk, W).

    ``params`` holds ``{prefix}.{q,k,v,o}.{w,b}``.
    """
    q_src, kv_src = as_tensor(q_src), as_tensor(kv_src)
    B, Nq, W = q_src.shape
    Nk = kv_src.shape[1]
    if kv_src.shape[0] != B or kv_src.shape[2] != W:
        raise ShapeError(f"attention: query {q_src.shape} and key/value {kv_src.shape} disagree")
    if W % heads:
        raise ShapeError(f"attention: width {W} not divisible by {heads} heads")
    dh = W // heads

    def split(t, n):
        return transpose(reshape(t, (B, n, heads, dh)), (0, 2, 1, 3))

    p = lambda name: params[f"{prefix}.{name}"]
    q = split(linear(q_src, p("q.w"), p("q.b")), Nq)
    k = split(linear(kv_src, p("k.w"), p("k.b")), Nk)
    v = split(linear(kv_src, p("v.w"), p("v.b")), Nk)
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    att = softmax(scores, axis=-1)
    ctx = reshape(transpose(matmul(att, v), (0, 2, 1, 3)), (B, Nq, W))
    return linear(ctx, p("o.w"), p("o.b"))


def init_attention(rng, width: int, prefix: str, dtype=np.float64) -> dict:
    out = {}
    for name in ("q", "k", "v", "o"):
        w, b = init_linear(rng, width, width, dtype=dtype)
        out[f"{prefix}.{name}.w"], out[f"{prefix}.{name}.b"] = w, b
    return out
