"""Finite scalar quantization with an implicit, enumerable codebook.

Channel ``i`` is bounded by ``floor(L_i/2) * tanh(q_i)`` and rounded to one of
the ``L_i`` integers ``-floor(L_i/2) .. floor(L_i/2)``.  Codes map to indices
``1 .. prod(L)`` in mixed radix with the first channel least significant::

    index = 1 + sum_i (code_i + floor(L_i/2)) * prod_{j<i} L_j
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NonFiniteError, TokenRangeError
from ..numerics import Tensor, mul, round_ste, tanh


@dataclass(frozen=True)
class FSQConfig:
    levels: tuple[int, ...] = (7, 5, 5, 5, 5)

    def __post_init__(self):
        levels = tuple(int(L) for L in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ConfigError("FSQ needs at least one channel")
        for L in levels:
            if L < 3 or L % 2 == 0:
                raise ConfigError(f"FSQ level {L} must be an odd integer >= 3")

    @property
    def dim(self) -> int:
        return len(self.levels)

    @property
    def codebook_size(self) -> int:
        return int(np.prod(self.levels, dtype=np.int64))

    @property
    def half(self) -> np.ndarray:
        return np.array([L // 2 for L in self.levels], dtype=np.int64)

    @property
    def radix(self) -> np.ndarray:
        return np.concatenate([[1], np.cumprod(self.levels[:-1])]).astype(np.int64)


def bound(q, fsq: FSQConfig) -> Tensor:
    """``floor(L/2) * tanh(q)`` per channel, differentiable."""
    return mul(tanh(q), fsq.half.astype(np.float64))


def quantize_ste(q, fsq: FSQConfig) -> Tensor:
    """Rounded bounded codes; gradient flows as if rounding were absent."""
    return round_ste(bound(q, fsq))


def code_to_index(code, fsq: FSQConfig) -> np.ndarray:
    code = np.asarray(code, dtype=np.int64)
    if code.shape[-1] != fsq.dim:
        raise TokenRangeError(f"code has {code.shape[-1]} channels, FSQ expects {fsq.dim}")
    if np.any(np.abs(code) > fsq.half):
        raise TokenRangeError("code value outside the FSQ level range")
    return 1 + ((code + fsq.half) * fsq.radix).sum(axis=-1)


def index_to_code(index, fsq: FSQConfig) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    if np.any(index < 1) or np.any(index > fsq.codebook_size):
        raise TokenRangeError(f"token index outside 1..{fsq.codebook_size}")
    rem = index - 1
    digits = (rem[..., None] // fsq.radix) % np.asarray(fsq.levels)
    return digits - fsq.half


def fsq_quantize(q_vec, fsq: FSQConfig) -> tuple[np.ndarray, np.ndarray]:
    """Integer codes and 1-based indices for pre-quantization vectors (..., d)."""
    q = np.asarray(q_vec, dtype=np.float64)
    if q.shape[-1] != fsq.dim:
        raise TokenRangeError(f"vector has {q.shape[-1]} channels, FSQ expects {fsq.dim}")
    if not np.all(np.isfinite(q)):
        raise NonFiniteError("fsq_quantize: input must be finite")
    code = np.round(fsq.half * np.tanh(q)).astype(np.int64)
    idx = code_to_index(code, fsq)
    if code.ndim == 1:
        return code, int(idx)
    return code, idx
