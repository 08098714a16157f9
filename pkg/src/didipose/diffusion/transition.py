"""Occlude-and-replace transition algebra over |C| codewords plus Occ.

Tokens are 1-based: codewords 1..|C|, Occ = |C|+1.  Distribution vectors
are 0-based arrays of length |C|+1 whose last entry is Occ.  Corruption is
factorised over token positions.

Nothing here materialises a cumulative matrix: ``q(k_s | k_0)`` is built from
the stored (alpha_bar, beta_bar, gamma_bar) in O(|C|).
"""
from __future__ import annotations

import numpy as np

from ..errors import ImpossibleEventError, TokenRangeError
from ..numerics import Tensor, make_op
from .schedule import Schedule

# Stand-in for log(0) inside differentiable graphs: exp() of it is ~1e-304,
# far below every tolerance, and it keeps 0 * log p finite.
LOG_ZERO = -700.0


class TransitionParams:
    """A schedule viewed as the family of transition matrices it defines."""

    def __init__(self, schedule: Schedule):
        self.schedule = schedule

    @property
    def codebook_size(self) -> int:
        return self.schedule.codebook_size

    @property
    def occ(self) -> int:
        return self.schedule.codebook_size + 1

    @property
    def steps(self) -> int:
        return self.schedule.steps


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _check_clean(k0, C):
    k0 = np.asarray(k0, dtype=np.int64)
    if np.any(k0 < 1) or np.any(k0 > C + 1):
        raise TokenRangeError(f"token outside 1..{C + 1}")
    if np.any(k0 == C + 1):
        raise TokenRangeError("clean tokens k_0 can never be Occ")
    return k0


def _check_any(k, C):
    k = np.asarray(k, dtype=np.int64)
    if np.any(k < 1) or np.any(k > C + 1):
        raise TokenRangeError(f"token outside 1..{C + 1}")
    return k


def transition_matrix(tp: TransitionParams, s: int, t: int | None = None) -> np.ndarray:
    """Dense column-stochastic ``M[i, j] = q(k_s = i | k_t = j)`` (default t = s-1)."""
    C = tp.codebook_size
    t = s - 1 if t is None else t
    a, b, g = (float(v) for v in tp.schedule.transition(t, s))
    m = np.zeros((C + 1, C + 1))
    m[:C, :C] = b
    m[np.arange(C), np.arange(C)] += a
    m[C, :C] = g
    m[C, C] = 1.0
    return m


def cumulative_forward(k0, s, tp: TransitionParams) -> np.ndarray:
    """``q(k_s | k_0)`` over |C|+1 symbols; broadcasts over array inputs.

    Mass ``alpha_bar + beta_bar`` at k_0, ``beta_bar`` at every other codeword,
    ``gamma_bar`` at Occ.
    """
    sch = tp.schedule
    C = tp.codebook_size
    k0 = _check_clean(k0, C)
    s = np.asarray(s, dtype=np.int64)
    shape = np.broadcast_shapes(k0.shape, s.shape)
    k0 = np.broadcast_to(k0, shape)
    s = np.broadcast_to(s, shape)
    out = np.empty(shape + (C + 1,))
    out[..., :C] = sch.beta_bar[s][..., None]
    out[..., C] = sch.gamma_bar[s]
    np.put_along_axis(out, (k0 - 1)[..., None],
                      np.take_along_axis(out, (k0 - 1)[..., None], -1) + sch.alpha_bar[s][..., None],
                      axis=-1)
    return out


def sample_forward(k0_seq, s, tp: TransitionParams, rng: np.random.Generator) -> np.ndarray:
    """Draw ``k_s ~ q(k_s | k_0)`` independently per position.

    ``s`` is a scalar or one step per sequence (leading axis of ``k0_seq``).
    Each position keeps its token with probability alpha_bar, is replaced by a
    uniform codeword with probability |C| beta_bar, or becomes Occ.
    """
    sch = tp.schedule
    C = tp.codebook_size
    k0 = _check_clean(k0_seq, C)
    s = np.asarray(s, dtype=np.int64)
    if s.ndim:
        s = s.reshape(s.shape + (1,) * (k0.ndim - s.ndim))
    keep = np.broadcast_to(sch.alpha_bar[s], k0.shape)
    occ = np.broadcast_to(sch.gamma_bar[s], k0.shape)
    u = rng.random(k0.shape)
    repl = rng.integers(1, C + 1, size=k0.shape)
    out = np.where(u < keep, k0, repl)
    out = np.where(u >= 1.0 - occ, C + 1, out)
    out = np.where(np.asarray(s) == 0, k0, out)
    return out.astype(np.int64)


def _put_hit(out, idx, values):
    np.put_along_axis(out, idx[..., None], values[..., None], axis=-1)


def _log_forward(k0, step, sch: Schedule, C: int) -> np.ndarray:
    """log q(k_step | k_0) for every symbol, shape k0.shape + (C+1,)."""
    step = np.broadcast_to(step, k0.shape)
    out = np.empty(k0.shape + (C + 1,))
    out[..., :C] = _log(sch.beta_bar[step])[..., None]
    out[..., C] = _log(sch.gamma_bar[step])
    _put_hit(out, k0 - 1, _log(sch.alpha_bar[step] + sch.beta_bar[step]))
    return out


def _log_row(ks, a, b, g, C: int) -> np.ndarray:
    """log M[k_s, :] of a keep/replace/occlude matrix, shape ks.shape + (C+1,)."""
    a, b, g = (np.broadcast_to(v, ks.shape) for v in (a, b, g))
    is_occ = ks == C + 1
    out = np.empty(ks.shape + (C + 1,))
    out[..., :C] = np.where(is_occ, _log(g), _log(b))[..., None]
    out[..., C] = np.where(is_occ, 0.0, -np.inf)
    # Occ rows have no diagonal entry; writing log g at index 0 is a no-op.
    _put_hit(out, np.where(is_occ, 0, ks - 1), np.where(is_occ, _log(g), _log(a + b)))
    return out


def _steps(s, t, shape):
    s = np.broadcast_to(np.asarray(s, dtype=np.int64), shape)
    t = s - 1 if t is None else np.broadcast_to(np.asarray(t, dtype=np.int64), shape)
    return s, t


def log_posterior(k_s, k0, s, tp: TransitionParams, t=None) -> np.ndarray:
    """``log q(k_t | k_s, k_0)`` (default t = s-1), normalised with max-subtraction.

    Broadcasts over arrays of tokens; ``s``/``t`` broadcast against them.
    Raises ``ImpossibleEventError`` where ``q(k_s | k_0) = 0``.
    """
    sch = tp.schedule
    C = tp.codebook_size
    k_s = _check_any(k_s, C)
    k0 = _check_clean(k0, C)
    shape = np.broadcast_shapes(k_s.shape, k0.shape, np.shape(s))
    k_s, k0 = np.broadcast_to(k_s, shape), np.broadcast_to(k0, shape)
    s, t = _steps(s, t, shape)
    if np.any(s < 1) or np.any(s > sch.steps) or np.any(t < 0) or np.any(t >= s):
        raise ValueError("posterior needs 0 <= t < s <= S")
    a, b, g = sch.transition(t, s)
    log_num = _log_row(k_s, a, b, g, C) + _log_forward(k0, t, sch, C)
    m = np.max(log_num, axis=-1, keepdims=True)
    if np.any(~np.isfinite(m)):
        raise ImpossibleEventError("q(k_s | k_0) = 0: the observed k_s cannot follow this k_0")
    z = np.log(np.exp(log_num - m).sum(axis=-1, keepdims=True)) + m
    return log_num - z


def posterior(k_s, k0, s, tp: TransitionParams, t=None) -> np.ndarray:
    """``q(k_{s-1} | k_s, k_0)`` as probabilities over |C|+1 symbols."""
    return np.exp(log_posterior(k_s, k0, s, tp, t))


def log_p_theta_step(log_f: Tensor, k_s, s, tp: TransitionParams, t=None) -> Tensor:
    """Differentiable ``log f_theta(k_t | k_s, y)`` from the clean-token prediction.

    ``log_f`` (B, N, |C|) are log-probabilities of k_0.  The reverse step mixes
    the analytic posteriors ``q(k_t | k_s, k_0)`` with weights ``f(k_0)``.
    Hypotheses with ``q(k_s | k_0) = 0`` get zero weight and the mixture is
    renormalised.  Closed form used (w = f / q(k_s | k_0), W = sum w)::

        f(k_t = j) ~ M[k_s, j] * (alpha_bar_t w_j + beta_bar_t W)   j <= |C|
        f(k_t = Occ) ~ M[k_s, Occ] * gamma_bar_t W
    """
    sch = tp.schedule
    C = tp.codebook_size
    k_s = _check_any(k_s, C)
    B, N, K = log_f.shape
    if K != C or k_s.shape != (B, N):
        raise ValueError(f"log_f {log_f.shape} / k_s {k_s.shape} do not match |C|={C}")
    s = np.broadcast_to(np.asarray(s, dtype=np.int64).reshape(-1, 1), (B, 1))
    t = s - 1 if t is None else np.broadcast_to(np.asarray(t, dtype=np.int64).reshape(-1, 1), (B, 1))
    a, b, g = sch.transition(t, s)                      # (B, 1)
    ab_s, bb_s, gb_s = sch.alpha_bar[s], sch.beta_bar[s], sch.gamma_bar[s]
    is_occ = k_s == C + 1                                # (B, N)
    hit_idx = np.where(is_occ, 0, k_s - 1)
    # q(k_s | k_0) over k_0: one value off the diagonal, another on it.
    q_off = np.where(is_occ, gb_s, bb_s)
    q_hit = np.where(is_occ, gb_s, ab_s + bb_s)
    if np.any(q_hit <= 0):
        raise ImpossibleEventError("k_s is unreachable from every clean token at this step")
    off_ok = q_off > 0
    log_w = log_f.data - np.where(off_ok, _log(np.where(off_ok, q_off, 1.0)), 0.0)[..., None]
    log_w[~off_ok] = LOG_ZERO
    hit_f = np.take_along_axis(log_f.data, hit_idx[..., None], axis=-1)[..., 0]
    _put_hit(log_w, hit_idx, hit_f - _log(q_hit))

    ab_t, bb_t, gb_t = (v[..., None] for v in (sch.alpha_bar[t], sch.beta_bar[t], sch.gamma_bar[t]))
    row = np.maximum(_log_row(k_s, a, b, g, C), LOG_ZERO)

    # Fused forward/backward: the mixture touches (B, N, |C|) arrays only a
    # handful of times instead of once per elementary op.
    m = log_w.max(axis=-1, keepdims=True)
    e = np.exp(log_w - m)
    w_sum = e.sum(axis=-1, keepdims=True)                # >= 1
    d = ab_t * e + bb_t * w_sum
    z = np.empty((B, N, C + 1))
    z[..., :C] = _log(d) + m
    z[..., C:] = _log(gb_t * w_sum) + m
    live = z > LOG_ZERO
    np.maximum(z, LOG_ZERO, out=z)
    z += row
    zm = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zm)
    norm = ez.sum(axis=-1, keepdims=True)
    out = z - (np.log(norm) + zm)

    def rule(grad):
        gz = (grad - (ez / norm) * grad.sum(axis=-1, keepdims=True)) * live
        gc = gz[..., :C]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(d > 0, gc / d, 0.0)
        shared = bb_t * r.sum(axis=-1, keepdims=True) + gz[..., C:] / w_sum
        gw = e * (ab_t * r + shared)
        hit_g = np.take_along_axis(gw, hit_idx[..., None], axis=-1)[..., 0]
        gw[~off_ok] = 0.0
        _put_hit(gw, hit_idx, hit_g)
        return (gw,)

    return make_op(out, (log_f,), rule, "log_p_theta_step")


def prior_kl(k0, tp: TransitionParams) -> np.ndarray:
    """``KL(q(k_S | k_0) || p(k_S))`` per token, with p(k_S) = [beta_bar_S.., gamma_bar_S].

    ``q(k_S | k_0)`` is a permutation of the same vector for every clean k_0,
    so the divergence is one number broadcast to ``k0``'s shape.
    """
    C = tp.codebook_size
    k0 = _check_clean(k0, C)
    q = cumulative_forward(1, tp.steps, tp)
    p = tp.schedule.prior()
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * (np.log(q) - np.log(p)), 0.0)
    return np.full(k0.shape, terms.sum())
