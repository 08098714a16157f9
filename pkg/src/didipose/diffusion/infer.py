"""Reverse process: from an uninformative start to clean tokens to a pose."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..numerics import no_grad
from ..quantizer import CodecParams, decode_pose
from .denoiser import DenoiserParams, denoise_log_probs
from .transition import TransitionParams, log_p_theta_step

INIT_MODES = ("auto", "all-occ", "prior")


def strided_steps(total: int, used: int) -> np.ndarray:
    """Evenly spaced step indices ``S = g_m > ... > g_0 = 0`` with ``m = used``."""
    if not 1 <= used <= total:
        raise ConfigError(f"steps_used must be in 1..{total}, got {used}")
    grid = np.unique(np.round(np.linspace(0, total, used + 1)).astype(np.int64))
    return grid[::-1]


def resolve_init_mode(mode: str, tp: TransitionParams) -> str:
    if mode not in INIT_MODES:
        raise ConfigError(f"init mode must be one of {INIT_MODES}, got {mode!r}")
    if mode == "auto":
        return "all-occ" if tp.schedule.gamma_bar[-1] > 0 else "prior"
    return mode


def initial_tokens(shape, mode: str, tp: TransitionParams, rng) -> np.ndarray:
    mode = resolve_init_mode(mode, tp)
    if mode == "all-occ":
        return np.full(shape, tp.occ, dtype=np.int64)
    prior = tp.schedule.prior()
    return rng.choice(np.arange(1, tp.occ + 1), size=shape, p=prior / prior.sum()).astype(np.int64)


def _gumbel_sample(log_p: np.ndarray, rng) -> np.ndarray:
    g = -np.log(-np.log(rng.random(log_p.shape)))
    return np.argmax(log_p + g, axis=-1) + 1


def infer_tokens(obs_feat, dp: DenoiserParams, tp: TransitionParams, steps_used: int | None = None,
                 init_mode: str = "auto", rng: np.random.Generator | None = None,
                 record_occ: list | None = None) -> np.ndarray:
    """Clean token sequences (B, N) for a batch of observation features.

    Runs the reverse chain over strided steps; any Occ left at the end is
    replaced by the arg-max clean prediction at s = 1.  ``record_occ``
    collects the Occ count after each reverse step when given.
    """
    rng = rng or np.random.default_rng(0)
    obs_feat = np.atleast_2d(np.asarray(obs_feat, dtype=np.float64))
    B, N = len(obs_feat), dp.config.tokens
    grid = strided_steps(tp.steps, steps_used or tp.steps)
    k = initial_tokens((B, N), init_mode, tp, rng)
    with no_grad():
        for s, t in zip(grid[:-1], grid[1:]):
            log_f = denoise_log_probs(k, s, obs_feat, dp)
            log_p = log_p_theta_step(log_f, k, np.full(B, s), tp, np.full(B, t))
            k = _gumbel_sample(log_p.data, rng)
            if record_occ is not None:
                record_occ.append(int(np.sum(k == tp.occ)))
        occ = k == tp.occ
        if occ.any():
            best = np.argmax(denoise_log_probs(k, 1, obs_feat, dp).data, axis=-1) + 1
            k = np.where(occ, best, k)
    return k.astype(np.int64)


def infer(obs_feat, dp: DenoiserParams, tp: TransitionParams, codec: CodecParams,
          steps_used: int | None = None, init_mode: str = "auto",
          rng: np.random.Generator | None = None, batch: int = 256) -> np.ndarray:
    """Predicted root-relative poses (B, J, 3) in millimetres."""
    obs_feat = np.atleast_2d(np.asarray(obs_feat, dtype=np.float64))
    rng = rng or np.random.default_rng(0)
    out = []
    for lo in range(0, len(obs_feat), batch):
        tokens = infer_tokens(obs_feat[lo:lo + batch], dp, tp, steps_used, init_mode, rng)
        out.append(decode_pose(tokens, codec))
    if not out:
        return np.zeros((0, codec.config.joints, 3))
    return np.concatenate(out, axis=0)
