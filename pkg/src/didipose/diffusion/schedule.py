"""Keep / replace / occlude schedules.

A single token stays put with probability ``alpha_s``, is resampled uniformly
over the |C| codewords with total probability ``|C| * beta_s`` and turns into
the absorbing Occ symbol with probability ``gamma_s``.  Cumulative values
(bars) compose as

    alpha_bar_s = prod alpha_i,   1 - gamma_bar_s = prod (1 - gamma_i),
    beta_bar_s  = (1 - alpha_bar_s - gamma_bar_s) / |C|.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ScheduleInfeasibleError

ALPHA_FLOOR = 1e-8
_TOL = 1e-12


def _snap(residual: np.ndarray) -> np.ndarray:
    # Round-off residue of 1 - alpha - gamma becomes an exact zero, so the
    # occlude-only family has no replacement mass at all.
    return np.where(np.abs(residual) < 1e-15, 0.0, residual)


def _check_unit(name: str, values: np.ndarray):
    bad = np.nonzero((values < -_TOL) | (values > 1 + _TOL) | ~np.isfinite(values))[0]
    if bad.size:
        s = int(bad[0])
        raise ScheduleInfeasibleError(
            f"{name} at step {s} is {values[s]!r}, outside [0, 1]")
    return np.clip(values, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class Schedule:
    """Per-step and cumulative transition probabilities for steps 0..S.

    Index 0 holds identity values (alpha 1, beta 0, gamma 0).
    """

    codebook_size: int
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    alpha_bar: np.ndarray
    beta_bar: np.ndarray
    gamma_bar: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.alpha) - 1

    @property
    def occ(self) -> int:
        """1-based index of the Occ symbol."""
        return self.codebook_size + 1

    @classmethod
    def from_cumulative(cls, alpha_bar, gamma_bar, codebook_size: int) -> "Schedule":
        """Recover per-step values from cumulative arrays of length S+1."""
        C = int(codebook_size)
        ab = np.asarray(alpha_bar, dtype=np.float64)
        gb = np.asarray(gamma_bar, dtype=np.float64)
        if ab.shape != gb.shape or ab.ndim != 1 or len(ab) < 2:
            raise ConfigError("cumulative schedule arrays must be 1-D with S+1 >= 2 entries")
        if ab[0] != 1.0 or gb[0] != 0.0:
            raise ConfigError("cumulative schedule must start at alpha_bar=1, gamma_bar=0")
        bb = _check_unit("replace mass |C|*beta_bar", _snap(1.0 - ab - gb)) / C
        with np.errstate(divide="ignore", invalid="ignore"):
            alpha = np.where(ab[:-1] > 0, ab[1:] / ab[:-1], 0.0)
            keep = np.where(gb[:-1] < 1, (1.0 - gb[1:]) / (1.0 - gb[:-1]), 0.0)
        alpha = np.concatenate([[1.0], alpha])
        gamma = np.concatenate([[0.0], 1.0 - keep])
        beta = _snap(1.0 - alpha - gamma) / C
        alpha = _check_unit("per-step alpha", alpha)
        gamma = _check_unit("per-step gamma", gamma)
        beta = _check_unit("per-step beta", beta)
        return cls(C, alpha, beta, gamma, ab, bb, gb)

    @classmethod
    def from_per_step(cls, alpha, gamma, codebook_size: int) -> "Schedule":
        """Build from per-step keep/occlude probabilities for steps 1..S."""
        C = int(codebook_size)
        a = np.concatenate([[1.0], np.asarray(alpha, dtype=np.float64)])
        g = np.concatenate([[0.0], np.asarray(gamma, dtype=np.float64)])
        a, g = _check_unit("alpha", a), _check_unit("gamma", g)
        b = _check_unit("beta", (1.0 - a - g) / C)
        ab = np.cumprod(a)
        gb = 1.0 - np.cumprod(1.0 - g)
        bb = np.maximum(1.0 - ab - gb, 0.0) / C
        return cls(C, a, b, g, ab, bb, gb)

    def transition(self, t, s):
        """(alpha, beta, gamma) of the multi-step transition from step t to step s > t.

        For ``t = s - 1`` these are the stored per-step values.
        """
        t = np.asarray(t, dtype=np.int64)
        s = np.asarray(s, dtype=np.int64)
        single = (s - t) == 1
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(self.alpha_bar[t] > 0, self.alpha_bar[s] / self.alpha_bar[t], 0.0)
            keep = np.where(self.gamma_bar[t] < 1,
                            (1.0 - self.gamma_bar[s]) / (1.0 - self.gamma_bar[t]), 0.0)
        g = 1.0 - keep
        a = np.where(single, self.alpha[s], a)
        g = np.where(single, self.gamma[s], g)
        b = np.where(single, self.beta[s], np.maximum(1.0 - a - g, 0.0) / self.codebook_size)
        return a, b, g

    def prior(self) -> np.ndarray:
        """``p(k_S) = [beta_bar_S, ..., beta_bar_S, gamma_bar_S]`` (length |C|+1)."""
        out = np.full(self.codebook_size + 1, self.beta_bar[-1])
        out[-1] = self.gamma_bar[-1]
        return out


def make_linear_schedule(steps: int, alpha_end: float, gamma_end: float,
                         codebook_size: int) -> Schedule:
    """Linear ramps alpha_bar 1 -> alpha_end and gamma_bar 0 -> gamma_end.

    ``alpha_bar`` is floored at 1e-8 so the last per-step keep probability
    stays defined; where the floor pushes ``alpha_bar + gamma_bar`` above 1,
    ``gamma_bar`` gives way.
    """
    if steps < 1:
        raise ConfigError(f"schedule needs at least one step, got {steps}")
    if not (0 <= alpha_end <= 1 and 0 <= gamma_end <= 1) or alpha_end + gamma_end > 1 + _TOL:
        raise ConfigError(f"endpoints alpha_end={alpha_end}, gamma_end={gamma_end} leave "
                          f"beta_bar_S = {(1 - alpha_end - gamma_end) / codebook_size} < 0")
    frac = np.arange(steps + 1) / steps
    ab = np.maximum(1.0 + (alpha_end - 1.0) * frac, ALPHA_FLOOR)
    ab[0] = 1.0
    gb = np.minimum(gamma_end * frac, 1.0 - ab)
    return Schedule.from_cumulative(ab, gb, codebook_size)


MATRIX_VARIANTS = ("occlude", "replace", "both")


def variant_schedule(variant: str, steps: int, codebook_size: int, alpha_end: float = 0.0,
                     gamma_end: float = 0.9) -> Schedule:
    """Schedules for the three transition-matrix families.

    ``occlude`` drops uniform replacement (beta_bar = 0 throughout), ``replace``
    drops the Occ symbol (gamma_bar = 0 throughout), ``both`` uses the given
    endpoints.
    """
    if variant == "occlude":
        return make_linear_schedule(steps, alpha_end, 1.0 - alpha_end, codebook_size)
    if variant == "replace":
        return make_linear_schedule(steps, alpha_end, 0.0, codebook_size)
    if variant == "both":
        return make_linear_schedule(steps, alpha_end, gamma_end, codebook_size)
    raise ConfigError(f"unknown transition matrix variant {variant!r}; "
                      f"expected one of {MATRIX_VARIANTS}")
