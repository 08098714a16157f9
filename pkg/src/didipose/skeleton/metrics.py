"""MPJPE and Procrustes-aligned MPJPE.

Both accept a single pose (J, 3) or a batch (B, J, 3) and return a float or a
(B,) array accordingly.  ``Pose`` objects are accepted too.
"""
from __future__ import annotations

import numpy as np

from ..errors import AlignmentError, ShapeError


def _as_array(p) -> np.ndarray:
    return np.asarray(getattr(p, "coords", p), dtype=np.float64)


def _check_pair(pred, gt):
    pred, gt = _as_array(pred), _as_array(gt)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ShapeError(f"pose shapes differ or are not (..., J, 3): {pred.shape} vs {gt.shape}")
    return pred, gt


def mpjpe(pred, gt):
    """Mean per-joint Euclidean distance after subtracting the root joint."""
    pred, gt = _check_pair(pred, gt)
    pred = pred - pred[..., :1, :]
    gt = gt - gt[..., :1, :]
    err = np.linalg.norm(pred - gt, axis=-1).mean(axis=-1)
    return float(err) if err.ndim == 0 else err


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Similarity transform (scale, proper rotation, translation) of ``pred`` onto ``gt``.

    Least-squares fit via the SVD of the cross-covariance with a determinant
    correction so the rotation never reflects.
    """
    if pred.shape[0] < 3:
        raise AlignmentError("Procrustes alignment needs at least 3 joints")
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    xp, xg = pred - mu_p, gt - mu_g
    for arr, label in ((xp, "pred"), (xg, "gt")):
        sv = np.linalg.svd(arr, compute_uv=False)
        if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
            raise AlignmentError(f"{label} joints are collinear; alignment is unstable")
    u, s, vt = np.linalg.svd(xp.T @ xg)
    d = np.ones(3)
    d[2] = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag(d) @ vt  # row-vector convention: aligned = x @ rot
    scale = (s * d).sum() / (xp ** 2).sum()
    return scale * xp @ rot + mu_g


def _mean_distance(a, b) -> float:
    return float(np.linalg.norm(a - b, axis=-1).mean())


def pa_mpjpe(pred, gt):
    """Mean per-joint distance after the similarity fit of ``pred`` onto ``gt``.

    The fit already removes translation, so no further root alignment is applied.
    """
    pred, gt = _check_pair(pred, gt)
    if pred.ndim == 2:
        return _mean_distance(procrustes_align(pred, gt), gt)
    flat_p = pred.reshape(-1, *pred.shape[-2:])
    flat_g = gt.reshape(-1, *gt.shape[-2:])
    out = np.array([_mean_distance(procrustes_align(p, g), g) for p, g in zip(flat_p, flat_g)])
    return out.reshape(pred.shape[:-2])
