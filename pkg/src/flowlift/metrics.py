"""Pose evaluation metrics: MPJPE, Procrustes-aligned MPJPE, PCK, AUC."""

from __future__ import annotations

import numpy as np

# AUC averages PCK over 5mm..150mm in 5mm steps (3DHP protocol).
AUC_THRESHOLDS_MM = np.arange(5.0, 151.0, 5.0)
PCK_THRESHOLD_MM = 150.0


def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean Euclidean per-joint distance in mm over (J, 3) poses."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Similarity-align pred onto gt: returns s*R@pred + t minimizing the
    Frobenius error, with R a proper rotation (det +1) and s > 0."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    p0 = pred - mu_p
    g0 = gt - mu_g
    norm_p = np.sqrt((p0 ** 2).sum())
    norm_g = np.sqrt((g0 ** 2).sum())
    if norm_g == 0.0:
        raise ValueError("degenerate ground truth: all joints coincide")
    if norm_p == 0.0:
        # a single point carries no orientation; best fit is the gt centroid
        return np.broadcast_to(mu_g, gt.shape).copy()
    p0 = p0 / norm_p
    g0 = g0 / norm_g
    h = g0.T @ p0
    u, s, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(u @ vt))
    d = np.ones(h.shape[0])
    d[-1] = sign
    rot = u @ np.diag(d) @ vt
    scale = (s * d).sum() * norm_g / norm_p
    return scale * (pred - mu_p) @ rot.T + mu_g


def p_mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """MPJPE after rigid alignment in translation, rotation, and scale."""
    return mpjpe(procrustes_align(pred, gt), gt)


def pck(pred: np.ndarray, gt: np.ndarray,
        threshold_mm: float = PCK_THRESHOLD_MM) -> float:
    """Fraction of joints with error strictly below the threshold."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    err = np.linalg.norm(pred - gt, axis=-1)
    return float((err < threshold_mm).mean())


def auc(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean PCK over the 5:5:150 mm threshold grid."""
    err = np.linalg.norm(pred - gt, axis=-1)
    return float(np.mean([(err < t).mean() for t in AUC_THRESHOLDS_MM]))


def sign_test_pvalue(a: np.ndarray, b: np.ndarray) -> float:
    """One-sided paired sign test that a < b; ties are dropped."""
    from scipy.stats import binomtest

    a = np.asarray(a)
    b = np.asarray(b)
    wins = int((a < b).sum())
    n = int((a != b).sum())
    if n == 0:
        return 1.0
    return float(binomtest(wins, n, 0.5, alternative="greater").pvalue)
