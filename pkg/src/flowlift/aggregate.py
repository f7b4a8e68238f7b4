"""Fusing a set of 3D pose hypotheses into a single prediction.

Strategies: softmax-weighted posterior-expectation aggregation over the
top-K lowest-reprojection-loss candidates (joint-wise or pose-wise),
plain mean, and per-joint / per-pose best selection. Ties always break
toward the lowest hypothesis index.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .camera import Camera, reprojection_loss
from .flow import Model, sample_hypotheses
from .skeleton import Skeleton, flip_2d, flip_3d

PROVENANCE_ORIGINAL = 0
PROVENANCE_FLIPPED = 1


@dataclass
class HypothesisSet:
    poses: np.ndarray        # (N, J, 3) mm, root-relative
    provenance: np.ndarray   # (N,) int, 0=original 1=flipped
    seed: int

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=np.float64)
        if self.poses.ndim != 3 or self.poses.shape[0] < 1:
            raise ValueError(f"expected (N, J, 3) hypotheses, got {self.poses.shape}")
        if not np.all(np.isfinite(self.poses)):
            raise ValueError("non-finite hypothesis poses")
        self.provenance = np.asarray(self.provenance, dtype=np.int64)
        if self.provenance.shape != (self.poses.shape[0],):
            raise ValueError("provenance length must match hypothesis count")

    @property
    def n(self) -> int:
        return self.poses.shape[0]

    @staticmethod
    def plain(poses: np.ndarray, seed: int = 0) -> "HypothesisSet":
        poses = np.asarray(poses, dtype=np.float64)
        return HypothesisSet(poses, np.zeros(poses.shape[0], dtype=np.int64), seed)


@dataclass(frozen=True)
class RpeaConfig:
    alpha: float = 10.0   # temperature on squared normalized-coordinate losses
    top_k: int | None = None  # None: ceil(N/2); clamped to N at call time
    mode: str = "joint"   # "joint" or "pose"

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.mode not in ("joint", "pose"):
            raise ValueError(f"mode must be 'joint' or 'pose', got {self.mode!r}")

    def resolve_k(self, n: int) -> int:
        k = -(-n // 2) if self.top_k is None else self.top_k
        if k > n:
            warnings.warn(f"top_k={k} exceeds N={n}; clamping to N")
            k = n
        return k


def _joint_losses(hyps: HypothesisSet, observed: np.ndarray,
                  cam: Camera) -> np.ndarray:
    losses = reprojection_loss(hyps.poses, observed, cam)  # (N, J)
    if np.any(np.all(~np.isfinite(losses), axis=0)):
        raise ValueError("all reprojection losses non-finite for some joint")
    return losses


def _softmax_weights(losses: np.ndarray, alpha: float) -> np.ndarray:
    """softmax(-alpha * losses) along axis 0, stable under loss shifts."""
    logits = -alpha * losses
    logits = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=0, keepdims=True)


def rpea_jointwise(hyps: HypothesisSet, observed: np.ndarray, cam: Camera,
                   cfg: RpeaConfig) -> np.ndarray:
    """Per joint: keep the K candidates with the lowest reprojection loss
    and average them under softmax(-alpha * loss) weights."""
    losses = _joint_losses(hyps, observed, cam)  # (N, J)
    k = cfg.resolve_k(hyps.n)
    # stable argsort keeps the lowest-index candidate on ties
    order = np.argsort(losses, axis=0, kind="stable")[:k]       # (K, J)
    j_idx = np.arange(losses.shape[1])
    sel_losses = losses[order, j_idx]                           # (K, J)
    sel_poses = hyps.poses[order, j_idx]                        # (K, J, 3)
    w = _softmax_weights(sel_losses, cfg.alpha)                 # (K, J)
    return (w[..., None] * sel_poses).sum(axis=0)


def rpea_posewise(hyps: HypothesisSet, observed: np.ndarray, cam: Camera,
                  cfg: RpeaConfig) -> np.ndarray:
    """Whole-pose variant: rank hypotheses by summed per-joint loss, keep
    the top K, and average entire poses under one weight per pose."""
    losses = _joint_losses(hyps, observed, cam).sum(axis=1)  # (N,)
    k = cfg.resolve_k(hyps.n)
    order = np.argsort(losses, kind="stable")[:k]
    w = _softmax_weights(losses[order], cfg.alpha)
    return (w[:, None, None] * hyps.poses[order]).sum(axis=0)


def rpea(hyps: HypothesisSet, observed: np.ndarray, cam: Camera,
         cfg: RpeaConfig) -> np.ndarray:
    fn = rpea_jointwise if cfg.mode == "joint" else rpea_posewise
    return fn(hyps, observed, cam, cfg)


def mean_aggregate(hyps: HypothesisSet) -> np.ndarray:
    return hyps.poses.mean(axis=0)


def best_select(hyps: HypothesisSet, observed: np.ndarray, cam: Camera,
                mode: str = "joint") -> np.ndarray:
    """Minimum-reprojection-loss selection, per joint or per whole pose."""
    losses = _joint_losses(hyps, observed, cam)
    if mode == "joint":
        best = losses.argmin(axis=0)  # argmin returns the first minimum
        return hyps.poses[best, np.arange(losses.shape[1])]
    if mode == "pose":
        return hyps.poses[losses.sum(axis=1).argmin()].copy()
    raise ValueError(f"mode must be 'joint' or 'pose', got {mode!r}")


def joint_uncertainty(hyps: HypothesisSet) -> np.ndarray:
    """Per-joint standard deviation across hypotheses (population
    convention): rms deviation of each joint's 3-vector from its mean."""
    centered = hyps.poses - hyps.poses.mean(axis=0, keepdims=True)
    return np.sqrt((centered ** 2).sum(axis=-1).mean(axis=0))


def fha_expand(model: Model, observed: np.ndarray, skel: Skeleton,
               n_half: int, steps: int, seed: int,
               sample_index: int = 0) -> HypothesisSet:
    """Flipped-hypothesis augmentation: n_half hypotheses from the observed
    2D pose plus n_half from its horizontal mirror, the latter un-flipped
    back into the original frame. Branches use distinct RNG streams keyed
    off (seed, branch)."""
    if n_half < 1:
        raise ValueError("n_half must be >= 1")
    orig = sample_hypotheses(model, observed, n_half, steps,
                             seed=2 * seed, sample_index=sample_index)
    flipped_obs = flip_2d(observed, skel)
    mirrored = sample_hypotheses(model, flipped_obs, n_half, steps,
                                 seed=2 * seed + 1, sample_index=sample_index)
    unflipped = flip_3d(mirrored, skel)
    poses = np.concatenate([orig, unflipped], axis=0)
    provenance = np.concatenate([
        np.full(n_half, PROVENANCE_ORIGINAL, dtype=np.int64),
        np.full(n_half, PROVENANCE_FLIPPED, dtype=np.int64)])
    return HypothesisSet(poses, provenance, seed)
