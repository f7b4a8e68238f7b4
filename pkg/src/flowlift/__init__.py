"""flowlift: flow-matching 2D-to-3D pose lifting with multi-hypothesis
aggregation on synthetic skeleton data."""

from .aggregate import (HypothesisSet, RpeaConfig, best_select, fha_expand,
                        joint_uncertainty, mean_aggregate, rpea)
from .camera import Camera, project, reprojection_loss
from .data import Dataset, SamplerConfig, generate
from .flow import (FlowConfig, Model, euler_sample, sample_hypotheses,
                   sample_hypotheses_batch, train, worker_count)
from .metrics import auc, mpjpe, p_mpjpe, pck, procrustes_align
from .network import NetConfig, normalize_adjacency
from .skeleton import Skeleton, animal26, flip_2d, flip_3d, human17

__version__ = "0.1.0"

__all__ = [
    "Camera", "Dataset", "FlowConfig", "HypothesisSet", "Model", "NetConfig",
    "RpeaConfig", "SamplerConfig", "Skeleton", "animal26", "auc",
    "best_select", "euler_sample", "fha_expand", "flip_2d", "flip_3d",
    "generate", "human17", "joint_uncertainty", "mean_aggregate", "mpjpe",
    "normalize_adjacency", "p_mpjpe", "pck", "procrustes_align", "project",
    "reprojection_loss", "rpea", "sample_hypotheses",
    "sample_hypotheses_batch", "train", "worker_count",
]
