"""Batched inference and strategy comparison over a test dataset."""

from __future__ import annotations

import numpy as np

from .aggregate import (HypothesisSet, RpeaConfig, best_select,
                        mean_aggregate, rpea)
from .data import Dataset
from .flow import Model, sample_hypotheses_batch
from .metrics import mpjpe, p_mpjpe
from .skeleton import flip_2d, flip_3d

STRATEGIES = ("mean", "jpma-joint", "jpma-pose", "rpea-joint", "rpea-pose")


def sample_hypothesis_sets(model: Model, dataset: Dataset, n: int, steps: int,
                           seed: int, fha: bool = True,
                           chunk: int = 4096) -> list[HypothesisSet]:
    """Per-sample hypothesis sets for the whole dataset, batched across
    samples and hypotheses. With FHA, half the hypotheses come from the
    mirrored 2D input and are un-flipped back; RNG streams match the
    single-sample path exactly."""
    m = len(dataset)
    skel = dataset.skel
    conds = dataset.poses2d

    def batched(conds_in: np.ndarray, n_each: int, s_seed: int) -> np.ndarray:
        outs = []
        # keep peak memory bounded: at most `chunk` trajectories in flight
        per = max(1, chunk // max(1, n_each))
        for start in range(0, m, per):
            idx = np.arange(start, min(start + per, m))
            outs.append(sample_hypotheses_batch(
                model, conds_in[idx], n_each, steps, s_seed, idx))
        return np.concatenate(outs, axis=0)

    if fha:
        if n % 2 != 0:
            raise ValueError("FHA needs an even hypothesis count")
        half = n // 2
        orig = batched(conds, half, 2 * seed)
        flipped_conds = np.stack([flip_2d(c, skel) for c in conds])
        mirrored = batched(flipped_conds, half, 2 * seed + 1)
        unflipped = flip_3d(mirrored, skel)
        poses = np.concatenate([orig, unflipped], axis=1)
        provenance = np.concatenate([np.zeros(half, dtype=np.int64),
                                     np.ones(half, dtype=np.int64)])
    else:
        poses = batched(conds, n, 2 * seed)
        provenance = np.zeros(n, dtype=np.int64)
    return [HypothesisSet(poses[i], provenance.copy(), seed) for i in range(m)]


def aggregate_one(hyps: HypothesisSet, observed: np.ndarray, cam,
                  strategy: str, rpea_cfg: RpeaConfig) -> np.ndarray:
    if strategy == "mean":
        return mean_aggregate(hyps)
    if strategy == "jpma-joint":
        return best_select(hyps, observed, cam, mode="joint")
    if strategy == "jpma-pose":
        return best_select(hyps, observed, cam, mode="pose")
    if strategy == "rpea-joint":
        return rpea(hyps, observed, cam,
                    RpeaConfig(rpea_cfg.alpha, rpea_cfg.top_k, "joint"))
    if strategy == "rpea-pose":
        return rpea(hyps, observed, cam,
                    RpeaConfig(rpea_cfg.alpha, rpea_cfg.top_k, "pose"))
    raise ValueError(f"unknown strategy {strategy!r}")


def per_sample_errors(dataset: Dataset, sets: list[HypothesisSet],
                      strategy: str, rpea_cfg: RpeaConfig,
                      ) -> tuple[np.ndarray, np.ndarray]:
    """(MPJPE, P-MPJPE) arrays, one entry per test sample."""
    e1 = np.empty(len(dataset))
    e2 = np.empty(len(dataset))
    for i, hyps in enumerate(sets):
        pred = aggregate_one(hyps, dataset.poses2d[i], dataset.camera(i),
                             strategy, rpea_cfg)
        e1[i] = mpjpe(pred, dataset.poses3d[i])
        e2[i] = p_mpjpe(pred, dataset.poses3d[i])
    return e1, e2


def compare_strategies(model: Model, dataset: Dataset, n_list: list[int],
                       steps: int, seed: int, rpea_cfg: RpeaConfig,
                       fha: bool = True,
                       strategies: tuple[str, ...] = STRATEGIES,
                       ) -> list[dict]:
    """Rows of {strategy, n, mpjpe, p_mpjpe} averaged over the dataset."""
    rows = []
    for n in n_list:
        sets = sample_hypothesis_sets(model, dataset, n, steps, seed, fha=fha)
        for strategy in strategies:
            e1, e2 = per_sample_errors(dataset, sets, strategy, rpea_cfg)
            rows.append({"strategy": strategy, "n": n,
                         "mpjpe": float(e1.mean()),
                         "p_mpjpe": float(e2.mean())})
    return rows
