"""Conditional flow matching: linear interpolation path, CFM loss, training
loop, and Euler ODE sampling of multi-hypothesis 3D poses.

3D targets are standardized per dataset (zero mean / unit std per
coordinate) before training so the Gaussian source and the data live on
the same scale; sampling de-standardizes before returning poses in mm.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from .network import (NetConfig, collect_grads, init_params,
                      normalize_adjacency, velocity_forward, velocity_infer)
from .optim import AdamState, adam_step
from .skeleton import Skeleton
from .tensor import Tensor


@dataclass(frozen=True)
class FlowConfig:
    steps: int = 3          # Euler steps S at inference
    batch_size: int = 128
    epochs: int = 30
    lr_init: float = 1e-3
    lr_decay: float = 0.98      # per-epoch factor
    lr_drop: float = 0.8        # replaces the factor every `lr_drop_every` epochs
    lr_drop_every: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr_init <= 0:
            raise ValueError("lr_init must be positive")


def interpolate(x0: np.ndarray, x1: np.ndarray, t) -> np.ndarray:
    """Linear path x_t = (1-t) x0 + t x1 for t in [0, 1)."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t >= 1):
        raise ValueError("interpolation time must lie in [0, 1)")
    if x0.shape != x1.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    tb = t.reshape(t.shape + (1,) * (x0.ndim - t.ndim))
    return (1.0 - tb) * x0 + tb * x1


def target_velocity(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """Path-constant target velocity x1 - x0."""
    if x0.shape != x1.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    return x1 - x0


class Model:
    """Trained velocity field plus the target standardization statistics."""

    def __init__(self, cfg: NetConfig, flow_cfg: FlowConfig, skel: Skeleton,
                 params: dict[str, np.ndarray],
                 mean3d: np.ndarray, std3d: np.ndarray):
        self.cfg = cfg
        self.flow_cfg = flow_cfg
        self.skel = skel
        self.params = params
        self.adjn = normalize_adjacency(skel)
        self.mean3d = np.asarray(mean3d, dtype=np.float64)  # (3,)
        self.std3d = np.asarray(std3d, dtype=np.float64)    # (3,)
        # single-precision copies for the sampling hot path; weights are
        # stored and trained in double precision
        self._params32 = {k: v.astype(np.float32) for k, v in params.items()}
        self._adjn32 = self.adjn.astype(np.float32)

    def standardize(self, pose3d: np.ndarray) -> np.ndarray:
        return (pose3d - self.mean3d) / self.std3d

    def destandardize(self, z: np.ndarray) -> np.ndarray:
        return z * self.std3d + self.mean3d

    def velocity(self, x: np.ndarray, t: np.ndarray,
                 cond: np.ndarray) -> np.ndarray:
        return velocity_infer(x, t, cond, self._params32, self._adjn32,
                              self.cfg)

    def save(self, path: str | Path) -> None:
        tensors = dict(self.params)
        tensors["meta.mean3d"] = self.mean3d
        tensors["meta.std3d"] = self.std3d
        tensors["meta.net"] = np.array([
            self.cfg.n_joints, self.cfg.width, self.cfg.blocks,
            self.cfg.heads, self.cfg.seed, int(self.cfg.residual)], dtype=float)
        tensors["meta.flow"] = np.array([
            self.flow_cfg.steps, self.flow_cfg.batch_size,
            self.flow_cfg.epochs, self.flow_cfg.lr_init,
            self.flow_cfg.lr_decay, self.flow_cfg.lr_drop,
            self.flow_cfg.lr_drop_every, self.flow_cfg.seed], dtype=float)
        tensors["meta.skel.edges"] = np.array(self.skel.edges, dtype=float)
        tensors["meta.skel.mirror"] = np.array(self.skel.mirror, dtype=float)
        tensors["meta.skel.root"] = np.array(float(self.skel.root))
        checkpoint.save_tensors(path, tensors)

    @staticmethod
    def load(path: str | Path) -> "Model":
        tensors = checkpoint.load_tensors(path)
        net = tensors.pop("meta.net")
        cfg = NetConfig(n_joints=int(net[0]), width=int(net[1]),
                        blocks=int(net[2]), heads=int(net[3]),
                        seed=int(net[4]), residual=bool(net[5]))
        fl = tensors.pop("meta.flow")
        flow_cfg = FlowConfig(steps=int(fl[0]), batch_size=int(fl[1]),
                              epochs=int(fl[2]), lr_init=float(fl[3]),
                              lr_decay=float(fl[4]), lr_drop=float(fl[5]),
                              lr_drop_every=int(fl[6]), seed=int(fl[7]))
        edges = tuple(map(tuple, tensors.pop("meta.skel.edges").astype(int)))
        mirror = tuple(tensors.pop("meta.skel.mirror").astype(int))
        root = int(tensors.pop("meta.skel.root"))
        skel = Skeleton(cfg.n_joints, edges, root, mirror)
        mean3d = tensors.pop("meta.mean3d")
        std3d = tensors.pop("meta.std3d")
        return Model(cfg, flow_cfg, skel, tensors, mean3d, std3d)


def cfm_loss(params: dict[str, np.ndarray], adjn: np.ndarray, cfg: NetConfig,
             x0: np.ndarray, x1: np.ndarray, t: np.ndarray,
             cond: np.ndarray, trainable: bool = True,
             ) -> tuple[Tensor, dict[str, Tensor]]:
    """Mean squared velocity-matching error over a batch (mean over all
    B*J*3 elements)."""
    x_t = interpolate(x0, x1, t)
    v_target = target_velocity(x0, x1)
    pred, leaves = velocity_forward(x_t, t, cond, params, adjn, cfg,
                                    trainable=trainable)
    diff = pred - Tensor(v_target)
    loss = (diff * diff).mean()
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite CFM loss")
    return loss, leaves


def _iteration_rng(seed: int, epoch: int, iteration: int) -> np.random.Generator:
    # counter-based: each (seed, epoch, iteration) keys an independent stream
    return np.random.Generator(np.random.Philox(key=seed,
                                                counter=[0, 0, epoch, iteration]))


def train(poses3d: np.ndarray, poses2d: np.ndarray, skel: Skeleton,
          net_cfg: NetConfig, flow_cfg: FlowConfig,
          progress: Callable[[int, float, float], None] | None = None,
          ) -> tuple[Model, list[dict]]:
    """Train the velocity field on paired (n, J, 3) / (n, J, 2) poses.

    Returns the trained model and a per-epoch history of
    {"epoch", "mean_loss", "lr"} rows.
    """
    n = poses3d.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    mean3d = poses3d.reshape(-1, 3).mean(axis=0)
    std3d = poses3d.reshape(-1, 3).std(axis=0)
    std3d = np.where(std3d > 1e-12, std3d, 1.0)
    x1_all = (poses3d - mean3d) / std3d

    params = init_params(net_cfg)
    adjn = normalize_adjacency(skel)
    state = AdamState(lr=flow_cfg.lr_init)
    history: list[dict] = []
    b = min(flow_cfg.batch_size, n)

    for epoch in range(1, flow_cfg.epochs + 1):
        order = _iteration_rng(flow_cfg.seed, epoch, 0).permutation(n)
        losses = []
        for it in range(n // b or 1):
            idx = order[it * b:(it + 1) * b]
            if idx.size == 0:
                idx = order[:b]
            rng = _iteration_rng(flow_cfg.seed, epoch, it + 1)
            x1 = x1_all[idx]
            cond = poses2d[idx]
            x0 = rng.standard_normal(x1.shape)
            t = rng.uniform(0.0, 1.0, size=x1.shape[0])
            t = np.minimum(t, np.nextafter(1.0, 0.0))
            try:
                loss, leaves = cfm_loss(params, adjn, net_cfg, x0, x1, t, cond)
                loss.backward()
                params = adam_step(params, collect_grads(leaves), state)
            except FloatingPointError as exc:
                raise FloatingPointError(
                    f"training aborted at epoch {epoch}, iteration {it}: {exc}"
                ) from exc
            losses.append(float(loss.data))
        mean_loss = float(np.mean(losses))
        history.append({"epoch": epoch, "mean_loss": mean_loss, "lr": state.lr})
        if progress is not None:
            progress(epoch, mean_loss, state.lr)
        factor = flow_cfg.lr_drop if epoch % flow_cfg.lr_drop_every == 0 \
            else flow_cfg.lr_decay
        state.lr *= factor

    model = Model(net_cfg, flow_cfg, skel, params, mean3d, std3d)
    return model, history


def worker_count() -> int:
    """Number of integration worker threads: FLOWLIFT_THREADS when set
    (an explicit value wins, even when it oversubscribes), else the CPU
    count."""
    cap = os.environ.get("FLOWLIFT_THREADS")
    if cap:
        return max(1, int(cap))
    return os.cpu_count() or 1


VelocityField = Callable[[np.ndarray, float, np.ndarray], np.ndarray]


def euler_integrate(x0: np.ndarray, cond: np.ndarray, steps: int,
                    field: VelocityField) -> np.ndarray:
    """Explicit Euler from t=0 with step 1/S; exactly `steps` field calls."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.array(x0, dtype=np.float64, copy=True)
    h = 1.0 / steps
    for k in range(steps):
        v = field(x, k * h, cond)
        x = x + h * v
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state after Euler step {k}")
    return x


def euler_sample(model: Model, cond: np.ndarray, x0: np.ndarray,
                 steps: int) -> np.ndarray:
    """Integrate one noise seed (J, 3) into a 3D pose in mm."""

    def field(x, t, c):
        return model.velocity(x, np.full(x.shape[0] if x.ndim == 3 else 1, t),
                              c)

    z = euler_integrate(x0, cond, steps, field)
    return model.destandardize(z)


def hypothesis_noise(seed: int, sample_index: int, n: int,
                     n_joints: int) -> np.ndarray:
    """Deterministic (n, J, 3) standard-normal noise block. Keyed per
    (seed, sample_index) so results are independent of batching."""
    rng = np.random.Generator(np.random.Philox(key=seed,
                                               counter=[0, 0, 1, sample_index]))
    return rng.standard_normal((n, n_joints, 3))


def sample_hypotheses(model: Model, cond: np.ndarray, n: int, steps: int,
                      seed: int, sample_index: int = 0) -> np.ndarray:
    """Draw n hypotheses (n, J, 3) for one 2D pose in a single batched
    integration (one network evaluation per Euler step)."""
    if n < 1:
        raise ValueError("need at least one hypothesis")
    j = model.cfg.n_joints
    x0 = hypothesis_noise(seed, sample_index, n, j)
    # the shared observation is passed with a leading 1 so the conditioning
    # embedding is computed once per network call, not once per hypothesis
    cond_b = np.reshape(cond, (1, j, 2))

    def field(x, t, c):
        return model.velocity(x, np.full(x.shape[0], t), c)

    z = _integrate_parallel(x0, cond_b, steps, field)
    return model.destandardize(z)


def _integrate_parallel(x0: np.ndarray, cond: np.ndarray, steps: int,
                        field: VelocityField) -> np.ndarray:
    """Euler-integrate a batch of independent trajectories, splitting the
    batch across worker threads when more than one core is available.
    Chunking never changes results: every per-sample computation goes
    through identical stacked kernels regardless of batch size."""
    workers = worker_count()
    n = x0.shape[0]
    if workers <= 1 or n < 2 * workers:
        return euler_integrate(x0, cond, steps, field)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    spans = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def run(span):
        a, b = span
        c = cond if cond.shape[0] == 1 else cond[a:b]
        return euler_integrate(x0[a:b], c, steps, field)

    with ThreadPoolExecutor(max_workers=len(spans)) as pool:
        parts = list(pool.map(run, spans))
    return np.concatenate(parts, axis=0)


def sample_hypotheses_batch(model: Model, conds: np.ndarray, n: int,
                            steps: int, seed: int,
                            sample_indices: np.ndarray | None = None,
                            ) -> np.ndarray:
    """Hypotheses for m conditions at once: (m, n, J, 3). Per-sample noise
    streams match `sample_hypotheses`, so batching does not change results."""
    m, j, _ = conds.shape
    if sample_indices is None:
        sample_indices = np.arange(m)
    x0 = np.stack([hypothesis_noise(seed, int(si), n, j)
                   for si in sample_indices])
    flat_x0 = x0.reshape(m * n, j, 3)
    flat_cond = np.repeat(conds, n, axis=0)

    def field(x, t, c):
        return model.velocity(x, np.full(x.shape[0], t), c)

    z = _integrate_parallel(flat_x0, flat_cond, steps, field)
    return model.destandardize(z).reshape(m, n, j, 3)
