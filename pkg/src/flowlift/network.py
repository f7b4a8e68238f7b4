"""Conditional velocity field: per-joint embeddings, parallel GCN/attention
blocks fused by LayerNorm+MLP, and a per-joint regression head.

All weights are shared across joints, so the network is permutation
equivariant under a simultaneous permutation of joints and adjacency.
Inputs are batched as (B, J, *); a single pose may be passed as (J, *).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .skeleton import Skeleton
from .tensor import Tensor, concat, layer_norm, relu, softmax


@dataclass(frozen=True)
class NetConfig:
    n_joints: int = 17
    width: int = 64        # fused feature width D
    blocks: int = 2        # number of backbone blocks L
    heads: int = 4
    seed: int = 0
    residual: bool = False  # off: the stated architecture has no skips

    def __post_init__(self):
        if self.width % 4 != 0:
            raise ValueError("width must be divisible by 4")
        if (self.width // 2) % self.heads != 0:
            raise ValueError(
                f"branch width {self.width // 2} not divisible by {self.heads} heads")

    @property
    def branch_width(self) -> int:
        return self.width // 2

    # embedding split: 3D and 2D embeddings get 3/8 of D each, time gets 1/4
    @property
    def embed_widths(self) -> tuple[int, int, int]:
        d = self.width
        dt = d // 4
        dx = (d - dt) // 2
        return dx, d - dt - dx, dt

    def to_kv(self) -> str:
        return (f"J={self.n_joints}\nD={self.width}\nL={self.blocks}\n"
                f"heads={self.heads}\nseed={self.seed}\n"
                f"residual={int(self.residual)}\n")

    @staticmethod
    def from_kv(text: str) -> "NetConfig":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
        return NetConfig(
            n_joints=int(kv.get("J", 17)),
            width=int(kv.get("D", 64)),
            blocks=int(kv.get("L", 2)),
            heads=int(kv.get("heads", 4)),
            seed=int(kv.get("seed", 0)),
            residual=bool(int(kv.get("residual", 0))),
        )

    @staticmethod
    def load(path: str | Path) -> "NetConfig":
        return NetConfig.from_kv(Path(path).read_text())


def normalize_adjacency(skel: Skeleton) -> np.ndarray:
    """Symmetric normalization D^{-1/2} (A + I) D^{-1/2} of the skeleton graph."""
    j = skel.n_joints
    a = np.eye(j)
    for p, c in skel.edges:
        a[p, c] = 1.0
        a[c, p] = 1.0
    deg = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


def _kaiming(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: NetConfig) -> dict[str, np.ndarray]:
    """Fresh parameter dict; Kaiming-uniform weights, zero biases."""
    rng = np.random.default_rng(cfg.seed)
    d = cfg.width
    bw = cfg.branch_width
    dx, dc, dt = cfg.embed_widths
    p: dict[str, np.ndarray] = {}

    def mlp(prefix: str, d_in: int, d_hidden: int, d_out: int):
        p[f"{prefix}.w1"] = _kaiming(rng, d_in, (d_in, d_hidden))
        p[f"{prefix}.b1"] = np.zeros(d_hidden)
        p[f"{prefix}.w2"] = _kaiming(rng, d_hidden, (d_hidden, d_out))
        p[f"{prefix}.b2"] = np.zeros(d_out)

    mlp("embed3d", 3, dx, dx)
    mlp("embed2d", 2, dc, dc)
    mlp("embedt", 1, dt, dt)
    for l in range(cfg.blocks):
        p[f"block{l}.gcn.w"] = _kaiming(rng, d, (d, bw))
        for name in ("q", "k", "v"):
            p[f"block{l}.attn.w{name}"] = _kaiming(rng, d, (d, bw))
            p[f"block{l}.attn.b{name}"] = np.zeros(bw)
        p[f"block{l}.attn.wo"] = _kaiming(rng, bw, (bw, bw))
        p[f"block{l}.attn.bo"] = np.zeros(bw)
        p[f"block{l}.ln.gamma"] = np.ones(d)
        p[f"block{l}.ln.beta"] = np.zeros(d)
        mlp(f"block{l}.mlp", d, d, d)
    mlp("head", d, d, 3)
    return p


def num_params(params: dict[str, np.ndarray]) -> int:
    return sum(int(v.size) for v in params.values())


def _as_tensors(params: dict[str, np.ndarray],
                trainable: bool) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=trainable) for k, v in params.items()}


def _mlp_forward(t: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    h = relu(x @ t[f"{prefix}.w1"] + t[f"{prefix}.b1"])
    return h @ t[f"{prefix}.w2"] + t[f"{prefix}.b2"]


def gcn_layer(x: Tensor, adjn: np.ndarray, w: Tensor,
              activate: bool = True) -> Tensor:
    """Graph convolution ReLU(adjn @ x @ w) over (..., J, D_in) features.

    `activate=False` is a test hook exposing the pre-activation output.
    """
    out = Tensor(adjn) @ x @ w
    return relu(out) if activate else out


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int = 1) -> Tensor:
    """Scaled dot-product attention over (..., J, d) token features.

    With heads > 1 the feature axis is split, attended per head, and
    concatenated back.
    """
    d = q.shape[-1]
    if d % heads != 0:
        raise ValueError(f"feature width {d} not divisible by {heads} heads")
    dh = d // heads
    if heads > 1:
        j = q.shape[-2]
        lead = q.shape[:-2]
        nl = len(lead)
        perm = tuple(range(nl)) + (nl + 1, nl, nl + 2)

        def split(x: Tensor) -> Tensor:
            return x.reshape(*lead, j, heads, dh).transpose(*perm)

        q, k, v = split(q), split(k), split(v)
    kt = k.transpose(*range(len(k.shape) - 2),
                     len(k.shape) - 1, len(k.shape) - 2)
    logits = (q @ kt) * (1.0 / np.sqrt(dh))
    out = softmax(logits, axis=-1) @ v
    if heads > 1:
        out = out.transpose(*perm)
        out = out.reshape(*lead, j, d)
    return out


def velocity_forward(x_t: np.ndarray, t: np.ndarray, cond: np.ndarray,
                     params: dict[str, np.ndarray], adjn: np.ndarray,
                     cfg: NetConfig, trainable: bool = False,
                     ) -> tuple[Tensor, dict[str, Tensor]]:
    """Predict per-joint velocity for states (B, J, 3) at times (B,) under
    conditions (B, J, 2). Returns the output Tensor and the parameter
    leaves (for gradient collection when `trainable`)."""
    squeeze = x_t.ndim == 2
    if squeeze:
        x_t = x_t[None]
        cond = cond[None]
        t = np.atleast_1d(t)
    b, j, _ = x_t.shape
    leaves = _as_tensors(params, trainable)

    e3 = _mlp_forward(leaves, "embed3d", Tensor(x_t))
    e2 = _mlp_forward(leaves, "embed2d", Tensor(cond))
    et = _mlp_forward(leaves, "embedt", Tensor(t.reshape(b, 1, 1)))
    et = et.broadcast_to((b, j, et.shape[-1]))
    feats = concat([e3, e2, et], axis=-1)

    for l in range(cfg.blocks):
        local = gcn_layer(feats, adjn, leaves[f"block{l}.gcn.w"])
        q = feats @ leaves[f"block{l}.attn.wq"] + leaves[f"block{l}.attn.bq"]
        k = feats @ leaves[f"block{l}.attn.wk"] + leaves[f"block{l}.attn.bk"]
        v = feats @ leaves[f"block{l}.attn.wv"] + leaves[f"block{l}.attn.bv"]
        glob = attention(q, k, v, heads=cfg.heads)
        glob = glob @ leaves[f"block{l}.attn.wo"] + leaves[f"block{l}.attn.bo"]
        fused = concat([local, glob], axis=-1)
        fused = layer_norm(fused, leaves[f"block{l}.ln.gamma"],
                           leaves[f"block{l}.ln.beta"])
        out = _mlp_forward(leaves, f"block{l}.mlp", fused)
        feats = feats + out if cfg.residual else out
        if not np.all(np.isfinite(feats.data)):
            raise FloatingPointError(f"non-finite activation after block {l}")

    vel = _mlp_forward(leaves, "head", feats)
    if squeeze:
        vel = vel.reshape(j, 3)
    return vel, leaves


class _Workspace:
    """Reusable buffers for the inference forward pass. Fresh temporaries
    at these sizes go through mmap on every call, which costs several
    times the arithmetic itself; reusing one workspace per (batch, config)
    shape keeps the hot path allocation-free."""

    _cache: dict[tuple, "_Workspace"] = {}

    def __init__(self, b: int, j: int, cfg: NetConfig, dtype):
        d, bw, h = cfg.width, cfg.branch_width, cfg.heads
        dh = bw // h
        dx, dc, dt = cfg.embed_widths

        def buf(*shape):
            return np.empty(shape, dtype=dtype)

        self.feats = buf(b, j, d)
        self.hidden = buf(b, j, d)
        self.e3h = buf(b, j, dx)
        self.e2h = buf(b, j, dc)
        self.e2o = buf(b, j, dc)
        self.eth = buf(b, 1, dt)
        self.eto = buf(b, 1, dt)
        self.ones_d = np.full((d, 1), 1.0 / d, dtype=dtype)
        self.ones_j = np.ones((j, 1), dtype=dtype)
        self.local3 = buf(b, j, d)
        self.local = buf(b, j, bw)
        self.qkv = buf(b, j, 3 * bw)
        self.qh = buf(b, h, j, dh)
        self.kh = buf(b, h, j, dh)
        self.vh = buf(b, h, j, dh)
        self.logits = buf(b, h, j, j)
        self.red = buf(b, h, j, 1)
        self.ctx = buf(b, h, j, dh)
        self.glob = buf(b, j, bw)
        self.glob2 = buf(b, j, bw)
        self.fused = buf(b, j, d)
        self.row = buf(b, j, 1)

    @classmethod
    def get(cls, b: int, j: int, cfg: NetConfig, dtype) -> "_Workspace":
        # keyed per thread: concurrent batched sampling must not share buffers
        key = (threading.get_ident(), b, j, cfg.width, cfg.heads,
               np.dtype(dtype).str)
        ws = cls._cache.get(key)
        if ws is None:
            if len(cls._cache) >= 32:
                cls._cache.clear()
            ws = cls._cache[key] = cls(b, j, cfg, dtype)
        return ws


def _np_mlp(p: dict[str, np.ndarray], prefix: str, x: np.ndarray,
            hidden: np.ndarray | None = None,
            out: np.ndarray | None = None) -> np.ndarray:
    if hidden is None:
        h = x @ p[f"{prefix}.w1"]
    else:
        h = np.matmul(x, p[f"{prefix}.w1"], out=hidden)
    h += p[f"{prefix}.b1"]
    np.maximum(h, 0.0, out=h)
    if out is None:
        o = h @ p[f"{prefix}.w2"]
    else:
        o = np.matmul(h, p[f"{prefix}.w2"], out=out)
    o += p[f"{prefix}.b2"]
    return o


def velocity_infer(x_t: np.ndarray, t: np.ndarray, cond: np.ndarray,
                   params: dict[str, np.ndarray], adjn: np.ndarray,
                   cfg: NetConfig) -> np.ndarray:
    """Plain-numpy forward pass matching `velocity_forward` without
    building an autodiff graph. This is the inference hot path; keep it in
    sync with the Tensor version. Computes in the dtype of `adjn`."""
    squeeze = x_t.ndim == 2
    if squeeze:
        x_t = x_t[None]
        cond = cond[None]
    b, j, _ = x_t.shape
    p = params
    bw, heads = cfg.branch_width, cfg.heads
    dh = bw // heads
    dx, dc, dt = cfg.embed_widths
    dtype = adjn.dtype
    scale = dtype.type(1.0 / np.sqrt(dh))
    x_t = np.ascontiguousarray(x_t, dtype=dtype)
    cond = np.ascontiguousarray(cond, dtype=dtype)
    t = np.ascontiguousarray(np.atleast_1d(t), dtype=dtype)
    ws = _Workspace.get(b, j, cfg, dtype)

    # All matmuls stay in stacked (b, ., .) form: each sample's slice then
    # goes through the same BLAS call whatever the batch size, so results
    # are bit-identical between batched and one-at-a-time sampling.
    feats = ws.feats
    _np_mlp(p, "embed3d", x_t, hidden=ws.e3h, out=feats[:, :, :dx])
    # a (1, J, 2) condition is shared by the whole batch (multi-hypothesis
    # sampling for one observation); embed it once and broadcast
    m = cond.shape[0]
    e2 = _np_mlp(p, "embed2d", cond, hidden=ws.e2h[:m], out=ws.e2o[:m])
    feats[:, :, dx:dx + dc] = e2
    # likewise the time embedding when the batch shares one ODE time
    mt = 1 if (t.shape[0] == 1 or bool(np.all(t == t[0]))) else b
    et = _np_mlp(p, "embedt", t[:mt].reshape(mt, 1, 1),
                 hidden=ws.eth[:mt], out=ws.eto[:mt])
    feats[:, :, dx + dc:] = et

    for l in range(cfg.blocks):
        np.matmul(adjn, feats, out=ws.local3)
        np.matmul(ws.local3, p[f"block{l}.gcn.w"], out=ws.local)
        np.maximum(ws.local, 0.0, out=ws.local)

        # one fused projection for q, k, v: concatenating weight columns
        # leaves each output column's dot product unchanged
        wqkv = np.concatenate([p[f"block{l}.attn.w{n}"] for n in "qkv"],
                              axis=1)
        bqkv = np.concatenate([p[f"block{l}.attn.b{n}"] for n in "qkv"])
        np.matmul(feats, wqkv, out=ws.qkv)
        ws.qkv += bqkv
        split = ws.qkv.reshape(b, j, 3, heads, dh)
        np.copyto(ws.qh, split[:, :, 0].transpose(0, 2, 1, 3))
        np.copyto(ws.kh, split[:, :, 1].transpose(0, 2, 1, 3))
        np.copyto(ws.vh, split[:, :, 2].transpose(0, 2, 1, 3))
        np.matmul(ws.qh, ws.kh.transpose(0, 1, 3, 2), out=ws.logits)
        ws.logits *= scale
        # no max-shift here: attention logits stay small in practice, and
        # an overflow still fails loudly via the finiteness check below
        np.exp(ws.logits, out=ws.logits)
        np.matmul(ws.logits, ws.ones_j, out=ws.red)
        ws.logits /= ws.red
        np.matmul(ws.logits, ws.vh, out=ws.ctx)
        np.copyto(ws.glob.reshape(b, j, heads, dh),
                  ws.ctx.transpose(0, 2, 1, 3))
        np.matmul(ws.glob, p[f"block{l}.attn.wo"], out=ws.glob2)
        ws.glob2 += p[f"block{l}.attn.bo"]

        fused = ws.fused
        fused[:, :, :bw] = ws.local
        fused[:, :, bw:] = ws.glob2
        np.matmul(fused, ws.ones_d, out=ws.row)      # per-row mean
        fused -= ws.row
        np.multiply(fused, fused, out=ws.hidden)
        np.matmul(ws.hidden, ws.ones_d, out=ws.row)  # per-row variance
        ws.row += 1e-5
        np.sqrt(ws.row, out=ws.row)
        np.reciprocal(ws.row, out=ws.row)
        fused *= ws.row
        fused *= p[f"block{l}.ln.gamma"]
        fused += p[f"block{l}.ln.beta"]

        out = _np_mlp(p, f"block{l}.mlp", fused, hidden=ws.hidden,
                      out=feats if not cfg.residual else None)
        if cfg.residual:
            feats += out
        if not np.all(np.isfinite(feats)):
            raise FloatingPointError(f"non-finite activation after block {l}")

    vel = _np_mlp(p, "head", feats, hidden=ws.hidden)
    return vel[0] if squeeze else vel


def collect_grads(leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in leaves.items()}
