"""Synthetic paired 2D/3D pose data from forward kinematics.

Each sample is drawn by perturbing per-bone rest directions with random
rotations, placing joints by forward kinematics (bone lengths exact by
construction), spinning the whole pose about the vertical axis, and
projecting through a perspective camera with a randomized root depth.
The 2D observation is the projection plus optional isotropic Gaussian
noise. Everything is keyed by per-sample counter-based RNG streams, so a
given seed always yields a byte-identical dataset file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import Camera, project
from .skeleton import Skeleton, default_bone_lengths

MAGIC = b"FLDS"
VERSION = 1

_CAM_FIELDS = 5


class DatasetError(Exception):
    pass


class MalformedHeaderError(DatasetError):
    pass


class UnsupportedVersionError(DatasetError):
    pass


class TruncatedError(DatasetError):
    pass


class SkeletonMismatchError(DatasetError):
    pass


@dataclass
class Dataset:
    skel: Skeleton
    poses3d: np.ndarray   # (n, J, 3) mm, root-relative
    poses2d: np.ndarray   # (n, J, 2) normalized image coords
    cameras: np.ndarray   # (n, 5): fx, fy, cx, cy, z_root
    noise_std: float
    seed: int

    def __len__(self) -> int:
        return self.poses3d.shape[0]

    def camera(self, i: int) -> Camera:
        return Camera.from_array(self.cameras[i])


# rest directions for the 17-joint human (x lateral, y down, z depth)
_HUMAN17_REST = {
    (0, 1): (1, 0, 0), (1, 2): (0, 1, 0), (2, 3): (0, 1, 0),
    (0, 4): (-1, 0, 0), (4, 5): (0, 1, 0), (5, 6): (0, 1, 0),
    (0, 7): (0, -1, 0), (7, 8): (0, -1, 0), (8, 9): (0, -1, 0),
    (9, 10): (0, -1, 0),
    (8, 11): (-1, 0, 0), (11, 12): (0, 1, 0), (12, 13): (0, 1, 0),
    (8, 14): (1, 0, 0), (14, 15): (0, 1, 0), (15, 16): (0, 1, 0),
}


def rest_directions(skel: Skeleton) -> dict[tuple[int, int], np.ndarray]:
    """Unit rest direction per bone, mirror-symmetric in x."""
    if skel.n_joints == 17 and set(skel.edges) == set(_HUMAN17_REST):
        return {e: np.array(d, dtype=float) for e, d in _HUMAN17_REST.items()}
    dirs = {}
    for p, c in skel.edges:
        if skel.mirror[c] != c:
            s = 1.0 if c < skel.mirror[c] else -1.0
            d = np.array([s, 0.5, 0.0])
        else:
            d = np.array([0.0, 1.0, 0.0])
        dirs[(p, c)] = d / np.linalg.norm(d)
    return dirs


def _rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


@dataclass(frozen=True)
class SamplerConfig:
    max_bone_angle_deg: float = 90.0   # cone half-angle around rest direction
    body_scale_range: tuple[float, float] = (0.7, 1.4)  # per-sample size factor
    fx: float = 1.2
    fy: float = 1.2
    z_root_range: tuple[float, float] = (3000.0, 8000.0)
    max_retries: int = 100


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed,
                                                counter=[0, 0, 0, index]))


def sample_pose(skel: Skeleton, bone_mm: dict[tuple[int, int], float],
                cfg: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    """One (J, 3) root-relative pose in mm via forward kinematics."""
    dirs = rest_directions(skel)
    pose = np.zeros((skel.n_joints, 3))
    parent = skel.parent
    max_angle = np.deg2rad(cfg.max_bone_angle_deg)
    yaw = _rotation(np.array([0.0, 1.0, 0.0]), rng.uniform(0.0, 2 * np.pi))
    for c in skel.topo_order():
        if c == skel.root:
            continue
        p = parent[c]
        axis = rng.standard_normal(3)
        angle = rng.uniform(0.0, max_angle)
        direction = _rotation(axis, angle) @ dirs[(p, c)]
        pose[c] = pose[p] + bone_mm[(p, c)] * direction
    return pose @ yaw.T


def generate(skel: Skeleton, n: int, noise_std: float = 0.0, seed: int = 0,
             cfg: SamplerConfig = SamplerConfig(),
             bone_mm: dict[tuple[int, int], float] | None = None) -> Dataset:
    """Generate n paired samples; fully determined by (skel, cfg, seed)."""
    if n < 1:
        raise ValueError("need at least one sample")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    if bone_mm is None:
        bone_mm = default_bone_lengths(skel)
    j = skel.n_joints
    poses3d = np.empty((n, j, 3))
    poses2d = np.empty((n, j, 2))
    cameras = np.empty((n, _CAM_FIELDS))
    lo, hi = cfg.z_root_range
    slo, shi = cfg.body_scale_range
    for i in range(n):
        rng = _sample_rng(seed, i)
        # per-sample body size; with depth unknown this makes the scale of
        # the 3D pose genuinely ambiguous given only its 2D projection
        body = rng.uniform(slo, shi)
        scaled = {e: body * l for e, l in bone_mm.items()}
        for attempt in range(cfg.max_retries):
            pose = sample_pose(skel, scaled, cfg, rng)
            cam = Camera(cfg.fx, cfg.fy, 0.0, 0.0, rng.uniform(lo, hi))
            if np.all(cam.z_root + pose[:, 2] > 0):
                break
        else:
            raise DatasetError(
                f"sample {i}: no valid pose in {cfg.max_retries} attempts "
                "(pose behind camera)")
        clean2d = project(pose, cam)
        noise = noise_std * rng.standard_normal(clean2d.shape)
        poses3d[i] = pose
        poses2d[i] = clean2d + noise
        cameras[i] = cam.as_array()
    return Dataset(skel, poses3d, poses2d, cameras, noise_std, seed)


def save(dataset: Dataset, path: str | Path) -> None:
    skel = dataset.skel
    n = len(dataset)
    head = [MAGIC, struct.pack("<B", VERSION),
            struct.pack("<II", skel.n_joints, n),
            struct.pack("<d", dataset.noise_std),
            struct.pack("<q", dataset.seed),
            struct.pack("<I", skel.root)]
    head.append(struct.pack("<I", len(skel.edges)))
    for a, b in skel.edges:
        head.append(struct.pack("<II", a, b))
    head.append(np.asarray(skel.mirror, dtype="<u4").tobytes())
    body = np.concatenate([
        dataset.poses3d.reshape(n, -1),
        dataset.poses2d.reshape(n, -1),
        dataset.cameras,
    ], axis=1).astype("<f8")
    Path(path).write_bytes(b"".join(head) + body.tobytes())


def load(path: str | Path, expected_skel: Skeleton | None = None) -> Dataset:
    buf = Path(path).read_bytes()
    pos = 0

    def take(nbytes: int) -> bytes:
        nonlocal pos
        if pos + nbytes > len(buf):
            raise TruncatedError(
                f"{path}: truncated at offset {pos} (wanted {nbytes} bytes)")
        out = buf[pos:pos + nbytes]
        pos += nbytes
        return out

    if take(4) != MAGIC:
        raise MalformedHeaderError(f"{path}: not a flowlift dataset file")
    (version,) = struct.unpack("<B", take(1))
    if version != VERSION:
        raise UnsupportedVersionError(
            f"{path}: unsupported dataset version {version}")
    j, n = struct.unpack("<II", take(8))
    (noise_std,) = struct.unpack("<d", take(8))
    (seed,) = struct.unpack("<q", take(8))
    (root,) = struct.unpack("<I", take(4))
    (n_edges,) = struct.unpack("<I", take(4))
    edges = tuple(struct.unpack("<II", take(8)) for _ in range(n_edges))
    mirror = tuple(np.frombuffer(take(4 * j), dtype="<u4").astype(int))
    skel = Skeleton(j, edges, root, mirror)
    if expected_skel is not None and (
            skel.n_joints != expected_skel.n_joints
            or skel.edges != expected_skel.edges
            or skel.mirror != expected_skel.mirror
            or skel.root != expected_skel.root):
        raise SkeletonMismatchError(
            f"{path}: stored skeleton does not match the expected one")
    row = 3 * j + 2 * j + _CAM_FIELDS
    body = np.frombuffer(take(8 * n * row), dtype="<f8").reshape(n, row)
    if pos != len(buf):
        raise TruncatedError(f"{path}: {len(buf) - pos} trailing bytes")
    poses3d = body[:, :3 * j].reshape(n, j, 3).copy()
    poses2d = body[:, 3 * j:5 * j].reshape(n, j, 2).copy()
    cameras = body[:, 5 * j:].copy()
    return Dataset(skel, poses3d, poses2d, cameras, noise_std, seed)


def export_csv(dataset: Dataset, path: str | Path) -> None:
    """Human-readable debug dump: one row per joint per sample."""
    with open(path, "w") as fh:
        fh.write("sample,joint,x3d,y3d,z3d,u2d,v2d,fx,fy,cx,cy,z_root\n")
        for i in range(len(dataset)):
            cam = ",".join(f"{v:.9g}" for v in dataset.cameras[i])
            for jidx in range(dataset.skel.n_joints):
                p3 = ",".join(f"{v:.9g}" for v in dataset.poses3d[i, jidx])
                p2 = ",".join(f"{v:.9g}" for v in dataset.poses2d[i, jidx])
                fh.write(f"{i},{jidx},{p3},{p2},{cam}\n")
