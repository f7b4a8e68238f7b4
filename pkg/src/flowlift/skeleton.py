"""Skeleton topology: joint tree, root, and left/right mirror map.

The text format is line-based:
    J <count>
    root <r>
    edge <parent> <child>      (one per bone)
    mirror <a> <b>             (one per left/right pair)
Edges must form a tree over all joints; the mirror map is an involution
fixing the root.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class Skeleton:
    n_joints: int
    edges: tuple[tuple[int, int], ...]  # (parent, child)
    root: int
    mirror: tuple[int, ...]  # involutive permutation, mirror[root] == root
    joint_names: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        j = self.n_joints
        if not (0 <= self.root < j):
            raise SkeletonError(f"root {self.root} out of range for {j} joints")
        if len(self.edges) != j - 1:
            raise SkeletonError(
                f"{len(self.edges)} edges cannot form a tree over {j} joints")
        seen = {self.root}
        for a, b in self.edges:
            if not (0 <= a < j and 0 <= b < j):
                raise SkeletonError(f"edge ({a}, {b}) out of range")
        # tree check: every child reachable from the root exactly once
        children: dict[int, list[int]] = {}
        for a, b in self.edges:
            children.setdefault(a, []).append(b)
        stack = [self.root]
        while stack:
            node = stack.pop()
            for c in children.get(node, []):
                if c in seen:
                    raise SkeletonError(f"joint {c} has multiple parents or a cycle")
                seen.add(c)
                stack.append(c)
        if len(seen) != j:
            missing = sorted(set(range(j)) - seen)
            raise SkeletonError(f"joints {missing} unreachable from root (disconnected)")
        if len(self.mirror) != j:
            raise SkeletonError("mirror map length does not match joint count")
        for a in range(j):
            b = self.mirror[a]
            if not (0 <= b < j) or self.mirror[b] != a:
                raise SkeletonError("mirror map is not an involution")
        if self.mirror[self.root] != self.root:
            raise SkeletonError("root joint must be mirror-fixed")

    @property
    def parent(self) -> dict[int, int]:
        return {b: a for a, b in self.edges}

    def topo_order(self) -> list[int]:
        """Joints ordered root-first, parents before children."""
        children: dict[int, list[int]] = {}
        for a, b in self.edges:
            children.setdefault(a, []).append(b)
        order = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            order.append(node)
            for c in sorted(children.get(node, []), reverse=True):
                stack.append(c)
        return order


def flip_2d(pose: np.ndarray, skel: Skeleton) -> np.ndarray:
    """Mirror a (J, 2) pose: negate x, swap left/right joint rows."""
    out = pose[list(skel.mirror)].copy()
    out[:, 0] *= -1.0
    return out


def flip_3d(pose: np.ndarray, skel: Skeleton) -> np.ndarray:
    """Mirror a (..., J, 3) pose: negate x, swap left/right joint rows."""
    out = pose[..., list(skel.mirror), :].copy()
    out[..., 0] *= -1.0
    return out


def save_skeleton(path: str | Path, skel: Skeleton) -> None:
    lines = [f"J {skel.n_joints}", f"root {skel.root}"]
    lines += [f"edge {a} {b}" for a, b in skel.edges]
    lines += [f"mirror {a} {skel.mirror[a]}"
              for a in range(skel.n_joints) if a < skel.mirror[a]]
    Path(path).write_text("\n".join(lines) + "\n")


def load_skeleton(path: str | Path) -> Skeleton:
    n_joints = None
    root = None
    edges: list[tuple[int, int]] = []
    pairs: list[tuple[int, int]] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "J" and len(parts) == 2:
                n_joints = int(parts[1])
            elif parts[0] == "root" and len(parts) == 2:
                root = int(parts[1])
            elif parts[0] == "edge" and len(parts) == 3:
                edges.append((int(parts[1]), int(parts[2])))
            elif parts[0] == "mirror" and len(parts) == 3:
                pairs.append((int(parts[1]), int(parts[2])))
            else:
                raise ValueError
        except ValueError:
            raise SkeletonError(f"{path}:{lineno}: cannot parse line {raw!r}")
    if n_joints is None or root is None:
        raise SkeletonError(f"{path}: missing 'J' or 'root' line")
    mirror = list(range(n_joints))
    for a, b in pairs:
        mirror[a] = b
        mirror[b] = a
    return Skeleton(n_joints, tuple(edges), root, tuple(mirror))


# 17-joint human topology (pelvis-rooted), standard bone proportions in mm.
_HUMAN17_NAMES = (
    "pelvis", "rhip", "rknee", "rfoot", "lhip", "lknee", "lfoot",
    "spine", "thorax", "neck", "head",
    "lshoulder", "lelbow", "lwrist", "rshoulder", "relbow", "rwrist",
)
_HUMAN17_EDGES = (
    (0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (5, 6),
    (0, 7), (7, 8), (8, 9), (9, 10),
    (8, 11), (11, 12), (12, 13), (8, 14), (14, 15), (15, 16),
)
_HUMAN17_MIRROR_PAIRS = ((1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16))

HUMAN17_BONE_MM = {
    (0, 1): 130.0, (1, 2): 450.0, (2, 3): 440.0,
    (0, 4): 130.0, (4, 5): 450.0, (5, 6): 440.0,
    (0, 7): 230.0, (7, 8): 250.0, (8, 9): 120.0, (9, 10): 115.0,
    (8, 11): 150.0, (11, 12): 280.0, (12, 13): 250.0,
    (8, 14): 150.0, (14, 15): 280.0, (15, 16): 250.0,
}

# 26-joint quadruped: spine chain, head, tail, four 3-segment legs.
_ANIMAL26_EDGES = (
    (0, 1), (1, 2), (2, 3),            # spine: pelvis->chest
    (3, 4), (4, 5),                    # neck, head
    (0, 6), (6, 7),                    # tail
    (3, 8), (8, 9), (9, 10),           # left front leg
    (3, 11), (11, 12), (12, 13),       # right front leg
    (0, 14), (14, 15), (15, 16),       # left hind leg
    (0, 17), (17, 18), (18, 19),       # right hind leg
    (5, 20), (5, 21),                  # left/right ear
    (10, 22), (13, 23), (16, 24), (19, 25),  # paws
)
_ANIMAL26_MIRROR_PAIRS = (
    (8, 11), (9, 12), (10, 13), (14, 17), (15, 18), (16, 19),
    (20, 21), (22, 23), (24, 25),
)

ANIMAL26_BONE_MM = {
    (0, 1): 180.0, (1, 2): 180.0, (2, 3): 180.0,
    (3, 4): 150.0, (4, 5): 140.0,
    (0, 6): 160.0, (6, 7): 160.0,
    (3, 8): 120.0, (8, 9): 220.0, (9, 10): 200.0,
    (3, 11): 120.0, (11, 12): 220.0, (12, 13): 200.0,
    (0, 14): 120.0, (14, 15): 240.0, (15, 16): 210.0,
    (0, 17): 120.0, (17, 18): 240.0, (18, 19): 210.0,
    (5, 20): 70.0, (5, 21): 70.0,
    (10, 22): 60.0, (13, 23): 60.0, (16, 24): 60.0, (19, 25): 60.0,
}


def _mirror_from_pairs(n: int, pairs) -> tuple[int, ...]:
    mirror = list(range(n))
    for a, b in pairs:
        mirror[a] = b
        mirror[b] = a
    return tuple(mirror)


def human17() -> Skeleton:
    return Skeleton(17, _HUMAN17_EDGES, 0,
                    _mirror_from_pairs(17, _HUMAN17_MIRROR_PAIRS),
                    _HUMAN17_NAMES)


def animal26() -> Skeleton:
    return Skeleton(26, _ANIMAL26_EDGES, 0,
                    _mirror_from_pairs(26, _ANIMAL26_MIRROR_PAIRS))


def default_bone_lengths(skel: Skeleton) -> dict[tuple[int, int], float]:
    if skel.n_joints == 17 and skel.edges == _HUMAN17_EDGES:
        return dict(HUMAN17_BONE_MM)
    if skel.n_joints == 26 and skel.edges == _ANIMAL26_EDGES:
        return dict(ANIMAL26_BONE_MM)
    return {e: 200.0 for e in skel.edges}
