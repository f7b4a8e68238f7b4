"""Perspective camera mapping root-relative 3D poses (mm) to normalized 2D.

The camera stores the per-sample root depth, so projection of a
root-relative pose is u = fx*x/(z_root+z) + cx, v = fy*y/(z_root+z) + cy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    z_root: float  # mm, distance of the root joint from the camera plane

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy, self.z_root])

    @staticmethod
    def from_array(a) -> "Camera":
        return Camera(*(float(v) for v in a))


def project(pose3d: np.ndarray, cam: Camera) -> np.ndarray:
    """Project (..., J, 3) root-relative mm to (..., J, 2) normalized coords."""
    z = cam.z_root + pose3d[..., 2]
    if np.any(z <= 0):
        raise ValueError("pose behind camera: nonpositive depth at some joint")
    u = cam.fx * pose3d[..., 0] / z + cam.cx
    v = cam.fy * pose3d[..., 1] / z + cam.cy
    return np.stack([u, v], axis=-1)


def reprojection_loss(hyp3d: np.ndarray, observed2d: np.ndarray,
                      cam: Camera) -> np.ndarray:
    """Per-joint squared 2D distance between the projected hypothesis and
    the observed pose. hyp3d may be batched: (..., J, 3) -> (..., J)."""
    proj = project(hyp3d, cam)
    diff = proj - observed2d
    return (diff * diff).sum(axis=-1)
