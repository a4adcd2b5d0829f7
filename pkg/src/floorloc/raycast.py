"""Equiangular ray bundles cast against the semantic grid.

Rays traverse cells exactly (no sampling); any nonzero cell is opaque, so
windows and doors are hits carrying their own label. Ray 0 of a bundle is the
LEFTMOST ray in image space, at bearing theta + fov/2; bearings decrease
left-to-right. Prediction files must follow the same ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .floorplan import SemanticFloorplan

NO_HIT = _kernels.LABEL_NO_HIT

DEFAULT_MAX_RANGE = 15.0


class RaycastError(ValueError):
    pass


class PoseOutsideGrid(RaycastError):
    pass


class PoseInStructure(RaycastError):
    pass


@dataclass(frozen=True)
class Pose:
    """2D camera pose: metric position plus orientation in degrees."""

    x: float
    y: float
    theta_deg: float

    def wrapped(self) -> "Pose":
        return Pose(self.x, self.y, self.theta_deg % 360.0)

    def key(self) -> tuple[float, float, float]:
        """Deterministic ordering key (x, y, theta)."""
        return (self.x, self.y, self.theta_deg % 360.0)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera reduced to a fan of equiangular rays."""

    fov_deg: float = 80.0
    ray_count: int = 40
    max_range: float = DEFAULT_MAX_RANGE

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("fov must be in (0, 180) degrees")
        if self.ray_count < 1:
            raise ValueError("ray_count must be >= 1")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")

    @property
    def gap_deg(self) -> float:
        """Angular gap between adjacent rays (0 for a single ray)."""
        if self.ray_count == 1:
            return 0.0
        return self.fov_deg / (self.ray_count - 1)

    def bearings(self, theta_deg: float) -> np.ndarray:
        """Absolute ray bearings, leftmost first."""
        if self.ray_count == 1:
            return np.array([theta_deg], dtype=np.float64)
        i = np.arange(self.ray_count, dtype=np.float64)
        return theta_deg + self.fov_deg / 2.0 - i * self.gap_deg


@dataclass
class RayBundle:
    """Per-ray depths (meters) and semantic labels for one camera pose."""

    depths: np.ndarray
    labels: np.ndarray
    pose: Pose | None = None
    camera: CameraModel | None = None

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.depths.shape != self.labels.shape:
            raise ValueError("depths and labels must have equal length")

    def __len__(self) -> int:
        return len(self.depths)


def _raise_for_sentinel(label: int, origin) -> None:
    if label == _kernels.LABEL_OUTSIDE:
        raise PoseOutsideGrid(f"ray origin {origin} outside grid bounds")
    if label == _kernels.LABEL_IN_STRUCTURE:
        raise PoseInStructure(f"ray origin {origin} inside structure")


def cast_ray(fp: SemanticFloorplan, origin: tuple[float, float], angle_deg: float,
             max_range: float = DEFAULT_MAX_RANGE) -> tuple[float, int]:
    """Distance and label of the first structure cell along one ray.

    Returns (max_range, NO_HIT) when nothing is struck within range.
    """
    rad = np.radians(np.array([angle_deg], dtype=np.float64))
    dxs, dys = np.cos(rad), np.sin(rad)
    depths, labels = _kernels.cast_rays_batch(
        fp.cells, fp.spec.resolution, fp.spec.origin,
        np.array([origin[0]], dtype=np.float64),
        np.array([origin[1]], dtype=np.float64),
        dxs, dys, max_range)
    _raise_for_sentinel(int(labels[0]), origin)
    return float(depths[0]), int(labels[0])


def cast_bundle(fp: SemanticFloorplan, pose: Pose, cam: CameraModel,
                workers: int = 1) -> RayBundle:
    """Cast the camera's full equiangular fan from a pose."""
    bearings = cam.bearings(pose.theta_deg)
    rad = np.radians(bearings)
    dxs, dys = np.cos(rad), np.sin(rad)
    xs = np.full(cam.ray_count, pose.x, dtype=np.float64)
    ys = np.full(cam.ray_count, pose.y, dtype=np.float64)
    depths, labels = _kernels.cast_rays_batch(
        fp.cells, fp.spec.resolution, fp.spec.origin,
        xs, ys, dxs, dys, cam.max_range, workers=workers)
    _raise_for_sentinel(int(labels[0]), (pose.x, pose.y))
    return RayBundle(depths=depths, labels=labels, pose=pose, camera=cam)


def cast_bundles_at(fp: SemanticFloorplan, poses: list[Pose], cam: CameraModel,
                    workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Batch-cast bundles for many poses in one kernel call.

    Returns (depths, labels) of shape (len(poses), ray_count); poses whose
    origin is invalid get sentinel labels (-2/-3) on every ray instead of an
    exception, so callers can skip them.
    """
    n = len(poses)
    l = cam.ray_count
    bearings = np.empty((n, l), dtype=np.float64)
    xs = np.empty((n, l), dtype=np.float64)
    ys = np.empty((n, l), dtype=np.float64)
    for j, pose in enumerate(poses):
        bearings[j] = cam.bearings(pose.theta_deg)
        xs[j] = pose.x
        ys[j] = pose.y
    rad = np.radians(bearings.ravel())
    dxs, dys = np.cos(rad), np.sin(rad)
    depths, labels = _kernels.cast_rays_batch(
        fp.cells, fp.spec.resolution, fp.spec.origin,
        xs.ravel(), ys.ravel(), dxs, dys, cam.max_range, workers=workers)
    return depths.reshape(n, l), labels.reshape(n, l)
