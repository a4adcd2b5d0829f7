"""Probability volumes over the discretized pose space.

A volume stores one nonnegative score per (cell-y, cell-x, orientation-bin)
pose, C-contiguous in exactly the (y, x, bin) order used by the binary export.
Reference rays for every pose share one angle comb per (bin, coarse-ray)
pair, so a whole scene's reference depth/label fields are cast in a single
kernel batch and reused across queries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .floorplan import GridSpec, SemanticFloorplan
from .raycast import CameraModel, Pose
from .rays import semantic_mismatch

VOLUME_MAGIC = b"FLPV"

NORMALIZATION_TOLERANCE = 1e-6


class VolumeError(ValueError):
    pass


@dataclass(frozen=True)
class PoseGrid:
    """Pose discretization: the floorplan's grid spec plus orientation bins."""

    spec: GridSpec
    orientation_bins: int = 36

    def __post_init__(self):
        if self.orientation_bins < 1:
            raise VolumeError("need at least one orientation bin")

    @property
    def orientation_step(self) -> float:
        return 360.0 / self.orientation_bins

    def bin_angle(self, k: int) -> float:
        return k * self.orientation_step

    def nearest_bin(self, theta_deg: float) -> int:
        return int(round((theta_deg % 360.0) / self.orientation_step)) % self.orientation_bins

    def pose_of(self, ix: int, iy: int, k: int) -> Pose:
        x, y = self.spec.center_of(ix, iy)
        return Pose(x, y, self.bin_angle(k))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.spec.height_cells, self.spec.width_cells, self.orientation_bins)


@dataclass
class ProbabilityVolume:
    """Dense nonnegative score field over the pose grid."""

    grid: PoseGrid
    values: np.ndarray  # (H, W, O) float64, indexed [iy, ix, bin]
    normalized: bool = False

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise VolumeError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}"
            )
        if (self.values < 0).any():
            raise VolumeError("volume values must be nonnegative")

    def total(self) -> float:
        return float(self.values.sum())

    def normalize(self) -> "ProbabilityVolume":
        s = self.total()
        if s <= 0.0:
            raise VolumeError("cannot normalize an all-zero volume")
        return ProbabilityVolume(self.grid, self.values / s, normalized=True)


@dataclass
class ReferenceFields:
    """Cached reference rays for every (cell, bin, coarse-ray) of a scene."""

    grid: PoseGrid
    camera: CameraModel
    depths: np.ndarray  # (O * V, H, W)
    labels: np.ndarray  # (O * V, H, W)
    free: np.ndarray    # (H, W) bool


def coarse_angle_comb(grid: PoseGrid, cam: CameraModel) -> np.ndarray:
    """Absolute bearing of coarse ray i for orientation bin k, flattened k*V+i."""
    bins = np.arange(grid.orientation_bins, dtype=np.float64) * grid.orientation_step
    if cam.ray_count == 1:
        rel = np.array([0.0])
    else:
        rel = cam.fov_deg / 2.0 - np.arange(cam.ray_count, dtype=np.float64) * cam.gap_deg
    return (bins[:, None] + rel[None, :]).ravel()


def reference_fields(fp: SemanticFloorplan, grid: PoseGrid, cam: CameraModel,
                     workers: int = 1) -> ReferenceFields:
    """Cast the full reference-ray field for a scene in one kernel batch."""
    if grid.spec != fp.spec:
        raise VolumeError("pose grid does not share the floorplan's grid spec")
    h, w = fp.spec.height_cells, fp.spec.width_cells
    angles = coarse_angle_comb(grid, cam)
    a = len(angles)
    rad = np.radians(angles)
    dir_x, dir_y = np.cos(rad), np.sin(rad)
    cx = fp.spec.origin[0] + (np.arange(w) + 0.5) * fp.spec.resolution
    cy = fp.spec.origin[1] + (np.arange(h) + 0.5) * fp.spec.resolution
    gx, gy = np.meshgrid(cx, cy)  # (H, W)
    xs = np.broadcast_to(gx, (a, h, w)).ravel()
    ys = np.broadcast_to(gy, (a, h, w)).ravel()
    dxs = np.repeat(dir_x, h * w)
    dys = np.repeat(dir_y, h * w)
    depths, labels = _kernels.cast_rays_batch(
        fp.cells, fp.spec.resolution, fp.spec.origin,
        xs, ys, dxs, dys, cam.max_range, workers=workers)
    return ReferenceFields(
        grid=grid, camera=cam,
        depths=depths.reshape(a, h, w),
        labels=labels.reshape(a, h, w),
        free=np.asarray(fp.cells == 0),
    )


def _finalize(raw_oyx: np.ndarray, free: np.ndarray, grid: PoseGrid) -> ProbabilityVolume:
    """Zero non-free poses, move bins to the minor axis, normalize."""
    if not free.any():
        raise VolumeError("no free poses: floorplan is entirely structure")
    raw = np.ascontiguousarray(np.moveaxis(raw_oyx, 0, 2))
    raw *= free[:, :, None]
    return ProbabilityVolume(grid, raw).normalize()


def build_depth_volume(fp: SemanticFloorplan, pred_depths, cam_lowres: CameraModel,
                       grid: PoseGrid, lambda_d: float = 1.0, workers: int = 1,
                       fields: ReferenceFields | None = None) -> ProbabilityVolume:
    """Score every pose by exp(-lambda_d * mean |predicted - reference| depth)."""
    pred = np.asarray(pred_depths, dtype=np.float64)
    if pred.shape != (cam_lowres.ray_count,):
        raise VolumeError(f"expected {cam_lowres.ray_count} coarse depths, got {pred.shape}")
    if (pred <= 0).any():
        raise VolumeError("predicted depths must be positive")
    if fields is None:
        fields = reference_fields(fp, grid, cam_lowres, workers=workers)
    o, v = grid.orientation_bins, cam_lowres.ray_count
    h, w = grid.spec.height_cells, grid.spec.width_cells
    ref = fields.depths.reshape(o, v, h, w)
    err = np.abs(ref - pred[None, :, None, None]).mean(axis=1)
    return _finalize(np.exp(-lambda_d * err), fields.free, grid)


def build_semantic_volume(fp: SemanticFloorplan, pred_labels, cam_lowres: CameraModel,
                          grid: PoseGrid, lambda_s: float = 1.0, workers: int = 1,
                          semantic_metric: str = "binary",
                          fields: ReferenceFields | None = None) -> ProbabilityVolume:
    """Score every pose by exp(-lambda_s * mean label mismatch)."""
    pred = np.asarray(pred_labels, dtype=np.int32)
    if pred.shape != (cam_lowres.ray_count,):
        raise VolumeError(f"expected {cam_lowres.ray_count} coarse labels, got {pred.shape}")
    if fields is None:
        fields = reference_fields(fp, grid, cam_lowres, workers=workers)
    o, v = grid.orientation_bins, cam_lowres.ray_count
    h, w = grid.spec.height_cells, grid.spec.width_cells
    ref = fields.labels.reshape(o, v, h, w)
    if semantic_metric == "binary":
        err = (ref != pred[None, :, None, None]).mean(axis=1)
    elif semantic_metric == "l1":
        err = np.abs(ref.astype(np.int64) - pred[None, :, None, None]).mean(axis=1)
    else:
        raise VolumeError(f"unknown semantic metric {semantic_metric!r}")
    return _finalize(np.exp(-lambda_s * err), fields.free, grid)


def fuse(ps: ProbabilityVolume, pd: ProbabilityVolume, w_s: float) -> ProbabilityVolume:
    """Convex combination w_s * P_s + (1 - w_s) * P_d, renormalized defensively."""
    if ps.grid != pd.grid:
        raise VolumeError("cannot fuse volumes over different pose grids")
    if not (ps.normalized and pd.normalized):
        raise VolumeError("fuse expects normalized inputs")
    if not 0.0 <= w_s <= 1.0:
        raise VolumeError("w_s must be in [0, 1]")
    combined = w_s * ps.values + (1.0 - w_s) * pd.values
    out = ProbabilityVolume(ps.grid, combined, normalized=True)
    # A convex combination of normalized volumes already sums to one; only
    # renormalize when it measurably does not, so the w_s = 0 and w_s = 1
    # endpoints reproduce their input volume exactly.
    if abs(out.total() - 1.0) > 1e-12:
        out = out.normalize()
    return out


MASK_APPLIED = "applied"
MASK_SKIPPED = "skipped-threshold"
MASK_DEGENERATE = "mask-degenerate"


def apply_mask(p: ProbabilityVolume, mask: np.ndarray,
               threshold_ok: bool = True) -> tuple[ProbabilityVolume, str]:
    """Zero all poses outside the mask and renormalize.

    Returns (volume, status). When the threshold gate fails the volume passes
    through untouched; when the mask would zero everything the unmasked volume
    is returned with the mask-degenerate status so callers never lose the
    whole distribution to a bad mask.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != p.values.shape:
        raise VolumeError(f"mask shape {mask.shape} != volume shape {p.values.shape}")
    if not threshold_ok:
        return p, MASK_SKIPPED
    masked = p.values * mask
    total = masked.sum()
    if total <= 0.0:
        return p, MASK_DEGENERATE
    return ProbabilityVolume(p.grid, masked / total, normalized=True), MASK_APPLIED


def argmax_pose(p: ProbabilityVolume) -> Pose:
    """Pose of the global maximum; ties go to the smallest (y, x, bin)."""
    if p.values.max() <= 0.0:
        raise VolumeError("argmax of an all-zero volume")
    iy, ix, k = np.unravel_index(int(np.argmax(p.values)), p.values.shape)
    return p.grid.pose_of(int(ix), int(iy), int(k))


def argmax_index(p: ProbabilityVolume) -> tuple[int, int, int]:
    iy, ix, k = np.unravel_index(int(np.argmax(p.values)), p.values.shape)
    return int(iy), int(ix), int(k)


def save_volume(p: ProbabilityVolume, path: str | Path) -> None:
    """Binary export: FLPV magic, u32 dims, then f32 values in (y, x, bin) order."""
    h, w, o = p.values.shape
    header = VOLUME_MAGIC + struct.pack("<III", h, w, o)
    Path(path).write_bytes(header + p.values.astype("<f4").tobytes())


def load_volume(path: str | Path, spec: GridSpec | None = None):
    """Read a volume file; returns a ProbabilityVolume when a spec is supplied,
    otherwise the raw (H, W, O) float32 array."""
    blob = Path(path).read_bytes()
    if blob[:4] != VOLUME_MAGIC:
        raise VolumeError(f"{path}: bad magic {blob[:4]!r}")
    h, w, o = struct.unpack("<III", blob[4:16])
    values = np.frombuffer(blob[16:], dtype="<f4").reshape(h, w, o)
    if spec is None:
        return values
    grid = PoseGrid(spec=spec, orientation_bins=o)
    vol = ProbabilityVolume(grid, values.astype(np.float64))
    vol.normalized = abs(vol.total() - 1.0) <= NORMALIZATION_TOLERANCE
    return vol
