"""Minimal PGM/PPM writers for volume heatmaps and pose overlays.

Binary netpbm formats (P5/P6 magic) keep the outputs trivially parseable
without an image library.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .probvolume import ProbabilityVolume
from .raycast import Pose

MAGENTA = (255, 0, 255)
WHITE = (255, 255, 255)


def heatmap_image(p: ProbabilityVolume) -> np.ndarray:
    """Max-projection over orientation bins, scaled to uint8 (H, W)."""
    proj = p.values.max(axis=2)
    peak = proj.max()
    if peak <= 0:
        return np.zeros(proj.shape, dtype=np.uint8)
    return np.round(proj / peak * 255.0).astype(np.uint8)


def write_pgm(img: np.ndarray, path: str | Path) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    header, _, rest = blob.partition(b"255\n")
    dims = header.split()
    w, h = int(dims[1]), int(dims[2])
    return np.frombuffer(rest[:w * h], dtype=np.uint8).reshape(h, w)


def write_ppm(img: np.ndarray, path: str | Path) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def _draw_marker(img: np.ndarray, p: ProbabilityVolume, pose: Pose,
                 color: tuple[int, int, int], length_m: float = 0.6) -> None:
    spec = p.grid.spec
    res = spec.resolution
    h, w, _ = img.shape
    ix, iy = spec.cell_of(pose.x, pose.y)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if 0 <= iy + dy < h and 0 <= ix + dx < w:
                img[iy + dy, ix + dx] = color
    rad = np.radians(pose.theta_deg)
    steps = int(length_m / res * 2)
    for s in range(steps + 1):
        t = s * res / 2.0
        x = pose.x + t * np.cos(rad)
        y = pose.y + t * np.sin(rad)
        jx, jy = spec.cell_of(x, y)
        if 0 <= jy < h and 0 <= jx < w:
            img[jy, jx] = color


def overlay_image(p: ProbabilityVolume, prediction: Pose,
                  gt: Pose | None = None) -> np.ndarray:
    """Heatmap with direction markers: ground truth magenta, prediction white."""
    gray = heatmap_image(p)
    img = np.stack([gray, gray, gray], axis=2)
    if gt is not None:
        _draw_marker(img, p, gt, MAGENTA)
    _draw_marker(img, p, prediction, WHITE)
    return img


def render_localization(volumes: dict, prediction: Pose, out_dir: str | Path,
                        gt: Pose | None = None) -> list[Path]:
    """Write per-stage heatmap PGMs plus the pose-overlay PPM; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, vol in volumes.items():
        path = out_dir / f"{name}.pgm"
        write_pgm(heatmap_image(vol), path)
        written.append(path)
    key = "masked" if "masked" in volumes else "fused"
    if key in volumes:
        path = out_dir / "overlay.ppm"
        write_ppm(overlay_image(volumes[key], prediction, gt), path)
        written.append(path)
    return written
