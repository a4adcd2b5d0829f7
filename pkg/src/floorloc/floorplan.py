"""Semantic floorplan grids: file format, room polygons, derived pose-space masks.

Grid convention: ``cells[iy, ix]`` with shape ``(height_cells, width_cells)``.
Cell (0, 0) is the first row/column of the file's row-major ``cells`` array and
its corner sits at ``origin``; metric coordinates grow with the cell indices,
so the center of cell (ix, iy) is ``origin + (ix + 0.5, iy + 0.5) * resolution``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Structural class codes. 0 marks empty (traversable) space and is never a
# legal ray-hit label; openings override wall cells in the raster.
EMPTY = 0
WALL = 1
WINDOW = 2
DOOR = 3
NUM_CLASSES = 3

CLASS_NAMES = {EMPTY: "empty", WALL: "wall", WINDOW: "window", DOOR: "door"}

_EPS = 1e-9


class FloorplanError(ValueError):
    """Raised for malformed floorplan files or invariant violations."""


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the plan: cell counts, cell size, and metric origin."""

    width_cells: int
    height_cells: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width_cells < 1 or self.height_cells < 1:
            raise FloorplanError("grid must have at least one cell per axis")
        if not self.resolution > 0:
            raise FloorplanError("resolution must be positive")

    @property
    def width_m(self) -> float:
        return self.width_cells * self.resolution

    @property
    def height_m(self) -> float:
        return self.height_cells * self.resolution

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """Cell (ix, iy) containing the metric point; no bounds check."""
        ix = int(np.floor((x - self.origin[0]) / self.resolution))
        iy = int(np.floor((y - self.origin[1]) / self.resolution))
        return ix, iy

    def center_of(self, ix: int, iy: int) -> tuple[float, float]:
        """Metric coordinates of a cell center."""
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width_cells and 0 <= iy < self.height_cells

    def contains_point(self, x: float, y: float) -> bool:
        ix, iy = self.cell_of(x, y)
        return self.in_bounds(ix, iy)


@dataclass
class RoomPolygon:
    """Labeled simple polygon in metric coordinates."""

    label: str
    vertices: np.ndarray  # (n, 2) float

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise FloorplanError(f"room '{self.label}': vertices must be (n, 2)")
        if len(self.vertices) < 3:
            raise FloorplanError(f"room '{self.label}': needs >= 3 vertices")
        if not _is_simple_polygon(self.vertices):
            raise FloorplanError(f"room '{self.label}': polygon self-intersects")


@dataclass
class SemanticFloorplan:
    """Immutable-by-convention raster plan plus labeled room polygons.

    The raster is authoritative for ray casting; polygons only drive masks.
    """

    spec: GridSpec
    cells: np.ndarray  # (height_cells, width_cells) int8
    rooms: list[RoomPolygon] = field(default_factory=list)
    interior: np.ndarray | None = None  # optional (H, W) bool

    def __post_init__(self):
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int8)
        expect = (self.spec.height_cells, self.spec.width_cells)
        if self.cells.shape != expect:
            raise FloorplanError(
                f"cells shape {self.cells.shape} does not match spec {expect}"
            )
        bad = (self.cells < 0) | (self.cells > NUM_CLASSES)
        if bad.any():
            iy, ix = np.argwhere(bad)[0]
            raise FloorplanError(
                f"cells[{iy * self.spec.width_cells + ix}]: unknown code "
                f"{int(self.cells[iy, ix])} at cell ({ix}, {iy})"
            )
        for r, room in enumerate(self.rooms):
            if not _polygon_in_bounds(room.vertices, self.spec):
                raise FloorplanError(
                    f"rooms[{r}] '{room.label}': polygon leaves grid bounds"
                )
        if self.interior is not None:
            self.interior = np.ascontiguousarray(self.interior, dtype=bool)
            if self.interior.shape != expect:
                raise FloorplanError(
                    f"interior shape {self.interior.shape} does not match spec {expect}"
                )

    @property
    def free(self) -> np.ndarray:
        """(H, W) bool, true where a camera may stand."""
        return self.cells == EMPTY

    def room_labels(self) -> list[str]:
        seen: list[str] = []
        for room in self.rooms:
            if room.label not in seen:
                seen.append(room.label)
        return seen


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1 = _orient(*p3, *p4, *p1)
    d2 = _orient(*p3, *p4, *p2)
    d3 = _orient(*p1, *p2, *p3)
    d4 = _orient(*p1, *p2, *p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0:
        return True
    return False


def _is_simple_polygon(verts: np.ndarray) -> bool:
    n = len(verts)
    if n < 3:
        return False
    edges = [(tuple(verts[i]), tuple(verts[(i + 1) % n])) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent edges share a vertex
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def _polygon_in_bounds(verts: np.ndarray, spec: GridSpec) -> bool:
    x0, y0 = spec.origin
    x1 = x0 + spec.width_m
    y1 = y0 + spec.height_m
    return bool(
        (verts[:, 0] >= x0 - _EPS).all()
        and (verts[:, 0] <= x1 + _EPS).all()
        and (verts[:, 1] >= y0 - _EPS).all()
        and (verts[:, 1] <= y1 + _EPS).all()
    )


def points_in_polygon(px: np.ndarray, py: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test; points on the boundary count as inside."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % n]
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        in_box = (
            (px >= min(ax, bx) - _EPS)
            & (px <= max(ax, bx) + _EPS)
            & (py >= min(ay, by) - _EPS)
            & (py <= max(ay, by) + _EPS)
        )
        on_edge |= in_box & (np.abs(cross) <= _EPS * max(1.0, abs(bx - ax) + abs(by - ay)))
        cond = (ay > py) != (by > py)
        denom = by - ay
        with np.errstate(divide="ignore", invalid="ignore"):
            x_int = ax + (py - ay) * (bx - ax) / denom
        inside ^= cond & (px < x_int)
    return inside | on_edge


def _cell_center_grids(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    xs = spec.origin[0] + (np.arange(spec.width_cells) + 0.5) * spec.resolution
    ys = spec.origin[1] + (np.arange(spec.height_cells) + 0.5) * spec.resolution
    return np.meshgrid(xs, ys)  # each (H, W)


def room_mask_2d(fp: SemanticFloorplan, label: str) -> tuple[np.ndarray, bool]:
    """(H, W) mask of cell centers inside any polygon carrying `label`."""
    cx, cy = _cell_center_grids(fp.spec)
    mask = np.zeros((fp.spec.height_cells, fp.spec.width_cells), dtype=bool)
    found = False
    for room in fp.rooms:
        if room.label != label:
            continue
        found = True
        mask |= points_in_polygon(cx, cy, room.vertices)
    return mask, found


def room_mask(fp: SemanticFloorplan, label: str, bins: int) -> tuple[np.ndarray, bool]:
    """Pose-space mask (H, W, O) for one room label.

    Returns (mask, found). A missing label yields an all-false mask with
    found=False; callers must treat that as "do not mask" rather than
    zeroing the whole volume.
    """
    mask2d, found = room_mask_2d(fp, label)
    return np.repeat(mask2d[:, :, None], bins, axis=2), found


def interior_mask_2d(fp: SemanticFloorplan) -> np.ndarray:
    if fp.interior is not None:
        return fp.interior.copy()
    if not fp.rooms:
        return np.ones((fp.spec.height_cells, fp.spec.width_cells), dtype=bool)
    cx, cy = _cell_center_grids(fp.spec)
    mask = np.zeros((fp.spec.height_cells, fp.spec.width_cells), dtype=bool)
    for room in fp.rooms:
        mask |= points_in_polygon(cx, cy, room.vertices)
    return mask


def interior_mask(fp: SemanticFloorplan, bins: int) -> np.ndarray:
    """Pose-space mask (H, W, O) of the house interior.

    Uses the explicit interior raster when present, else the union of room
    polygons; a plan with neither excludes nothing.
    """
    return np.repeat(interior_mask_2d(fp)[:, :, None], bins, axis=2)


def load_floorplan(path: str | Path) -> SemanticFloorplan:
    """Load and validate a floorplan JSON file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FloorplanError(f"{path}: not valid JSON: {e}") from e
    return floorplan_from_dict(doc, where=str(path))


def floorplan_from_dict(doc: dict, where: str = "<dict>") -> SemanticFloorplan:
    for key in ("resolution_m", "width", "height", "cells"):
        if key not in doc:
            raise FloorplanError(f"{where}: missing required field '{key}'")
    width = int(doc["width"])
    height = int(doc["height"])
    spec = GridSpec(
        width_cells=width,
        height_cells=height,
        resolution=float(doc["resolution_m"]),
        origin=tuple(float(v) for v in doc.get("origin", (0.0, 0.0))),
    )
    raw = doc["cells"]
    if len(raw) != width * height:
        raise FloorplanError(
            f"{where}: cells has {len(raw)} entries, expected "
            f"width*height = {width * height}"
        )
    cells = np.asarray(raw, dtype=np.int64).reshape(height, width)
    if cells.min() < 0 or cells.max() > NUM_CLASSES:
        flat = cells.ravel()
        bad = int(np.flatnonzero((flat < 0) | (flat > NUM_CLASSES))[0])
        raise FloorplanError(f"{where}: cells[{bad}]: unknown code {int(flat[bad])}")
    rooms = []
    for r, rec in enumerate(doc.get("rooms", [])):
        try:
            rooms.append(RoomPolygon(label=str(rec["label"]), vertices=rec["vertices"]))
        except (KeyError, FloorplanError) as e:
            raise FloorplanError(f"{where}: rooms[{r}]: {e}") from e
    interior = None
    if doc.get("interior") is not None:
        raw_int = doc["interior"]
        if len(raw_int) != width * height:
            raise FloorplanError(
                f"{where}: interior has {len(raw_int)} entries, expected {width * height}"
            )
        interior = np.asarray(raw_int, dtype=np.int64).reshape(height, width).astype(bool)
    try:
        return SemanticFloorplan(spec=spec, cells=cells.astype(np.int8), rooms=rooms, interior=interior)
    except FloorplanError as e:
        raise FloorplanError(f"{where}: {e}") from e


def floorplan_to_dict(fp: SemanticFloorplan) -> dict:
    doc = {
        "resolution_m": fp.spec.resolution,
        "width": fp.spec.width_cells,
        "height": fp.spec.height_cells,
        "origin": list(fp.spec.origin),
        "cells": fp.cells.ravel().tolist(),
        "rooms": [
            {"label": room.label, "vertices": room.vertices.tolist()}
            for room in fp.rooms
        ],
    }
    if fp.interior is not None:
        doc["interior"] = fp.interior.astype(int).ravel().tolist()
    return doc


def save_floorplan(fp: SemanticFloorplan, path: str | Path) -> None:
    """Write the canonical JSON form; save(load(f)) is byte-stable."""
    text = json.dumps(floorplan_to_dict(fp), separators=(",", ":"))
    Path(path).write_text(text + "\n")
