"""Synthetic scenes, benchmark execution, and recall metrics.

Scenes are rectilinear multi-room plans generated deterministically from a
seed: a wall perimeter, jittered internal walls on a room grid, doors carved
on shared walls along a random spanning tree (connectivity guaranteed), and
windows on exterior walls. Openings recode wall cells, so they are invisible
to depth rays and only the semantic channel can tell rooms apart - the
ambiguity the fused volume is meant to resolve.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .extraction import (
    Candidate,
    PipelineConfig,
    coarse_volumes,
    localize,
    prepare_scene,
)
from .floorplan import DOOR, WALL, WINDOW, GridSpec, RoomPolygon, SemanticFloorplan, points_in_polygon
from .raycast import Pose, RayBundle, cast_bundle
from .rays import (
    NoiseModel,
    interpolate_depth_linear,
    interpolate_semantic_majority,
    perturb,
)

ROOM_VOCAB = ["Living Room", "Bedroom", "Kitchen", "Bathroom",
              "W/C", "Office", "Hallway", "Balcony"]

MIN_ROOM_CELLS = 8
QUERY_CLEARANCE_M = 0.3


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneParams:
    extent_m: tuple[float, float] = (10.0, 8.0)
    room_grid: tuple[int, int] = (3, 2)   # rooms along x, rooms along y
    opening_density: float = 0.8
    seed: int = 0
    resolution: float = 0.1
    wall_jitter_cells: int = 4
    extra_door_prob: float = 0.5
    door_width_m: float = 0.8
    window_width_m: float = 1.2
    stubs_per_room: int = 3      # short wall stubs breaking box symmetry
    bump_spacing_m: float = 0.9  # mean gap between shallow wall bumps; 0 disables
    pillars_per_room: int = 0    # free-standing columns; close-range anchors
    ambiguity_pair: bool = False


def _wall_positions(total: int, n_rooms: int, jitter: int, rng) -> list[int]:
    """Column/row indices of internal walls splitting [0, total-1]."""
    base = [round(j * (total - 1) / n_rooms) for j in range(1, n_rooms)]
    out = []
    prev = 0
    for j, b in enumerate(base):
        lo = prev + MIN_ROOM_CELLS + 1
        nxt = base[j + 1] if j + 1 < len(base) else total - 1
        hi = nxt - MIN_ROOM_CELLS - 1
        pos = int(b + rng.integers(-jitter, jitter + 1)) if jitter > 0 else b
        pos = min(max(pos, lo), hi)
        if not lo <= pos <= hi:
            raise SceneError("extent too small for room grid")
        out.append(pos)
        prev = pos
    return out


def _carve(cells: np.ndarray, rng, span_lo: int, span_hi: int,
           width: int, code: int, fixed_index: int, vertical: bool) -> None:
    """Recode `width` wall cells to `code` at a seeded offset inside a span."""
    usable = span_hi - span_lo + 1 - 2  # one-cell margin at both ends
    width = min(width, max(1, usable))
    start = span_lo + 1 + int(rng.integers(0, usable - width + 1))
    if vertical:
        cells[start:start + width, fixed_index] = code
    else:
        cells[fixed_index, start:start + width] = code


def generate_scene(params: SceneParams) -> SemanticFloorplan:
    """Deterministic rectilinear multi-room plan (or an ambiguity pair).

    Vertical walls are placed independently per room row, so room widths vary
    and wall junctions offset between rows; every room then has a distinct
    footprint, which is what makes noise-free ray views globally unique.
    """
    if params.ambiguity_pair:
        return _generate_ambiguity_pair(params)
    rng = np.random.default_rng(params.seed)
    res = params.resolution
    w = round(params.extent_m[0] / res)
    h = round(params.extent_m[1] / res)
    nx, ny = params.room_grid
    if nx < 1 or ny < 1:
        raise SceneError("room grid must be at least 1x1")
    if w < nx * (MIN_ROOM_CELLS + 1) + 1 or h < ny * (MIN_ROOM_CELLS + 1) + 1:
        raise SceneError("extent too small for room grid")

    cells = np.zeros((h, w), dtype=np.int8)
    y_walls = [0] + _wall_positions(h, ny, params.wall_jitter_cells, rng) + [h - 1]
    for r in y_walls:
        cells[r, :] = WALL
    cells[:, 0] = WALL
    cells[:, w - 1] = WALL

    rooms: list[RoomPolygon] = []
    perm = rng.permutation(len(ROOM_VOCAB))
    spans = {}          # (i, j) -> ((x0, x1), (y0, y1)) inclusive interior cells
    row_walls = {}      # j -> vertical wall columns bounding row j's rooms
    for j in range(ny):
        x_walls = [0] + _wall_positions(w, nx, params.wall_jitter_cells, rng) + [w - 1]
        row_walls[j] = x_walls
        ys = (y_walls[j] + 1, y_walls[j + 1] - 1)
        for c in x_walls[1:-1]:
            cells[y_walls[j]:y_walls[j + 1] + 1, c] = WALL
        for i in range(nx):
            xs = (x_walls[i] + 1, x_walls[i + 1] - 1)
            spans[(i, j)] = (xs, ys)
            x0, x1 = xs[0] * res, (xs[1] + 1) * res
            y0, y1 = ys[0] * res, (ys[1] + 1) * res
            label = ROOM_VOCAB[perm[(j * nx + i) % len(ROOM_VOCAB)]]
            rooms.append(RoomPolygon(label=label, vertices=[
                [x0, y0], [x1, y0], [x1, y1], [x0, y1]]))

    # Doors: spanning tree over room adjacency guarantees connectivity;
    # remaining shared walls get a door with a fixed probability. Vertical
    # neighbors are any rooms of adjacent rows whose x spans overlap enough
    # to host a door.
    door_w = max(1, round(params.door_width_m / res))
    edges = []
    for j in range(ny):
        for i in range(nx):
            if i + 1 < nx:
                edges.append(((i, j), (i + 1, j), True))
            if j + 1 < ny:
                for i2 in range(nx):
                    lo = max(spans[(i, j)][0][0], spans[(i2, j + 1)][0][0])
                    hi = min(spans[(i, j)][0][1], spans[(i2, j + 1)][0][1])
                    if hi - lo + 1 >= door_w + 4:
                        edges.append(((i, j), (i2, j + 1), False))
    order = rng.permutation(len(edges))
    parent = {node: node for node in spans}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for ei in order:
        a, b, vertical = edges[int(ei)]
        ra, rb = find(a), find(b)
        in_tree = ra != rb
        if in_tree:
            parent[ra] = rb
        elif not rng.random() < params.extra_door_prob:
            continue
        if vertical:
            wall_col = row_walls[a[1]][b[0]]
            ys = spans[a][1]
            _carve(cells, rng, ys[0], ys[1], door_w, DOOR, wall_col, vertical=True)
        else:
            wall_row = y_walls[b[1]]
            lo = max(spans[a][0][0], spans[b][0][0])
            hi = min(spans[a][0][1], spans[b][0][1])
            _carve(cells, rng, lo, hi, door_w, DOOR, wall_row, vertical=False)

    # Openings on exterior walls: mostly windows of varied width, sometimes
    # an exterior door (entrance or balcony), one chance per side per room.
    base_win = max(1, round(params.window_width_m / res))
    for j in range(ny):
        for i in range(nx):
            xs, ys = spans[(i, j)]
            sides = []
            if i == 0:
                sides.append(("v", 0, ys))
            if i == nx - 1:
                sides.append(("v", w - 1, ys))
            if j == 0:
                sides.append(("h", 0, xs))
            if j == ny - 1:
                sides.append(("h", h - 1, xs))
            for kind, fixed, span in sides:
                half = (span[1] - span[0]) // 2
                for sub in ((span[0], span[0] + half), (span[0] + half + 1, span[1])):
                    if rng.random() < params.opening_density:
                        width = base_win + int(rng.integers(-4, 7))
                        code = DOOR if rng.random() < 0.25 else WINDOW
                        _carve(cells, rng, sub[0], sub[1], max(3, width), code,
                               fixed, vertical=(kind == "v"))

    # Wall stubs: short protrusions into each room (closets, chimneys).
    # Boxy same-size rooms are indistinguishable to depth rays; stubs give
    # every room a unique geometric signature without touching any opening.
    for j in range(ny):
        for i in range(nx):
            xs, ys = spans[(i, j)]
            for _ in range(params.stubs_per_room):
                _place_stub(cells, rng, xs, ys)
            if params.bump_spacing_m > 0:
                _texture_walls(cells, rng, xs, ys,
                               max(3, round(params.bump_spacing_m / res)))
            for _ in range(params.pillars_per_room):
                _place_pillar(cells, rng, xs, ys)

    spec = GridSpec(width_cells=w, height_cells=h, resolution=res)
    return SemanticFloorplan(spec=spec, cells=cells, rooms=rooms)


def _place_pillar(cells: np.ndarray, rng, xs: tuple[int, int],
                  ys: tuple[int, int]) -> None:
    """Drop a free-standing column into a room, clear of walls and openings.

    A nearby column puts two sharp depth edges at close range into most
    views across the room, anchoring both position and orientation.
    """
    size = int(rng.integers(2, 5))
    margin = 8  # keep 0.8 m of free space around the column
    x_lo, x_hi = xs[0] + margin, xs[1] - margin - size
    y_lo, y_hi = ys[0] + margin, ys[1] - margin - size
    if x_hi < x_lo or y_hi < y_lo:
        return  # room too small
    px = int(rng.integers(x_lo, x_hi + 1))
    py = int(rng.integers(y_lo, y_hi + 1))
    if (cells[py - margin:py + size + margin, px - margin:px + size + margin] != 0).any():
        return  # would crowd a stub or another pillar
    cells[py:py + size, px:px + size] = WALL


def _texture_walls(cells: np.ndarray, rng, xs: tuple[int, int],
                   ys: tuple[int, int], spacing: int) -> None:
    """One-cell pilaster bumps at irregular intervals along every room wall.

    Close-range views of a bare wall are position-ambiguous; bumps make the
    position along the wall observable. Bumps never land next to an opening.
    """
    x0, x1 = xs
    y0, y1 = ys
    walls = [
        ("v", x0 - 1, +1, y0, y1),   # left wall, bump grows into +x
        ("v", x1 + 1, -1, y0, y1),   # right wall
        ("h", y0 - 1, +1, x0, x1),   # bottom wall
        ("h", y1 + 1, -1, x0, x1),   # top wall
    ]
    for kind, fixed, grow, lo, hi in walls:
        pos = lo + int(rng.integers(2, spacing + 1))
        while pos <= hi - 2:
            width = int(rng.integers(1, 3))
            depth = int(rng.integers(1, 3))
            if kind == "v":
                host = cells[max(0, pos - 2):pos + width + 2, fixed]
            else:
                host = cells[fixed, max(0, pos - 2):pos + width + 2]
            if not (host > WALL).any():
                if kind == "v":
                    region = (slice(pos, pos + width),
                              slice(min(fixed + grow, fixed + grow * depth),
                                    max(fixed + grow, fixed + grow * depth) + 1))
                else:
                    region = (slice(min(fixed + grow, fixed + grow * depth),
                                    max(fixed + grow, fixed + grow * depth) + 1),
                              slice(pos, pos + width))
                before = _passable_components(cells)
                saved = cells[region].copy()
                cells[region] = WALL
                if _passable_components(cells) > before:
                    cells[region] = saved  # bump would enclose a pocket
            pos += width + int(rng.integers(spacing // 2, spacing + 1))


def _passable_components(cells: np.ndarray) -> int:
    """Connected components of walkable space (free cells plus doorways)."""
    passable = (cells == 0) | (cells == DOOR)
    _, n = ndimage.label(passable)
    return int(n)


def _place_stub(cells: np.ndarray, rng, xs: tuple[int, int], ys: tuple[int, int]) -> None:
    """Attach a wall stub (closet, chimney breast) to a random room side.

    Depths up to ~1.2 m put near and far surfaces in the same view, which
    breaks the rotation-translation ambiguity of flat-wall matching. Skipped
    when it would sit within 3 cells of a door or window, or when it would
    pinch off part of the walkable space.
    """
    side = int(rng.integers(0, 4))  # 0 left, 1 right, 2 bottom, 3 top
    max_depth = max(4, min(12, (xs[1] - xs[0] if side in (0, 1) else ys[1] - ys[0]) // 2 - 2))
    depth = int(rng.integers(3, max_depth + 1))
    thick = int(rng.integers(1, 4))
    x0, x1 = xs
    y0, y1 = ys
    if side in (0, 1):
        pos = int(rng.integers(y0 + 2, y1 - thick - 1))
        cols = range(x0, x0 + depth) if side == 0 else range(x1 - depth + 1, x1 + 1)
        region = (slice(pos, pos + thick), slice(min(cols), max(cols) + 1))
        guard_wall_x = x0 - 1 if side == 0 else x1 + 1
        guard = cells[max(0, pos - 3):pos + thick + 3, guard_wall_x]
    else:
        pos = int(rng.integers(x0 + 2, x1 - thick - 1))
        rows = range(y0, y0 + depth) if side == 2 else range(y1 - depth + 1, y1 + 1)
        region = (slice(min(rows), max(rows) + 1), slice(pos, pos + thick))
        guard_wall_y = y0 - 1 if side == 2 else y1 + 1
        guard = cells[guard_wall_y, max(0, pos - 3):pos + thick + 3]
    if (guard > WALL).any():
        return  # too close to a door/window on the host wall
    before = _passable_components(cells)
    saved = cells[region].copy()
    cells[region] = WALL
    if _passable_components(cells) > before:
        cells[region] = saved  # would seal off a pocket; undo


def _generate_ambiguity_pair(params: SceneParams) -> SemanticFloorplan:
    """Two geometrically identical rooms; one window vs one door tells them apart.

    Openings sit flush with the wall raster, so depth rays cannot distinguish
    the rooms at all; only the opening's class differs.
    """
    rng = np.random.default_rng(params.seed)
    res = params.resolution
    rw = 36 + int(rng.integers(0, 9))   # 3.6 - 4.4 m interior width
    rh = 40 + int(rng.integers(0, 9))   # 4.0 - 4.8 m interior height
    w = 2 * rw + 3
    h = rh + 2
    cells = np.zeros((h, w), dtype=np.int8)
    cells[0, :] = WALL
    cells[h - 1, :] = WALL
    cells[:, 0] = WALL
    cells[:, w - 1] = WALL
    mid = rw + 1
    cells[:, mid] = WALL

    win_w = max(1, round(params.window_width_m / res))
    off = int(rng.integers(2, rw - win_w - 2))
    cells[h - 1, 1 + off:1 + off + win_w] = WINDOW            # room A: window
    cells[h - 1, mid + 1 + off:mid + 1 + off + win_w] = DOOR  # room B: door

    labels = [ROOM_VOCAB[k] for k in rng.permutation(len(ROOM_VOCAB))[:2]]
    rooms = []
    for label, x_lo in zip(labels, (1, mid + 1)):
        x0, x1 = x_lo * res, (x_lo + rw) * res
        y0, y1 = 1 * res, (1 + rh) * res
        rooms.append(RoomPolygon(label=label, vertices=[
            [x0, y0], [x1, y0], [x1, y1], [x0, y1]]))
    spec = GridSpec(width_cells=w, height_cells=h, resolution=res)
    return SemanticFloorplan(spec=spec, cells=cells, rooms=rooms)


@dataclass
class MisrankScene:
    """A scene engineered so the coarse stage misranks but refinement recovers."""

    fp: SemanticFloorplan
    gt_pose: Pose


def generate_misrank_scene(seed: int, cfg: PipelineConfig | None = None) -> MisrankScene:
    """Twin sealed rooms where only a small door distinguishes them.

    The door is narrow and placed at a bearing that falls between both the
    coarse reference comb and the majority-vote windows of the interpolated
    prediction, so the coarse volumes tie exactly across the two rooms and
    the tie-break picks the wrong (first) room. The full-resolution rays do
    see the door, letting refinement recover the true room.
    """
    cfg = cfg or PipelineConfig()
    rng = np.random.default_rng(seed)
    res = 0.1
    rw = 50 + int(rng.integers(0, 6))
    rh = 42 + int(rng.integers(0, 6))
    w = 2 * rw + 3
    h = rh + 2
    cells = np.zeros((h, w), dtype=np.int8)
    cells[0, :] = WALL
    cells[h - 1, :] = WALL
    cells[:, 0] = WALL
    cells[:, w - 1] = WALL
    mid = rw + 1
    cells[:, mid] = WALL

    # Ground truth: a cell center in room B (the lexicographically later
    # room), looking straight up at the top wall.
    gt_iy = (h - 1) - 30                      # 3.0 m from the wall boundary
    gt_ix = mid + 1 + rw // 2 + int(rng.integers(-3, 4))
    gt = Pose((gt_ix + 0.5) * res, (gt_iy + 0.5) * res, 90.0)

    # A 0.3 m door centered ~20 deg left of the optical axis: between the
    # 13.33 and 26.67 deg teeth of the 7-ray comb and outside every
    # majority-vote window of the 40-to-7 interpolation.
    dist_to_wall_mid = ((h - 1 + 0.5) - (gt_iy + 0.5)) * res
    door_cx = gt_ix - int(round(dist_to_wall_mid / res * np.tan(np.radians(20.0))))
    cells[h - 1, door_cx - 1:door_cx + 2] = DOOR

    rooms = [
        RoomPolygon(label="Bedroom", vertices=[
            [res, res], [(1 + rw) * res, res],
            [(1 + rw) * res, (1 + rh) * res], [res, (1 + rh) * res]]),
        RoomPolygon(label="Office", vertices=[
            [(mid + 1) * res, res], [(mid + 1 + rw) * res, res],
            [(mid + 1 + rw) * res, (1 + rh) * res], [(mid + 1) * res, (1 + rh) * res]]),
    ]
    spec = GridSpec(width_cells=w, height_cells=h, resolution=res)
    fp = SemanticFloorplan(spec=spec, cells=cells, rooms=rooms)

    # Construction guarantee: the coarse prediction must not see the door.
    oracle = cast_bundle(fp, gt, cfg.cam_highres())
    gap = cfg.fov_deg / (cfg.coarse_rays - 1)
    coarse_labels = interpolate_semantic_majority(
        oracle.labels, cfg.fov_deg, cfg.coarse_rays, gap, cfg.vote_window)
    if DOOR in coarse_labels:
        raise SceneError("misrank construction failed: coarse rays see the door")
    if DOOR not in oracle.labels:
        raise SceneError("misrank construction failed: full rays miss the door")
    return MisrankScene(fp=fp, gt_pose=gt)


def find_room_label(fp: SemanticFloorplan, x: float, y: float) -> str | None:
    """Label of the first room polygon containing the point, if any."""
    for room in fp.rooms:
        if bool(points_in_polygon(np.array([x]), np.array([y]), room.vertices)[0]):
            return room.label
    return None


def sample_query_poses(fp: SemanticFloorplan, n: int, rng,
                       clearance_m: float = QUERY_CLEARANCE_M) -> list[Pose]:
    """Uniform free-space poses at least `clearance_m` from any structure cell.

    Positions are continuous within a cell and orientations continuous in
    [0, 360), so grid discretization error is genuinely exercised.
    """
    res = fp.spec.resolution
    dist = ndimage.distance_transform_edt(fp.free) * res
    eligible = np.flatnonzero(dist.ravel() >= clearance_m + res / 2.0)
    if eligible.size == 0:
        raise SceneError("no free space satisfies the query clearance")
    picks = rng.choice(eligible, size=n, replace=True)
    poses = []
    for flat in picks:
        iy, ix = divmod(int(flat), fp.spec.width_cells)
        cx, cy = fp.spec.center_of(ix, iy)
        x = cx + float(rng.uniform(-0.5, 0.5)) * res
        y = cy + float(rng.uniform(-0.5, 0.5)) * res
        poses.append(Pose(x, y, float(rng.uniform(0.0, 360.0))))
    return poses


def sample_informative_poses(fp: SemanticFloorplan, n: int, rng, cam,
                             clearance_m: float = QUERY_CLEARANCE_M,
                             min_median_depth_m: float = 1.2) -> list[Pose]:
    """Free-space poses whose view actually looks into the room.

    Rejection-samples uniform poses until the oracle view's median depth
    reaches the floor; a camera pressed against a wall produces rays that no
    ray-matching method can localize, which would measure the scene rather
    than the pipeline. Deterministic per rng state.
    """
    out: list[Pose] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 200 * n:
            raise SceneError("could not find enough informative viewpoints")
        pose = sample_query_poses(fp, 1, rng, clearance_m)[0]
        bundle = cast_bundle(fp, pose, cam)
        if float(np.median(bundle.depths)) >= min_median_depth_m:
            out.append(pose)
    return out


def pose_error(pred: Pose, gt: Pose) -> tuple[float, float]:
    """(translation error meters, wrapped absolute orientation error degrees)."""
    dist = float(np.hypot(pred.x - gt.x, pred.y - gt.y))
    ang = abs((pred.theta_deg - gt.theta_deg + 180.0) % 360.0 - 180.0)
    return dist, float(ang)


@dataclass
class EvalReport:
    """Recall percentages plus per-query errors and timing statistics."""

    n_queries: int
    recall_01: float
    recall_05: float
    recall_1: float
    recall_1_30: float
    errors: list[tuple[float, float]] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self, include_per_query: bool = True) -> dict:
        doc = {
            "n_queries": self.n_queries,
            "recall": {
                "r_0.1m": self.recall_01,
                "r_0.5m": self.recall_05,
                "r_1m": self.recall_1,
                "r_1m_30deg": self.recall_1_30,
            },
            "meta": self.meta,
        }
        if include_per_query:
            doc["per_query"] = [
                {"dist_m": d, "ang_deg": a} for d, a in self.errors
            ]
        doc["timings"] = self.timings
        return doc


def recall(pred_poses: list[Pose], gt_poses: list[Pose],
           thresholds: tuple[float, ...] = (0.1, 0.5, 1.0),
           angle_bound_deg: float = 30.0) -> EvalReport:
    """Recall at distance thresholds (inclusive) and the angle-bounded metric.

    The combined metric requires distance <= 1 m AND orientation error
    strictly below the 30 degree bound.
    """
    if len(pred_poses) != len(gt_poses):
        raise ValueError("prediction and ground-truth counts differ")
    errors = [pose_error(p, g) for p, g in zip(pred_poses, gt_poses)]
    return report_from_errors(errors, thresholds, angle_bound_deg)


def report_from_errors(errors: list[tuple[float, float]],
                       thresholds: tuple[float, ...] = (0.1, 0.5, 1.0),
                       angle_bound_deg: float = 30.0) -> EvalReport:
    n = len(errors)
    if n == 0:
        return EvalReport(0, 0.0, 0.0, 0.0, 0.0, [])
    d = np.array([e[0] for e in errors])
    a = np.array([e[1] for e in errors])
    pct = lambda m: float(np.mean(m) * 100.0)
    return EvalReport(
        n_queries=n,
        recall_01=pct(d <= thresholds[0]),
        recall_05=pct(d <= thresholds[1]),
        recall_1=pct(d <= thresholds[2]),
        recall_1_30=pct((d <= thresholds[2]) & (a < angle_bound_deg)),
        errors=errors,
    )


@dataclass
class QuerySample:
    scene_id: str
    query_id: str
    gt_pose: Pose
    prediction: RayBundle
    room_hint: tuple[str, float] | None = None


@dataclass
class ScenePack:
    scene_id: str
    fp: SemanticFloorplan
    samples: list[QuerySample]
    gt_extra: dict = field(default_factory=dict)


@dataclass
class QueryOutcome:
    query_id: str
    scene_id: str
    gt_pose: Pose
    pred_pose: Pose
    dist_m: float
    ang_deg: float
    candidates: list[Candidate]
    timings_s: dict
    flags: list[str]


@dataclass
class BenchmarkResult:
    report: EvalReport
    outcomes: list[QueryOutcome]

    def to_dict(self, include_per_query: bool = True) -> dict:
        doc = self.report.to_dict(include_per_query=False)
        if include_per_query:
            doc["per_query"] = [
                {
                    "query_id": o.query_id,
                    "scene_id": o.scene_id,
                    "gt": [o.gt_pose.x, o.gt_pose.y, o.gt_pose.theta_deg],
                    "pose": [o.pred_pose.x, o.pred_pose.y, o.pred_pose.theta_deg],
                    "dist_m": o.dist_m,
                    "ang_deg": o.ang_deg,
                    "flags": o.flags,
                }
                for o in self.outcomes
            ]
        return doc


def _noise_seed(base: int, scene_idx: int, query_idx: int) -> int:
    return int(np.random.SeedSequence((base, scene_idx, query_idx)).generate_state(1)[0])


def build_benchmark(base: SceneParams, n_scenes: int, queries_per_scene: int,
                    cfg: PipelineConfig, noise: NoiseModel,
                    query_seed: int = 1234,
                    hint_confidence: float | None = None,
                    min_median_depth_m: float = 1.2) -> list[ScenePack]:
    """Generate scenes and noisy oracle queries; deterministic per seeds."""
    cam = cfg.cam_highres()
    packs = []
    for si in range(n_scenes):
        fp = generate_scene(replace(base, seed=base.seed + si))
        scene_id = f"scene{si:03d}"
        rng = np.random.default_rng(np.random.SeedSequence((query_seed, si)))
        poses = sample_informative_poses(fp, queries_per_scene, rng, cam,
                                         min_median_depth_m=min_median_depth_m)
        samples = []
        for qi, gt in enumerate(poses):
            oracle = cast_bundle(fp, gt, cam)
            qnoise = replace(noise, rng_seed=_noise_seed(noise.rng_seed, si, qi))
            pred = perturb(oracle, qnoise)
            hint = None
            if hint_confidence is not None:
                label = find_room_label(fp, gt.x, gt.y)
                if label is not None:
                    hint = (label, hint_confidence)
            samples.append(QuerySample(scene_id, f"{scene_id}/q{qi:03d}",
                                       gt, pred, hint))
        packs.append(ScenePack(scene_id=scene_id, fp=fp, samples=samples))
    return packs


def run_benchmark(packs: list[ScenePack], cfg: PipelineConfig,
                  use_hints: bool = False) -> BenchmarkResult:
    """Localize every query; aggregates recall and per-stage timings."""
    outcomes = []
    for pack in packs:
        context = prepare_scene(pack.fp, cfg)
        for s in pack.samples:
            hint = s.room_hint if use_hints else None
            result = localize(pack.fp, s.prediction, hint, cfg, context=context)
            dist, ang = pose_error(result.pose, s.gt_pose)
            outcomes.append(QueryOutcome(
                query_id=s.query_id, scene_id=s.scene_id, gt_pose=s.gt_pose,
                pred_pose=result.pose, dist_m=dist, ang_deg=ang,
                candidates=result.candidates, timings_s=result.timings_s,
                flags=result.flags))
    report = report_from_errors([(o.dist_m, o.ang_deg) for o in outcomes])
    report.timings = timing_stats(outcomes)
    report.meta = {"use_hints": use_hints, "config": cfg.to_dict()}
    return BenchmarkResult(report=report, outcomes=outcomes)


def timing_stats(outcomes: list[QueryOutcome]) -> dict:
    stages = ("prediction", "localization", "refinement")
    stats = {}
    totals = np.zeros(len(outcomes))
    for stage in stages:
        vals = np.array([o.timings_s.get(stage, 0.0) for o in outcomes])
        totals += vals
        stats[stage] = {"mean_s": float(vals.mean()) if len(vals) else 0.0,
                        "std_s": float(vals.std()) if len(vals) else 0.0}
    stats["total"] = {"mean_s": float(totals.mean()) if len(totals) else 0.0,
                      "std_s": float(totals.std()) if len(totals) else 0.0}
    return stats


def topk_recall(outcomes: list[QueryOutcome], k: int,
                thresholds: tuple[float, ...] = (0.1, 0.5, 1.0),
                angle_bound_deg: float = 30.0) -> dict:
    """Recall counting a hit when ANY of the first k candidates is close enough."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = {t: 0 for t in thresholds}
    hits_ang = 0
    for o in outcomes:
        cands = o.candidates[:k]
        pairs = [pose_error(c.pose, o.gt_pose) for c in cands]
        for t in thresholds:
            if any(d <= t for d, _ in pairs):
                hits[t] += 1
        if any(d <= thresholds[-1] and a < angle_bound_deg for d, a in pairs):
            hits_ang += 1
    n = max(1, len(outcomes))
    out = {f"r_{t}m": 100.0 * hits[t] / n for t in thresholds}
    out[f"r_{thresholds[-1]}m_{int(angle_bound_deg)}deg"] = 100.0 * hits_ang / n
    return out


def run_weight_sweep(packs: list[ScenePack], cfg: PipelineConfig,
                     weights: list[float]) -> list[tuple[float, EvalReport]]:
    """Recall for each fusion weight, reusing each query's volumes across weights."""
    errors: dict[float, list] = {w: [] for w in weights}
    for pack in packs:
        context = prepare_scene(pack.fp, cfg)
        for s in pack.samples:
            gap = cfg.fov_deg / (cfg.coarse_rays - 1) if cfg.coarse_rays > 1 else 0.0
            cd = interpolate_depth_linear(s.prediction.depths, cfg.fov_deg,
                                          cfg.coarse_rays, gap)
            cl = interpolate_semantic_majority(s.prediction.labels, cfg.fov_deg,
                                               cfg.coarse_rays, gap, cfg.vote_window)
            pd, ps = coarse_volumes(context, cd, cl)
            for w in weights:
                wcfg = replace(cfg, w_s=w)
                result = localize(pack.fp, s.prediction, None, wcfg,
                                  context=context, precomputed=(pd, ps))
                errors[w].append(pose_error(result.pose, s.gt_pose))
    return [(w, report_from_errors(errors[w])) for w in weights]


def run_topk_timing(packs: list[ScenePack], cfg: PipelineConfig,
                    ks: list[int]) -> list[dict]:
    """Per-K stage timing rows in the shape of a runtime-breakdown table."""
    rows = []
    for k in ks:
        kcfg = replace(cfg, top_k=k)
        result = run_benchmark(packs, kcfg)
        row = {"top_k": k}
        for stage, st in result.report.timings.items():
            row[f"{stage}_mean_s"] = st["mean_s"]
            row[f"{stage}_std_s"] = st["std_s"]
        row["recall_1m_30deg"] = result.report.recall_1_30
        rows.append(row)
    return rows
