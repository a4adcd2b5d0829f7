"""Coarse-to-fine location extraction.

The fused volume proposes Top-K candidate poses (greedy selection with a
minimum translation separation), each candidate fans out over perturbed
orientations, and every (candidate, angle) pose is rescored against the
full-resolution prediction by casting reference rays at that exact pose.
The minimal weighted ray error wins.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .floorplan import SemanticFloorplan, interior_mask, room_mask
from .probvolume import (
    MASK_APPLIED,
    MASK_DEGENERATE,
    PoseGrid,
    ProbabilityVolume,
    ReferenceFields,
    apply_mask,
    build_depth_volume,
    build_semantic_volume,
    fuse,
    reference_fields,
)
from .raycast import CameraModel, Pose, RayBundle, cast_bundles_at
from .rays import interpolate_depth_linear, interpolate_semantic_majority


class ExtractionError(ValueError):
    pass


# Congruent wall layouts (common in rectilinear rasters) yield refinement
# scores that differ only by trigonometric rounding noise; scores this close
# count as tied so the coarse evidence arbitrates, as the tie rule intends.
SCORE_TIE_EPS = 1e-9


@dataclass
class Candidate:
    """A coarse pose surviving NMS, optionally rescored in refinement."""

    pose: Pose
    coarse_score: float
    refined_score: float | None = None

    def to_dict(self) -> dict:
        return {
            "pose": {"x": self.pose.x, "y": self.pose.y,
                     "theta_deg": self.pose.theta_deg},
            "coarse_score": self.coarse_score,
            "refined_score": self.refined_score,
        }


@dataclass(frozen=True)
class RefinementConfig:
    """Knobs of the coarse-to-fine stage."""

    top_k: int = 5
    delta_res: float = 0.1
    delta_ang: float = 5.0
    delta_max: float = 5.0
    alpha: float = 0.6
    cam_highres: CameraModel = field(default_factory=CameraModel)

    def __post_init__(self):
        if self.top_k < 1:
            raise ExtractionError("top_k must be >= 1")
        if self.delta_ang == 0.0:
            if self.delta_max != 0.0:
                raise ExtractionError("delta_max must be 0 when delta_ang is 0")
        else:
            ratio = self.delta_max / self.delta_ang
            if abs(ratio - round(ratio)) > 1e-9:
                raise ExtractionError(
                    "delta_max must be an integer multiple of delta_ang")


def topk_candidates(p: ProbabilityVolume, k: int, delta_res: float) -> list[Candidate]:
    """Greedy descending-score selection with translation NMS.

    A pose is skipped when its Euclidean cell-center distance to any already
    selected candidate is below delta_res; orientation never separates. Ties
    in score resolve to the smaller (y, x, bin) index. Returns at most k
    candidates; zero-score poses are never candidates.
    """
    if k < 1:
        raise ExtractionError("k must be >= 1")
    values = p.values
    h, w, o = values.shape
    flat = values.ravel()
    if flat.max() <= 0.0:
        raise ExtractionError("cannot extract candidates from an all-zero volume")
    order = _descending_order(flat, k)
    # Candidates sit on the cell lattice, so separations are exact in cell
    # units; this keeps the boundary case (adjacent cells at exactly
    # delta_res) out of floating-point rounding.
    sep2_cells = (delta_res / p.grid.spec.resolution) ** 2
    picked: list[Candidate] = []
    px: list[int] = []
    py: list[int] = []
    for fi in order:
        score = float(flat[fi])
        if score <= 0.0:
            break
        iy, ix, kb = np.unravel_index(int(fi), (h, w, o))
        ok = True
        for qx, qy in zip(px, py):
            if (int(ix) - qx) ** 2 + (int(iy) - qy) ** 2 < sep2_cells:
                ok = False
                break
        if not ok:
            continue
        picked.append(Candidate(pose=p.grid.pose_of(int(ix), int(iy), int(kb)),
                                coarse_score=score))
        px.append(int(ix))
        py.append(int(iy))
        if len(picked) == k:
            break
    return picked


def _descending_order(flat: np.ndarray, k: int):
    """Indices by descending value, ties by ascending index.

    Tries a partial partition first; the shortcut is only trusted when no
    outside element ties the partition boundary, otherwise (and whenever the
    partial prefix runs out) the full stable sort decides.
    """
    n = flat.size
    m = min(n, max(1024, 64 * k))
    if m < n:
        part = np.argpartition(-flat, m - 1)
        inside = part[:m]
        boundary = float(flat[inside].min())
        if (flat[part[m:]] < boundary).all():
            # The top-m SET is unique, so sorting it reproduces the first m
            # entries of the full stable descending order exactly.
            order = inside[np.lexsort((inside, -flat[inside]))]
            yield from (int(v) for v in order)
            seen = set(int(v) for v in order)
            rest = np.argsort(-flat, kind="stable")
            yield from (int(v) for v in rest if int(v) not in seen)
            return
    yield from (int(v) for v in np.argsort(-flat, kind="stable"))


def augment_angles(c: Candidate, delta_ang: float, delta_max: float) -> list[Pose]:
    """Poses at theta + {0, ±delta_ang, ..., ±delta_max}, wrapped to [0, 360)."""
    if delta_ang == 0.0:
        offsets = [0.0]
    else:
        steps = int(round(delta_max / delta_ang))
        offsets = [i * delta_ang for i in range(-steps, steps + 1)]
    return [Pose(c.pose.x, c.pose.y, (c.pose.theta_deg + off) % 360.0)
            for off in offsets]


def refine(fp: SemanticFloorplan, pred: RayBundle, candidates: list[Candidate],
           cfg: RefinementConfig, workers: int = 1,
           semantic_metric: str = "binary") -> tuple[Pose, bool]:
    """Rescore candidates at full ray resolution; lowest error wins.

    Returns (pose, fell_back). Ties prefer the higher coarse score, then the
    smaller (x, y, theta) pose. Candidates whose pose sits in structure are
    skipped; if every pose is skipped the top coarse candidate is returned
    with fell_back=True. Each candidate's refined_score is filled in place.
    """
    if not candidates:
        raise ExtractionError("refine needs at least one candidate")
    if len(pred) != cfg.cam_highres.ray_count:
        raise ExtractionError(
            f"prediction has {len(pred)} rays, refinement expects "
            f"{cfg.cam_highres.ray_count}")
    poses: list[Pose] = []
    owner: list[int] = []
    for ci, cand in enumerate(candidates):
        for pose in augment_angles(cand, cfg.delta_ang, cfg.delta_max):
            poses.append(pose)
            owner.append(ci)
    depths, labels = cast_bundles_at(fp, poses, cfg.cam_highres, workers=workers)
    valid = labels.min(axis=1) >= -1  # -2/-3 mark invalid origins
    depth_err = np.abs(depths - pred.depths[None, :]).mean(axis=1)
    if semantic_metric == "binary":
        sem_err = (labels != pred.labels[None, :]).mean(axis=1)
    else:
        sem_err = np.abs(labels.astype(np.int64)
                         - pred.labels[None, :].astype(np.int64)).mean(axis=1)
    scores = cfg.alpha * depth_err + (1.0 - cfg.alpha) * sem_err

    best = None  # ((score, -coarse, pose.key()), pose)
    for j, pose in enumerate(poses):
        if not valid[j]:
            continue
        cand = candidates[owner[j]]
        score = float(scores[j])
        if cand.refined_score is None or score < cand.refined_score:
            cand.refined_score = score
        key = (score, -cand.coarse_score, pose.key())
        if best is None:
            best = (key, pose)
        elif score < best[0][0] - SCORE_TIE_EPS:
            best = (key, pose)
        elif score <= best[0][0] + SCORE_TIE_EPS and key[1:] < best[0][1:]:
            best = ((best[0][0], key[1], key[2]), pose)
    if best is None:
        return candidates[0].pose, True
    return best[1], False


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline knobs with the stock defaults."""

    coarse_rays: int = 7          # V, coarse ray count fed to the volumes
    ray_count: int = 40           # l, full-resolution prediction rays
    fov_deg: float = 80.0
    orientation_bins: int = 36
    w_s: float = 0.4
    t_room: float = 0.8
    top_k: int = 5
    delta_res: float = 0.1
    delta_ang: float = 5.0
    delta_max: float = 5.0
    alpha: float | None = None    # None defaults to w_d = 1 - w_s
    lambda_d: float = 1.0
    lambda_s: float = 1.0
    max_range: float = 15.0
    vote_window: int = 1
    semantic_metric: str = "binary"
    use_interior_mask: bool = True
    refine_enabled: bool = True
    workers: int = 1

    @property
    def w_d(self) -> float:
        return 1.0 - self.w_s

    @property
    def effective_alpha(self) -> float:
        return self.w_d if self.alpha is None else self.alpha

    def cam_lowres(self) -> CameraModel:
        return CameraModel(self.fov_deg, self.coarse_rays, self.max_range)

    def cam_highres(self) -> CameraModel:
        return CameraModel(self.fov_deg, self.ray_count, self.max_range)

    def refinement(self) -> RefinementConfig:
        return RefinementConfig(
            top_k=self.top_k, delta_res=self.delta_res,
            delta_ang=self.delta_ang, delta_max=self.delta_max,
            alpha=self.effective_alpha, cam_highres=self.cam_highres())

    def to_dict(self) -> dict:
        return {
            "coarse_rays": self.coarse_rays, "ray_count": self.ray_count,
            "fov_deg": self.fov_deg, "orientation_bins": self.orientation_bins,
            "w_s": self.w_s, "t_room": self.t_room, "top_k": self.top_k,
            "delta_res": self.delta_res, "delta_ang": self.delta_ang,
            "delta_max": self.delta_max, "alpha": self.effective_alpha,
            "lambda_d": self.lambda_d, "lambda_s": self.lambda_s,
            "max_range": self.max_range, "vote_window": self.vote_window,
            "semantic_metric": self.semantic_metric,
            "use_interior_mask": self.use_interior_mask,
            "refine_enabled": self.refine_enabled, "workers": self.workers,
        }


@dataclass
class SceneContext:
    """Per-scene cache: reference fields and masks survive across queries."""

    fp: SemanticFloorplan
    cfg: PipelineConfig
    grid: PoseGrid
    fields: ReferenceFields
    interior: np.ndarray
    _room_masks: dict = field(default_factory=dict)

    def room_mask_for(self, label: str):
        if label not in self._room_masks:
            self._room_masks[label] = room_mask(self.fp, label, self.grid.orientation_bins)
        return self._room_masks[label]


def prepare_scene(fp: SemanticFloorplan, cfg: PipelineConfig) -> SceneContext:
    grid = PoseGrid(spec=fp.spec, orientation_bins=cfg.orientation_bins)
    fields = reference_fields(fp, grid, cfg.cam_lowres(), workers=cfg.workers)
    return SceneContext(
        fp=fp, cfg=cfg, grid=grid, fields=fields,
        interior=interior_mask(fp, cfg.orientation_bins))


@dataclass
class LocalizeResult:
    pose: Pose
    candidates: list[Candidate]
    timings_s: dict
    flags: list[str]
    volumes: dict | None = None

    @property
    def degenerate(self) -> bool:
        return any(f in ("mask-degenerate", "refine-fallback") for f in self.flags)

    def to_dict(self, config: PipelineConfig | None = None) -> dict:
        doc = {
            "pose": {"x": self.pose.x, "y": self.pose.y,
                     "theta_deg": self.pose.theta_deg},
            "candidates": [c.to_dict() for c in self.candidates],
            "flags": list(self.flags),
            "timings_s": {k: float(v) for k, v in self.timings_s.items()},
        }
        if config is not None:
            doc["config"] = config.to_dict()
        return doc


def coarse_volumes(context: SceneContext, coarse_depths, coarse_labels):
    """Depth and semantic volumes for one query from the cached scene fields."""
    cfg = context.cfg
    cam = cfg.cam_lowres()
    pd = build_depth_volume(context.fp, coarse_depths, cam, context.grid,
                            lambda_d=cfg.lambda_d, fields=context.fields)
    ps = build_semantic_volume(context.fp, coarse_labels, cam, context.grid,
                               lambda_s=cfg.lambda_s,
                               semantic_metric=cfg.semantic_metric,
                               fields=context.fields)
    return pd, ps


def localize(fp: SemanticFloorplan, pred: RayBundle,
             room_hint: tuple[str, float] | None = None,
             cfg: PipelineConfig | None = None,
             context: SceneContext | None = None,
             return_volumes: bool = False,
             w_s: float | None = None,
             precomputed=None) -> LocalizeResult:
    """Full pipeline: interpolate, build volumes, fuse, mask, Top-K, refine.

    `context` carries per-scene caches for benchmark loops; `precomputed`
    optionally supplies already-built (P_d, P_s) so weight sweeps can re-fuse
    without re-casting. Stage wall-clock timings are reported per query.
    """
    cfg = cfg or PipelineConfig()
    if context is None:
        context = prepare_scene(fp, cfg)
    if len(pred) != cfg.ray_count:
        raise ExtractionError(
            f"prediction has {len(pred)} rays, pipeline expects {cfg.ray_count}")
    weight_s = cfg.w_s if w_s is None else w_s
    flags: list[str] = []
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    try:
        gap = cfg.fov_deg / (cfg.coarse_rays - 1) if cfg.coarse_rays > 1 else 0.0
        cd = interpolate_depth_linear(pred.depths, cfg.fov_deg, cfg.coarse_rays, gap)
        cl = interpolate_semantic_majority(pred.labels, cfg.fov_deg,
                                           cfg.coarse_rays, gap, cfg.vote_window)
    except Exception as e:
        raise ExtractionError(f"[prediction] {e}") from e
    timings["prediction"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    try:
        if precomputed is not None:
            pd, ps = precomputed
        else:
            pd, ps = coarse_volumes(context, cd, cl)
        pc = fuse(ps, pd, weight_s)
        if cfg.use_interior_mask:
            pc, status = apply_mask(pc, context.interior, True)
            if status == MASK_DEGENERATE:
                flags.append("mask-degenerate")
        if room_hint is not None:
            label, conf = room_hint
            if conf >= cfg.t_room:
                mask, found = context.room_mask_for(label)
                if not found:
                    flags.append("room-label-not-found")
                else:
                    pc, status = apply_mask(pc, mask, True)
                    if status == MASK_DEGENERATE:
                        flags.append("mask-degenerate")
                    elif status == MASK_APPLIED:
                        flags.append("room-mask-applied")
        candidates = topk_candidates(pc, cfg.top_k, cfg.delta_res)
    except ExtractionError:
        raise
    except Exception as e:
        raise ExtractionError(f"[localization] {e}") from e
    timings["localization"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    if cfg.refine_enabled:
        try:
            pose, fell_back = refine(fp, pred, candidates, cfg.refinement(),
                                     workers=cfg.workers,
                                     semantic_metric=cfg.semantic_metric)
        except ExtractionError:
            raise
        except Exception as e:
            raise ExtractionError(f"[refinement] {e}") from e
        if fell_back:
            flags.append("refine-fallback")
    else:
        pose = candidates[0].pose
    timings["refinement"] = time.perf_counter() - t2

    volumes = None
    if return_volumes:
        volumes = {"depth": pd, "semantic": ps, "fused": pc}
    return LocalizeResult(pose=pose, candidates=candidates,
                          timings_s=timings, flags=flags, volumes=volumes)
