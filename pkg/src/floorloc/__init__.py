"""Floorplan localization from fused depth and semantic ray observations."""

from ._kernels import get_backend, set_backend, use_backend
from .extraction import (
    Candidate,
    LocalizeResult,
    PipelineConfig,
    RefinementConfig,
    augment_angles,
    localize,
    prepare_scene,
    refine,
    topk_candidates,
)
from .floorplan import (
    DOOR,
    EMPTY,
    WALL,
    WINDOW,
    FloorplanError,
    GridSpec,
    RoomPolygon,
    SemanticFloorplan,
    interior_mask,
    load_floorplan,
    room_mask,
    save_floorplan,
)
from .probvolume import (
    PoseGrid,
    ProbabilityVolume,
    apply_mask,
    argmax_pose,
    build_depth_volume,
    build_semantic_volume,
    fuse,
    load_volume,
    save_volume,
)
from .raycast import NO_HIT, CameraModel, Pose, RayBundle, cast_bundle, cast_ray
from .rays import (
    NoiseModel,
    SimilarityWeights,
    depths_match,
    interpolate_depth_linear,
    interpolate_semantic_majority,
    perturb,
    ray_similarity,
)

__version__ = "0.1.0"
