import numpy as np
import pytest

from floorloc.eval import SceneParams, generate_scene
from floorloc.floorplan import GridSpec, SemanticFloorplan, WALL
from floorloc.probvolume import (
    MASK_APPLIED,
    MASK_DEGENERATE,
    MASK_SKIPPED,
    PoseGrid,
    ProbabilityVolume,
    VolumeError,
    apply_mask,
    argmax_pose,
    build_depth_volume,
    build_semantic_volume,
    coarse_angle_comb,
    fuse,
    load_volume,
    reference_fields,
    save_volume,
)
from floorloc.raycast import CameraModel, Pose, cast_bundle

from conftest import box_room


CAM7 = CameraModel(fov_deg=80.0, ray_count=7, max_range=15.0)


def small_scene(seed=21):
    return generate_scene(SceneParams(extent_m=(6.0, 5.0), room_grid=(2, 2),
                                      seed=seed))


def grid_for(fp, bins=36):
    return PoseGrid(spec=fp.spec, orientation_bins=bins)


def test_volume_dimensions_for_10x7_plan():
    w, h = 100, 70
    cells = np.zeros((h, w), dtype=np.int8)
    cells[0, :] = WALL
    cells[-1, :] = WALL
    cells[:, 0] = WALL
    cells[:, -1] = WALL
    spec = GridSpec(width_cells=w, height_cells=h, resolution=0.1)
    fp = SemanticFloorplan(spec=spec, cells=cells)
    grid = grid_for(fp, 36)
    vol = build_depth_volume(fp, np.full(7, 2.0), CAM7, grid)
    # one score per (x-cell, y-cell, bin): 100 x 70 x 36 poses, stored
    # as a (rows, cols, bins) array in (y, x, bin) order
    assert vol.values.shape == (70, 100, 36)
    assert (fp.spec.width_cells, fp.spec.height_cells, grid.orientation_bins) == (100, 70, 36)


def test_noise_free_oracle_peaks_at_true_pose():
    fp = small_scene()
    grid = grid_for(fp, 12)
    # ground truth exactly on a cell center and bin angle
    free = np.argwhere(fp.free)
    iy, ix = map(int, free[len(free) // 3])
    kb = 2
    gt = grid.pose_of(ix, iy, kb)
    ref = cast_bundle(fp, gt, CAM7)
    vol_d = build_depth_volume(fp, ref.depths, CAM7, grid)
    vol_s = build_semantic_volume(fp, ref.labels, CAM7, grid)
    fused = fuse(vol_s, vol_d, 0.4)
    best = argmax_pose(fused)
    assert abs(best.x - gt.x) <= fp.spec.resolution
    assert abs(best.y - gt.y) <= fp.spec.resolution
    # brute-force check: no pose scores a strictly smaller depth error
    fields = reference_fields(fp, grid, CAM7)
    o, v = grid.orientation_bins, 7
    err = np.abs(fields.depths.reshape(o, v, *fp.cells.shape)
                 - ref.depths[None, :, None, None]).mean(axis=1)
    err = np.moveaxis(err, 0, 2)
    err[~fields.free] = np.inf
    assert err[iy, ix, kb] <= err.min() + 1e-12


def test_semantic_perfect_match_attains_max_raw_score():
    fp = small_scene(3)
    grid = grid_for(fp, 12)
    free = np.argwhere(fp.free)
    iy, ix = map(int, free[len(free) // 2])
    gt = grid.pose_of(ix, iy, 5)
    ref = cast_bundle(fp, gt, CAM7)
    vol = build_semantic_volume(fp, ref.labels, CAM7, grid)
    assert vol.values[iy, ix, 5] == vol.values.max()


def test_constant_mismatch_normalizes_to_uniform():
    fp = box_room()
    grid = grid_for(fp, 4)
    # all-wall references everywhere; an all-door prediction mismatches all rays
    vol = build_semantic_volume(fp, np.full(7, 3, dtype=np.int32), CAM7, grid)
    free_poses = int(fp.free.sum()) * 4
    vals = vol.values[vol.values > 0]
    assert len(vals) == free_poses
    assert np.allclose(vals, 1.0 / free_poses)


def test_single_free_cell_gets_unit_mass():
    cells = np.ones((5, 5), dtype=np.int8)
    cells[2, 2] = 0
    spec = GridSpec(width_cells=5, height_cells=5, resolution=0.1)
    fp = SemanticFloorplan(spec=spec, cells=cells)
    grid = grid_for(fp, 36)
    vol = build_depth_volume(fp, np.full(7, 1.0), CAM7, grid)
    assert vol.values[2, 2, :].sum() == pytest.approx(1.0)
    assert vol.total() == pytest.approx(1.0)


def test_all_structure_plan_is_an_error():
    cells = np.ones((4, 4), dtype=np.int8)
    spec = GridSpec(width_cells=4, height_cells=4, resolution=0.1)
    fp = SemanticFloorplan(spec=spec, cells=cells)
    with pytest.raises(VolumeError, match="no free poses"):
        build_depth_volume(fp, np.full(7, 1.0), CAM7, grid_for(fp, 4))


def test_depth_volume_rejects_bad_predictions():
    fp = box_room()
    grid = grid_for(fp, 4)
    with pytest.raises(VolumeError):
        build_depth_volume(fp, np.full(6, 1.0), CAM7, grid)
    with pytest.raises(VolumeError):
        build_depth_volume(fp, np.zeros(7), CAM7, grid)


def test_fuse_endpoints_and_fixed_point():
    fp = small_scene(4)
    grid = grid_for(fp, 8)
    free = np.argwhere(fp.free)
    iy, ix = map(int, free[10])
    ref = cast_bundle(fp, grid.pose_of(ix, iy, 1), CAM7)
    pd = build_depth_volume(fp, ref.depths, CAM7, grid)
    ps = build_semantic_volume(fp, ref.labels, CAM7, grid)
    assert np.array_equal(fuse(ps, pd, 0.0).values, pd.values)
    assert np.allclose(fuse(pd, pd, 0.3).values, pd.values)
    fused = fuse(ps, pd, 0.4)
    assert fused.total() == pytest.approx(1.0, abs=1e-6)


def test_fuse_grid_mismatch_rejected():
    fp = box_room()
    pd = build_depth_volume(fp, np.full(7, 1.0), CAM7, grid_for(fp, 4))
    ps = build_semantic_volume(fp, np.ones(7, dtype=np.int32), CAM7, grid_for(fp, 8))
    with pytest.raises(VolumeError, match="grids"):
        fuse(ps, pd, 0.5)


def test_apply_mask_threshold_gate():
    fp = box_room()
    grid = grid_for(fp, 4)
    vol = build_depth_volume(fp, np.full(7, 1.5), CAM7, grid)
    mask = np.zeros(vol.values.shape, dtype=bool)
    mask[5:15, 5:15, :] = True
    masked, status = apply_mask(vol, mask, threshold_ok=0.85 >= 0.8)
    assert status == MASK_APPLIED
    assert masked.values[~mask].sum() == 0.0
    assert masked.total() == pytest.approx(1.0)
    same, status = apply_mask(vol, mask, threshold_ok=0.79 >= 0.8)
    assert status == MASK_SKIPPED
    assert same is vol


def test_apply_mask_degenerate_returns_unmasked():
    fp = box_room()
    vol = build_depth_volume(fp, np.full(7, 1.5), CAM7, grid_for(fp, 4))
    mask = np.zeros(vol.values.shape, dtype=bool)
    mask[0, 0, :] = True  # wall cell: zero probability everywhere in the mask
    out, status = apply_mask(vol, mask, True)
    assert status == MASK_DEGENERATE
    assert out is vol


def test_apply_mask_preserves_survivor_ranking():
    fp = small_scene(9)
    grid = grid_for(fp, 8)
    vol = build_depth_volume(fp, np.full(7, 1.2), CAM7, grid)
    rng = np.random.default_rng(0)
    mask = rng.random(vol.values.shape) < 0.5
    masked, status = apply_mask(vol, mask, True)
    assert status == MASK_APPLIED
    surv = mask & (vol.values > 0)
    before = vol.values[surv]
    after = masked.values[surv]
    # ranking among survivors is preserved: no pairwise inversions
    rng2 = np.random.default_rng(1)
    i = rng2.integers(0, len(before), 4000)
    j = rng2.integers(0, len(before), 4000)
    lt = before[i] < before[j]
    assert not (after[i][lt] > after[j][lt]).any()
    assert masked.values[~mask].sum() == 0.0


def test_argmax_single_entry_and_tie_break():
    spec = GridSpec(width_cells=10, height_cells=8, resolution=0.1)
    grid = PoseGrid(spec=spec, orientation_bins=36)
    values = np.zeros((8, 10, 36))
    values[5, 3, 9] = 1.0  # cell x=3, y=5, bin 9
    pose = argmax_pose(ProbabilityVolume(grid, values))
    assert (pose.x, pose.y, pose.theta_deg) == (pytest.approx(0.35), pytest.approx(0.55), 90.0)
    uniform = ProbabilityVolume(grid, np.ones((8, 10, 36)))
    first = argmax_pose(uniform)
    assert (first.x, first.y, first.theta_deg) == (pytest.approx(0.05), pytest.approx(0.05), 0.0)


def test_argmax_invariant_to_positive_scaling():
    fp = small_scene(5)
    grid = grid_for(fp, 8)
    vol = build_depth_volume(fp, np.full(7, 2.0), CAM7, grid)
    scaled = ProbabilityVolume(grid, vol.values * 37.5)
    assert argmax_pose(vol) == argmax_pose(scaled)


def test_argmax_all_zero_is_error():
    spec = GridSpec(width_cells=4, height_cells=4, resolution=0.1)
    vol = ProbabilityVolume(PoseGrid(spec, 4), np.zeros((4, 4, 4)))
    with pytest.raises(VolumeError):
        argmax_pose(vol)


def test_volume_file_round_trip(tmp_path):
    fp = small_scene(8)
    grid = grid_for(fp, 6)
    vol = build_depth_volume(fp, np.full(7, 1.7), CAM7, grid)
    path = tmp_path / "vol.flpv"
    save_volume(vol, path)
    blob = path.read_bytes()
    assert blob[:4] == b"FLPV"
    h, w, o = vol.values.shape
    assert len(blob) == 16 + 4 * h * w * o
    # data serialized in (y, x, bin) order
    first_vals = np.frombuffer(blob[16:16 + 4 * o], dtype="<f4")
    assert np.allclose(first_vals, vol.values[0, 0, :].astype(np.float32))
    raw = load_volume(path)
    assert raw.shape == (h, w, o)
    back = load_volume(path, spec=fp.spec)
    assert np.allclose(back.values, vol.values, atol=1e-6)


def test_build_is_worker_invariant():
    fp = small_scene(13)
    grid = grid_for(fp, 12)
    a = build_depth_volume(fp, np.full(7, 1.1), CAM7, grid, workers=1)
    b = build_depth_volume(fp, np.full(7, 1.1), CAM7, grid, workers=4)
    assert np.array_equal(a.values, b.values)


def test_normalized_volumes_sum_to_one():
    fp = small_scene(17)
    grid = grid_for(fp, 12)
    for builder, pred in ((build_depth_volume, np.full(7, 1.3)),
                          (build_semantic_volume, np.ones(7, dtype=np.int32))):
        vol = builder(fp, pred, CAM7, grid)
        assert vol.normalized
        assert abs(vol.total() - 1.0) <= 1e-6


def test_coarse_angle_comb_layout():
    spec = GridSpec(width_cells=4, height_cells=4, resolution=0.1)
    grid = PoseGrid(spec, orientation_bins=4)
    comb = coarse_angle_comb(grid, CameraModel(80.0, 3, 15.0))
    assert comb.shape == (12,)
    assert comb[0] == pytest.approx(40.0)    # bin 0, leftmost ray
    assert comb[1] == pytest.approx(0.0)
    assert comb[2] == pytest.approx(-40.0)
    assert comb[3] == pytest.approx(130.0)   # bin 1 starts at 90 deg
