import json

import numpy as np
import pytest

from floorloc.floorplan import (
    DOOR,
    WALL,
    FloorplanError,
    GridSpec,
    RoomPolygon,
    SemanticFloorplan,
    floorplan_from_dict,
    interior_mask,
    interior_mask_2d,
    load_floorplan,
    points_in_polygon,
    room_mask,
    save_floorplan,
)

from conftest import plan_with_rooms


def well_formed_doc(width=100, height=70):
    return {
        "resolution_m": 0.1,
        "width": width,
        "height": height,
        "origin": [0.0, 0.0],
        "cells": [0] * (width * height),
        "rooms": [{"label": "W/C", "vertices": [[1.0, 1.0], [3.0, 1.0], [3.0, 3.0], [1.0, 3.0]]}],
    }


def test_load_well_formed_100x70(tmp_path):
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(well_formed_doc()))
    fp = load_floorplan(path)
    assert fp.spec.width_cells == 100
    assert fp.spec.height_cells == 70
    assert fp.spec.resolution == 0.1
    assert fp.cells.shape == (70, 100)


def test_load_dimension_mismatch(tmp_path):
    doc = well_formed_doc()
    doc["cells"] = doc["cells"][:-1]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(FloorplanError, match="cells"):
        load_floorplan(path)


def test_load_unknown_code(tmp_path):
    doc = well_formed_doc()
    doc["cells"][1234] = 4  # one past the last known class
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(FloorplanError, match="cells\\[1234\\].*unknown code 4"):
        load_floorplan(path)


def test_load_rejects_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(FloorplanError, match="not valid JSON"):
        load_floorplan(path)


def test_save_load_round_trip_is_byte_stable(tmp_path):
    fp = plan_with_rooms()
    p1 = tmp_path / "a.json"
    p2 = tmp_path / "b.json"
    save_floorplan(fp, p1)
    save_floorplan(load_floorplan(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_interior_round_trips(tmp_path):
    fp = plan_with_rooms()
    interior = np.zeros((70, 100), dtype=bool)
    interior[10:60, 10:90] = True
    fp = SemanticFloorplan(spec=fp.spec, cells=fp.cells, rooms=fp.rooms, interior=interior)
    path = tmp_path / "plan.json"
    save_floorplan(fp, path)
    loaded = load_floorplan(path)
    assert np.array_equal(loaded.interior, interior)


def brute_force_pip(x, y, verts):
    """Independent even-odd crossing test (scalar reference)."""
    inside = False
    n = len(verts)
    for i in range(n):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % n]
        if min(ax, bx) <= x <= max(ax, bx) and min(ay, by) <= y <= max(ay, by):
            cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
            if abs(cross) < 1e-12:
                return True
        if (ay > y) != (by > y):
            if x < ax + (y - ay) * (bx - ax) / (by - ay):
                inside = not inside
    return inside


def test_room_mask_square_room_counts_400_cells():
    fp = plan_with_rooms()
    mask, found = room_mask(fp, "W/C", bins=36)
    assert found
    assert mask.shape == (70, 100, 36)
    per_bin = mask[:, :, 0].sum()
    assert per_bin == 400  # 2 m x 2 m at 0.1 m = 20 x 20 centers
    assert all(mask[:, :, k].sum() == 400 for k in range(36))
    # brute-force oracle over every cell center
    verts = fp.rooms[0].vertices
    expect = sum(
        brute_force_pip((ix + 0.5) * 0.1, (iy + 0.5) * 0.1, verts)
        for iy in range(70) for ix in range(100)
    )
    assert per_bin == expect


def test_room_mask_label_absent():
    fp = plan_with_rooms()
    mask, found = room_mask(fp, "Garage", bins=4)
    assert not found
    assert not mask.any()


def test_room_mask_two_disjoint_rooms():
    fp = plan_with_rooms()
    mask, found = room_mask(fp, "Bedroom", bins=2)
    assert found
    verts_a = fp.rooms[1].vertices
    verts_b = fp.rooms[2].vertices
    expect = sum(
        brute_force_pip((ix + 0.5) * 0.1, (iy + 0.5) * 0.1, verts_a)
        or brute_force_pip((ix + 0.5) * 0.1, (iy + 0.5) * 0.1, verts_b)
        for iy in range(70) for ix in range(100)
    )
    assert mask[:, :, 0].sum() == expect
    # true in both regions
    assert mask[12, 45, 0] and mask[45, 75, 0]


def test_disjoint_room_masks_do_not_overlap():
    fp = plan_with_rooms()
    m1, _ = room_mask(fp, "W/C", bins=3)
    m2, _ = room_mask(fp, "Bedroom", bins=3)
    assert not (m1 & m2).any()


def test_interior_mask_passthrough_and_union():
    fp = plan_with_rooms()
    interior = np.zeros((70, 100), dtype=bool)
    interior[5:30, 5:50] = True
    with_mask = SemanticFloorplan(spec=fp.spec, cells=fp.cells,
                                  rooms=fp.rooms, interior=interior)
    m = interior_mask(with_mask, bins=5)
    assert m.shape == (70, 100, 5)
    assert np.array_equal(m[:, :, 2], interior)
    # without explicit interior: union of room polygons
    m2 = interior_mask_2d(fp)
    for room in fp.rooms:
        cx = np.mean(room.vertices[:, 0])
        cy = np.mean(room.vertices[:, 1])
        ix, iy = fp.spec.cell_of(cx, cy)
        assert m2[iy, ix]


def test_interior_mask_no_rooms_no_mask_is_all_true():
    spec = GridSpec(width_cells=10, height_cells=8, resolution=0.1)
    fp = SemanticFloorplan(spec=spec, cells=np.zeros((8, 10), dtype=np.int8))
    assert interior_mask(fp, bins=2).all()


def test_interior_fraction_tracks_room_coverage():
    # rooms covering ~27.6% of the bounding area yield that mask fraction
    spec = GridSpec(width_cells=100, height_cells=100, resolution=0.1)
    side = np.sqrt(0.276) * 10.0
    rooms = [RoomPolygon("Living Room",
                         [[0.5, 0.5], [0.5 + side, 0.5],
                          [0.5 + side, 0.5 + side], [0.5, 0.5 + side]])]
    fp = SemanticFloorplan(spec=spec, cells=np.zeros((100, 100), dtype=np.int8),
                           rooms=rooms)
    frac = interior_mask_2d(fp).mean()
    assert abs(frac - 0.276) < 0.01


def test_mask_idempotent_under_reapplication():
    fp = plan_with_rooms()
    mask, _ = room_mask(fp, "W/C", bins=4)
    vol = np.random.default_rng(0).random(mask.shape)
    once = vol * mask
    twice = once * mask
    assert np.array_equal(once, twice)


def test_polygon_validation():
    with pytest.raises(FloorplanError, match=">= 3"):
        RoomPolygon("bad", [[0, 0], [1, 0]])
    with pytest.raises(FloorplanError, match="self-intersect"):
        RoomPolygon("bow", [[0, 0], [1, 1], [1, 0], [0, 1]])


def test_room_out_of_bounds_rejected():
    doc = well_formed_doc()
    doc["rooms"] = [{"label": "X", "vertices": [[8.0, 5.0], [12.0, 5.0], [12.0, 6.0], [8.0, 6.0]]}]
    with pytest.raises(FloorplanError, match="bounds"):
        floorplan_from_dict(doc)


def test_grid_spec_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(200):
        spec = GridSpec(
            width_cells=int(rng.integers(1, 200)),
            height_cells=int(rng.integers(1, 200)),
            resolution=float(rng.uniform(0.02, 0.5)),
            origin=(float(rng.uniform(-5, 5)), float(rng.uniform(-5, 5))),
        )
        ix = int(rng.integers(0, spec.width_cells))
        iy = int(rng.integers(0, spec.height_cells))
        assert spec.cell_of(*spec.center_of(ix, iy)) == (ix, iy)


def test_grid_spec_validation():
    with pytest.raises(FloorplanError):
        GridSpec(width_cells=0, height_cells=5, resolution=0.1)
    with pytest.raises(FloorplanError):
        GridSpec(width_cells=5, height_cells=5, resolution=0.0)


def test_points_in_polygon_boundary_counts_inside():
    verts = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]])
    inside = points_in_polygon(np.array([1.0, 0.0, 2.0, 3.0]),
                               np.array([1.0, 1.0, 2.0, 1.0]), verts)
    assert inside.tolist() == [True, True, True, False]
