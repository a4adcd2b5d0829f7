import numpy as np
import pytest

from floorloc import _kernels
from floorloc.floorplan import DOOR, WALL, WINDOW, GridSpec, RoomPolygon, SemanticFloorplan


@pytest.fixture(scope="session", autouse=True)
def _warm_numba():
    _kernels.warmup()


def box_room(size_m=4.0, resolution=0.1, extra=None):
    """Square room with a wall perimeter; `extra` patches (code, y, x) cells."""
    n = round(size_m / resolution) + 2
    cells = np.zeros((n, n), dtype=np.int8)
    cells[0, :] = WALL
    cells[-1, :] = WALL
    cells[:, 0] = WALL
    cells[:, -1] = WALL
    if extra:
        for code, iy, ix in extra:
            cells[iy, ix] = code
    spec = GridSpec(width_cells=n, height_cells=n, resolution=resolution)
    return SemanticFloorplan(spec=spec, cells=cells)


@pytest.fixture
def square_room():
    return box_room()


def plan_with_rooms():
    """10 x 7 m plan with a 2 x 2 m 'W/C' room and two 'Bedroom' rooms."""
    w, h = 100, 70
    cells = np.zeros((h, w), dtype=np.int8)
    cells[0, :] = WALL
    cells[-1, :] = WALL
    cells[:, 0] = WALL
    cells[:, -1] = WALL
    rooms = [
        RoomPolygon("W/C", [[1.0, 1.0], [3.0, 1.0], [3.0, 3.0], [1.0, 3.0]]),
        RoomPolygon("Bedroom", [[4.0, 1.0], [6.0, 1.0], [6.0, 2.0], [4.0, 2.0]]),
        RoomPolygon("Bedroom", [[7.0, 4.0], [9.0, 4.0], [9.0, 6.0], [7.0, 6.0]]),
    ]
    spec = GridSpec(width_cells=w, height_cells=h, resolution=0.1)
    return SemanticFloorplan(spec=spec, cells=cells, rooms=rooms)


DOOR_CODE = DOOR
WINDOW_CODE = WINDOW
