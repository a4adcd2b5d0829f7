"""Batch 2D grid ray traversal, the pipeline's hot kernel.

Two interchangeable implementations of the same exact-stepping DDA
(Amanatides-Woo style): a scalar loop compiled with numba, and a vectorized
numpy lockstep fallback. Both perform the identical per-ray arithmetic in the
identical order, so their outputs are bitwise equal; which one runs is chosen
by the FLOORLOC_BACKEND environment variable ("numba", "numpy", or "auto")
or programmatically via `use_backend`.

Sentinel labels in the output: >= 1 semantic hit, -1 no hit within range,
-2 ray origin outside the grid, -3 ray origin inside structure.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np

LABEL_NO_HIT = -1
LABEL_OUTSIDE = -2
LABEL_IN_STRUCTURE = -3

_EDGE_NUDGE = 1e-6  # meters; shifts an on-edge origin toward its cell center


def _cast_rays_scalar(cells, res, ox, oy, xs, ys, dxs, dys, max_range,
                      depths, labels, start, stop):
    h, w = cells.shape
    for n in range(start, stop):
        x0 = xs[n]
        y0 = ys[n]
        dx = dxs[n]
        dy = dys[n]
        if (x0 - ox) % res == 0.0:
            x0 = x0 + _EDGE_NUDGE
        if (y0 - oy) % res == 0.0:
            y0 = y0 + _EDGE_NUDGE
        ix = int(np.floor((x0 - ox) / res))
        iy = int(np.floor((y0 - oy) / res))
        if ix < 0 or ix >= w or iy < 0 or iy >= h:
            depths[n] = 0.0
            labels[n] = LABEL_OUTSIDE
            continue
        if cells[iy, ix] != 0:
            depths[n] = 0.0
            labels[n] = LABEL_IN_STRUCTURE
            continue
        if dx > 0.0:
            step_x = 1
            t_max_x = ((ox + (ix + 1) * res) - x0) / dx
            t_delta_x = res / dx
        elif dx < 0.0:
            step_x = -1
            t_max_x = ((ox + ix * res) - x0) / dx
            t_delta_x = -res / dx
        else:
            step_x = 0
            t_max_x = np.inf
            t_delta_x = np.inf
        if dy > 0.0:
            step_y = 1
            t_max_y = ((oy + (iy + 1) * res) - y0) / dy
            t_delta_y = res / dy
        elif dy < 0.0:
            step_y = -1
            t_max_y = ((oy + iy * res) - y0) / dy
            t_delta_y = -res / dy
        else:
            step_y = 0
            t_max_y = np.inf
            t_delta_y = np.inf
        depth = max_range
        label = LABEL_NO_HIT
        while True:
            if t_max_x < t_max_y:
                t_hit = t_max_x
                ix += step_x
                t_max_x = t_max_x + t_delta_x
            else:
                t_hit = t_max_y
                iy += step_y
                t_max_y = t_max_y + t_delta_y
            if t_hit > max_range:
                break
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
            c = cells[iy, ix]
            if c != 0:
                depth = t_hit
                label = c
                break
        depths[n] = depth
        labels[n] = label


def _cast_rays_numpy(cells, res, ox, oy, xs, ys, dxs, dys, max_range,
                     depths, labels, start, stop):
    h, w = cells.shape
    flat = cells.ravel()
    x0 = xs[start:stop].astype(np.float64, copy=True)
    y0 = ys[start:stop].astype(np.float64, copy=True)
    dx = dxs[start:stop]
    dy = dys[start:stop]
    on_edge_x = (x0 - ox) % res == 0.0
    x0[on_edge_x] = x0[on_edge_x] + _EDGE_NUDGE
    on_edge_y = (y0 - oy) % res == 0.0
    y0[on_edge_y] = y0[on_edge_y] + _EDGE_NUDGE
    ix = np.floor((x0 - ox) / res).astype(np.int64)
    iy = np.floor((y0 - oy) / res).astype(np.int64)

    out_d = np.zeros(x0.shape, dtype=np.float64)
    out_l = np.zeros(x0.shape, dtype=np.int32)
    outside = (ix < 0) | (ix >= w) | (iy < 0) | (iy >= h)
    out_l[outside] = LABEL_OUTSIDE
    safe = np.clip(iy, 0, h - 1) * w + np.clip(ix, 0, w - 1)
    in_struct = ~outside & (flat[safe] != 0)
    out_l[in_struct] = LABEL_IN_STRUCTURE

    live = np.flatnonzero(~outside & ~in_struct)
    x0, y0, dx, dy = x0[live], y0[live], dx[live], dy[live]
    ix, iy = ix[live], iy[live]

    pos_x, neg_x = dx > 0.0, dx < 0.0
    step_x = np.where(pos_x, 1, np.where(neg_x, -1, 0)).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_max_x = np.where(
            pos_x,
            ((ox + (ix + 1) * res) - x0) / dx,
            np.where(neg_x, ((ox + ix * res) - x0) / dx, np.inf),
        )
        t_delta_x = np.where(pos_x, res / dx, np.where(neg_x, -res / dx, np.inf))
    pos_y, neg_y = dy > 0.0, dy < 0.0
    step_y = np.where(pos_y, 1, np.where(neg_y, -1, 0)).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_max_y = np.where(
            pos_y,
            ((oy + (iy + 1) * res) - y0) / dy,
            np.where(neg_y, ((oy + iy * res) - y0) / dy, np.inf),
        )
        t_delta_y = np.where(pos_y, res / dy, np.where(neg_y, -res / dy, np.inf))

    out_d[live] = max_range
    out_l[live] = LABEL_NO_HIT
    idx = live
    while idx.size:
        take_x = t_max_x < t_max_y
        t_hit = np.where(take_x, t_max_x, t_max_y)
        ix = ix + np.where(take_x, step_x, 0)
        iy = iy + np.where(take_x, 0, step_y)
        t_max_x = np.where(take_x, t_max_x + t_delta_x, t_max_x)
        t_max_y = np.where(take_x, t_max_y, t_max_y + t_delta_y)
        beyond = t_hit > max_range
        exited = (ix < 0) | (ix >= w) | (iy < 0) | (iy >= h)
        safe = np.clip(iy, 0, h - 1) * w + np.clip(ix, 0, w - 1)
        code = flat[safe]
        hit = ~beyond & ~exited & (code != 0)
        out_d[idx[hit]] = t_hit[hit]
        out_l[idx[hit]] = code[hit]
        keep = ~(beyond | exited | hit)
        if not keep.all():
            idx = idx[keep]
            ix, iy = ix[keep], iy[keep]
            step_x, step_y = step_x[keep], step_y[keep]
            t_max_x, t_max_y = t_max_x[keep], t_max_y[keep]
            t_delta_x, t_delta_y = t_delta_x[keep], t_delta_y[keep]
    depths[start:stop] = out_d
    labels[start:stop] = out_l


try:
    from numba import njit

    _cast_rays_numba = njit(cache=True, nogil=True)(_cast_rays_scalar)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _cast_rays_numba = None
    HAVE_NUMBA = False

_env = os.environ.get("FLOORLOC_BACKEND", "auto").lower()
if _env not in ("auto", "numba", "numpy"):
    raise ValueError(f"FLOORLOC_BACKEND must be auto|numba|numpy, got {_env!r}")
if _env == "numba" and not HAVE_NUMBA:
    raise ImportError("FLOORLOC_BACKEND=numba but numba is not importable")
_BACKEND = "numpy" if _env == "numpy" or not HAVE_NUMBA else "numba"


def get_backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ImportError("numba backend requested but numba is not importable")
    _BACKEND = name


@contextmanager
def use_backend(name: str):
    prev = _BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def _impl():
    return _cast_rays_numba if _BACKEND == "numba" else _cast_rays_numpy


def cast_rays_batch(cells: np.ndarray, res: float, origin: tuple[float, float],
                    xs: np.ndarray, ys: np.ndarray,
                    dxs: np.ndarray, dys: np.ndarray,
                    max_range: float, workers: int = 1):
    """Cast n rays against the grid; returns (depths, labels).

    Each ray is independent, so the batch may be partitioned into any number
    of contiguous chunks across worker threads without changing a single bit
    of the output.
    """
    cells = np.ascontiguousarray(cells, dtype=np.int8)
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    dxs = np.ascontiguousarray(dxs, dtype=np.float64)
    dys = np.ascontiguousarray(dys, dtype=np.float64)
    n = xs.shape[0]
    depths = np.empty(n, dtype=np.float64)
    labels = np.empty(n, dtype=np.int32)
    impl = _impl()
    ox, oy = float(origin[0]), float(origin[1])
    args = (cells, float(res), ox, oy, xs, ys, dxs, dys, float(max_range),
            depths, labels)
    workers = max(1, int(workers))
    if workers == 1 or n < 2 * workers:
        impl(*args, 0, n)
        return depths, labels
    bounds = np.linspace(0, n, workers + 1, dtype=np.int64)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(impl, *args, int(bounds[i]), int(bounds[i + 1]))
            for i in range(workers)
        ]
        for f in futures:
            f.result()
    return depths, labels


def warmup() -> None:
    """Trigger numba compilation so later timings exclude JIT cost."""
    cells = np.zeros((4, 4), dtype=np.int8)
    cells[0, :] = 1
    cast_rays_batch(cells, 0.1, (0.0, 0.0),
                    np.array([0.25]), np.array([0.25]),
                    np.array([0.6]), np.array([0.8]), 5.0)
