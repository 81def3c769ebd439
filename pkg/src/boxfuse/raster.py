"""Box-to-BEV rasterization onto the ego grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .geometry import BOUNDARY_EPS, BoxBEV

# relative slack when the extent/voxel ratio is an integer up to float round-off
_RATIO_TOL = 1e-9


def _floor_ratio(extent: float, step: float) -> int:
    r = extent / step
    n = round(r)
    if abs(r - n) <= _RATIO_TOL * max(1.0, abs(r)):
        return int(n)
    return math.floor(r)


@dataclass(frozen=True)
class GridSpec:
    """Detection range and voxel size. Row ``u`` runs along x from ``x_min``,
    column ``v`` along y from ``y_min``."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    v_x: float
    v_y: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ConfigError("grid range must be non-empty")
        if not (self.v_x > 0 and self.v_y > 0):
            raise ConfigError("voxel size must be positive")

    @property
    def dims(self) -> tuple[int, int]:
        return grid_dims(self)

    def cell_centers_x(self) -> np.ndarray:
        return self.x_min + (np.arange(self.dims[0]) + 0.5) * self.v_x

    def cell_centers_y(self) -> np.ndarray:
        return self.y_min + (np.arange(self.dims[1]) + 0.5) * self.v_y

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


def grid_dims(g: GridSpec) -> tuple[int, int]:
    """``(floor((x_max-x_min)/v_x), floor((y_max-y_min)/v_y))``.

    A ratio within 1e-9 (relative) of an integer counts as that integer, so
    76.8 / 0.4 gives 192 rather than 191.
    """
    return _floor_ratio(g.x_max - g.x_min, g.v_x), _floor_ratio(g.y_max - g.y_min, g.v_y)


@dataclass(frozen=True)
class PseudoBev:
    grid: GridSpec
    values: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def as_feature_map(self) -> np.ndarray:
        return self.values[:, :, None]


def footprint_mask(box: BoxBEV, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Inclusive inside-test of every (xs[u], ys[v]) cell centre against ``box``.

    cos/sin are evaluated once in scalar math so the result is bit-stable
    regardless of how many cells are scanned.
    """
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = (xs - box.x)[:, None]
    dy = (ys - box.y)[None, :]
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return (np.abs(lx) <= box.l / 2 + BOUNDARY_EPS) & (np.abs(ly) <= box.w / 2 + BOUNDARY_EPS)


def _cell_window(box: BoxBEV, g: GridSpec, n_rows: int, n_cols: int):
    c, s = abs(math.cos(box.yaw)), abs(math.sin(box.yaw))
    ex = c * box.l / 2 + s * box.w / 2
    ey = s * box.l / 2 + c * box.w / 2
    # one cell of slack on each side covers round-off at the boundary
    u0 = math.floor((box.x - ex - g.x_min) / g.v_x - 0.5) - 1
    u1 = math.ceil((box.x + ex - g.x_min) / g.v_x - 0.5) + 1
    v0 = math.floor((box.y - ey - g.y_min) / g.v_y - 0.5) - 1
    v1 = math.ceil((box.y + ey - g.y_min) / g.v_y - 0.5) + 1
    return max(u0, 0), min(u1, n_rows - 1), max(v0, 0), min(v1, n_cols - 1)


def rasterize(boxes: Sequence[BoxBEV], g: GridSpec, dtype=np.float32) -> PseudoBev:
    """Max-score occupancy map; each box only scans the cells under its bounding rectangle."""
    rows, cols = grid_dims(g)
    if rows <= 0 or cols <= 0:
        raise ConfigError(f"grid has no cells ({rows}x{cols})")
    values = np.zeros((rows, cols), dtype=dtype)
    xs, ys = g.cell_centers_x(), g.cell_centers_y()
    for box in boxes:
        if not (box.w > 0 and box.l > 0):
            continue
        u0, u1, v0, v1 = _cell_window(box, g, rows, cols)
        if u0 > u1 or v0 > v1:
            continue
        inside = footprint_mask(box, xs[u0 : u1 + 1], ys[v0 : v1 + 1])
        if not inside.any():
            continue
        win = values[u0 : u1 + 1, v0 : v1 + 1]
        np.maximum(win, np.where(inside, dtype(box.score), dtype(0)), out=win)
    return PseudoBev(g, values)


def write_pgm(bev: PseudoBev, path) -> None:
    """Plain (P2) grayscale dump, values scaled by 255."""
    vals = np.clip(np.rint(bev.values * 255), 0, 255).astype(int)
    rows, cols = vals.shape
    lines = ["P2", f"{cols} {rows}", "255"]
    lines.extend(" ".join(map(str, r)) for r in vals)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
