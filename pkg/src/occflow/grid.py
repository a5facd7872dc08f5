"""Dense-grid conventions shared by every other module.

Arrays are row-major: ``values[y, x]`` with ``x`` the column and ``y`` the row.
Occupancy grids are ``(h, w)`` float arrays in [0, 1]; flow fields are
``(h, w, 2)`` float arrays holding ``(dx, dy)`` in grid-cell units.

The continuous grid coordinate ``(x, y)`` is the *center* of cell ``(x, y)``,
so a flow vector can be added to a cell index to get a sample point.
Cell ``(x, y)`` covers the world square
``[origin + x * cell_size, origin + (x + 1) * cell_size)`` in each axis.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np


class AgentClass(str, enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"


@dataclass(frozen=True)
class GridSpec:
    """Geometry and timing of the prediction grid.

    Attributes:
      height_cells: number of rows (h).
      width_cells: number of columns (w).
      cell_size: meters per cell.
      origin: world coordinates (meters) of the outer corner of cell (0, 0).
      num_waypoints: prediction waypoints T.
      input_steps: past observation steps, including t = 0.
      aggregation_factor: dataset steps per prediction waypoint.
    """

    height_cells: int = 400
    width_cells: int = 400
    cell_size: float = 0.2
    origin: tuple[float, float] = (-40.0, -40.0)
    num_waypoints: int = 10
    input_steps: int = 5
    aggregation_factor: int = 3

    def __post_init__(self):
        for name in ("height_cells", "width_cells", "num_waypoints",
                     "input_steps", "aggregation_factor"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not (np.isfinite(self.cell_size) and self.cell_size > 0):
            raise ValueError(f"cell_size must be > 0, got {self.cell_size!r}")
        origin = tuple(float(v) for v in self.origin)
        if len(origin) != 2 or not all(np.isfinite(origin)):
            raise ValueError(f"origin must be two finite numbers, got {self.origin!r}")
        object.__setattr__(self, "origin", origin)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_cells, self.width_cells)

    @property
    def future_steps(self) -> int:
        return self.num_waypoints * self.aggregation_factor

    def to_dict(self) -> dict:
        d = asdict(self)
        d["origin"] = list(self.origin)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        d = dict(d)
        if "origin" in d:
            d["origin"] = tuple(d["origin"])
        return cls(**d)


def world_to_grid(spec: GridSpec, world_point) -> np.ndarray:
    """Map world meters to continuous grid coordinates (cell centers at integers).

    Accepts a single ``(x, y)`` pair or any ``(..., 2)`` array.
    """
    p = np.asarray(world_point, dtype=np.float64)
    return (p - np.asarray(spec.origin)) / spec.cell_size - 0.5


def grid_to_world(spec: GridSpec, grid_point) -> np.ndarray:
    p = np.asarray(grid_point, dtype=np.float64)
    return (p + 0.5) * spec.cell_size + np.asarray(spec.origin)


def cell_centers(spec: GridSpec) -> np.ndarray:
    """Continuous coordinates of every cell center, shape ``(h, w, 2)``."""
    ys, xs = np.mgrid[0:spec.height_cells, 0:spec.width_cells]
    return np.stack([xs, ys], axis=-1).astype(np.float64)


@dataclass
class BilinearStencil:
    """Corner indices and weights of a batch of bilinear sample points.

    The lower corner is ``ceil(p) - 1`` so that a point lying exactly on a
    lattice line belongs to the interval on its left/lower side. Values are
    unchanged by this choice; it fixes the subgradient used by the warp
    adjoint.
    """

    x0: np.ndarray
    y0: np.ndarray
    fx: np.ndarray
    fy: np.ndarray

    @classmethod
    def at(cls, px, py) -> "BilinearStencil":
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        if not (np.all(np.isfinite(px)) and np.all(np.isfinite(py))):
            raise ValueError("invalid sample coordinate")
        x0 = np.ceil(px) - 1.0
        y0 = np.ceil(py) - 1.0
        return cls(x0.astype(np.int64), y0.astype(np.int64), px - x0, py - y0)

    def corners(self):
        """Yield ``(xi, yi, weight)`` for the four corners in a fixed order."""
        gx, gy = 1.0 - self.fx, 1.0 - self.fy
        yield self.x0, self.y0, gx * gy
        yield self.x0 + 1, self.y0, self.fx * gy
        yield self.x0, self.y0 + 1, gx * self.fy
        yield self.x0 + 1, self.y0 + 1, self.fx * self.fy

    def gather(self, values: np.ndarray) -> np.ndarray:
        """Corner values, shape ``(4, *points)``; out-of-bounds corners read 0."""
        h, w = values.shape
        out = []
        for xi, yi, _ in self.corners():
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            v = values[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out.append(np.where(inside, v, 0))
        return np.stack(out)

    def weights(self) -> np.ndarray:
        return np.stack([wt for _, _, wt in self.corners()])


def bilinear_sample(values: np.ndarray, px, py) -> np.ndarray:
    """Bilinearly interpolate ``values`` (h, w) at continuous points.

    Corners outside the grid contribute 0, so anything pulled from beyond
    the border is empty space rather than a clamped edge value.

    Raises:
      ValueError: if any coordinate is NaN or infinite.
    """
    st = BilinearStencil.at(px, py)
    return np.sum(st.weights() * st.gather(np.asarray(values, dtype=np.float64)), axis=0)


def validate_occupancy(values: np.ndarray, spec: GridSpec | None = None) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if spec is not None and values.shape[-2:] != spec.shape:
        raise ValueError(f"occupancy shape {values.shape} does not match grid {spec.shape}")
    if not np.all(np.isfinite(values)) or values.min(initial=0) < 0 or values.max(initial=0) > 1:
        raise ValueError("occupancy values must lie in [0, 1]")
    return values


def validate_flow(vectors: np.ndarray, spec: GridSpec | None = None) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[-1] != 2:
        raise ValueError(f"flow must have a trailing axis of 2, got {vectors.shape}")
    if spec is not None and vectors.shape[-3:-1] != spec.shape:
        raise ValueError(f"flow shape {vectors.shape} does not match grid {spec.shape}")
    if not np.all(np.isfinite(vectors)):
        raise ValueError("flow vectors must be finite")
    return vectors
