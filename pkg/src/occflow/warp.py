"""Backward-flow warping of occupancy, flow traces and agent-ID recovery.

Each destination cell pulls its value from ``cell + flow(cell)`` in the
previous grid by bilinear sampling. Destinations never write to each other,
so a warp is a pure per-cell function and can be evaluated in any order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gridio
from .grid import BilinearStencil, validate_flow

ID_FLOOR = 1e-6
# Cells per row block; keeps the per-block temporaries cache sized.
BLOCK_CELLS = 16384


@dataclass
class WarpedOccupancy:
    values: np.ndarray
    ids: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def _stencil(flow: np.ndarray, row0: int = 0) -> BilinearStencil:
    h, w = flow.shape[:2]
    ys, xs = np.mgrid[row0:row0 + h, 0:w]
    return BilinearStencil.at(xs + flow[..., 0], ys + flow[..., 1])


def _warp_rows(flow: np.ndarray, prev: WarpedOccupancy, row0: int, id_floor: float):
    st = _stencil(flow, row0)
    contrib = st.weights() * st.gather(prev.values)
    values = np.clip(contrib.sum(axis=0), 0.0, 1.0)

    corner_ids = st.gather(prev.ids)
    scored = np.where(corner_ids != 0, contrib, -1.0)
    best = np.argmax(scored, axis=0)
    best_score = np.take_along_axis(scored, best[None], axis=0)[0]
    ids = np.take_along_axis(corner_ids, best[None], axis=0)[0]
    ids = np.where((best_score > 0) & (values >= id_floor), ids, 0)
    return values, ids.astype(np.int64)


def warp_once(flow: np.ndarray, prev: WarpedOccupancy, id_floor: float = ID_FLOOR,
              jobs: int = 1) -> WarpedOccupancy:
    """Pull ``prev`` through one backward flow field.

    The ID of a destination is taken from the ID-bearing source corner with
    the largest ``weight * value`` contribution; it is cleared when the
    sampled value falls below ``id_floor``. Destination rows are processed
    in blocks, concurrently when ``jobs > 1``; the result is identical.

    Raises:
      ValueError: if the flow and grid shapes differ or flow is not finite.
    """
    flow = validate_flow(flow)
    if flow.shape[:2] != prev.values.shape:
        raise ValueError(f"spec mismatch: flow {flow.shape[:2]} vs grid {prev.values.shape}")
    h, w = prev.values.shape
    step = max(1, BLOCK_CELLS // w)
    blocks = [(r, min(r + step, h)) for r in range(0, h, step)]

    def run(b):
        return _warp_rows(flow[b[0]:b[1]], prev, b[0], id_floor)

    if jobs <= 1:
        parts = [run(b) for b in blocks]
    else:
        with ThreadPoolExecutor(jobs) as pool:
            parts = list(pool.map(run, blocks))
    return WarpedOccupancy(np.concatenate([p[0] for p in parts]),
                           np.concatenate([p[1] for p in parts]))


def warp_values(flow: np.ndarray, prev_values: np.ndarray) -> np.ndarray:
    """Value-only warp (no IDs, no clamping); the differentiable core."""
    st = _stencil(flow)
    return np.sum(st.weights() * st.gather(prev_values), axis=0)


def warp_vjp(flow: np.ndarray, prev_values: np.ndarray, grad_out: np.ndarray):
    """Adjoint of :func:`warp_values`.

    Returns ``(grad_prev, grad_flow)`` for an upstream gradient ``grad_out``
    on the warped grid. Source-corner gradients are scattered back with the
    bilinear weights; the flow gradient is the derivative of the weights,
    taken on the left/lower interval at lattice lines. Out-of-bounds
    corners hold 0 and receive nothing.
    """
    h, w = prev_values.shape
    st = _stencil(flow)
    v00, v10, v01, v11 = st.gather(prev_values)
    fx, fy = st.fx, st.fy
    grad_flow = np.empty(flow.shape)
    grad_flow[..., 0] = grad_out * ((1 - fy) * (v10 - v00) + fy * (v11 - v01))
    grad_flow[..., 1] = grad_out * ((1 - fx) * (v01 - v00) + fx * (v11 - v10))

    grad_prev = np.zeros(h * w)
    for xi, yi, wt in st.corners():
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        np.add.at(grad_prev, (yi * w + xi)[inside], (wt * grad_out)[inside])
    return grad_prev.reshape(h, w), grad_flow


def flow_trace(current_values: np.ndarray, current_ids: np.ndarray, flows: np.ndarray,
               id_floor: float = ID_FLOOR, num_waypoints: int | None = None,
               jobs: int = 1) -> list[WarpedOccupancy]:
    """Warp the current occupancy and its IDs through ``flows`` (T, h, w, 2).

    Returns the warped grids for t = 1..T. Cost is linear in h * w * T.
    """
    flows = np.asarray(flows, dtype=np.float64)
    if num_waypoints is not None and len(flows) != num_waypoints:
        raise ValueError(f"expected {num_waypoints} flow fields, got {len(flows)}")
    state = WarpedOccupancy(np.asarray(current_values, dtype=np.float64),
                            np.asarray(current_ids, dtype=np.int64))
    trace = []
    for flow in flows:
        state = warp_once(flow, state, id_floor, jobs)
        trace.append(state)
    return trace


def recover_ids(trace: list[WarpedOccupancy], t: int, cell) -> int:
    """Agent that could occupy ``cell = (x, y)`` at waypoint ``t`` (1-based); 0 if none."""
    x, y = cell
    return int(trace[t - 1].ids[y, x])


def warp_once_reference(flow: np.ndarray, prev: WarpedOccupancy, order=None,
                        id_floor: float = ID_FLOOR) -> WarpedOccupancy:
    """Cell-by-cell scalar warp, evaluated in an arbitrary ``order`` of cells.

    Slow; used to check that the vectorized warp has no cross-cell coupling.
    """
    h, w = prev.values.shape
    values = np.zeros((h, w))
    ids = np.zeros((h, w), dtype=np.int64)
    cells = [(y, x) for y in range(h) for x in range(w)]
    if order is not None:
        cells = [cells[i] for i in order]
    for y, x in cells:
        st = BilinearStencil.at(x + flow[y, x, 0], y + flow[y, x, 1])
        total, best, best_id = 0.0, -1.0, 0
        for xi, yi, wt in st.corners():
            xi, yi, wt = int(xi), int(yi), float(wt)
            if 0 <= xi < w and 0 <= yi < h:
                c = wt * prev.values[yi, xi]
                total += c
                if prev.ids[yi, xi] != 0 and c > best:
                    best, best_id = c, int(prev.ids[yi, xi])
        total = min(max(total, 0.0), 1.0)
        values[y, x] = total
        ids[y, x] = best_id if (best > 0 and total >= id_floor) else 0
    return WarpedOccupancy(values, ids)


def save_trace(trace: list[WarpedOccupancy], out_dir, prefix: str = "") -> list[dict]:
    """Dump each step as an OFF1 value grid plus an OFI1 ID raster."""
    out_dir = Path(out_dir)
    entries = []
    for t, step in enumerate(trace, start=1):
        stem = f"{prefix}t{t:02d}"
        gridio.write_grid(out_dir / f"{stem}_trace.off", step.values)
        gridio.write_ids(out_dir / f"{stem}_trace_ids.ofi", step.ids)
        entries.append({"t": t, "values": f"{stem}_trace.off", "ids": f"{stem}_trace_ids.ofi"})
    return entries
