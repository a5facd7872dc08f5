"""Ground-truth occupancy, backward flow and agent-ID grids."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gridio
from .grid import AgentClass, GridSpec, cell_centers, grid_to_world, world_to_grid
from .scene import Scenario, rasterize_box, rigid_transform_between


class LabelMode(str, enum.Enum):
    REGULAR = "regular"
    SPECULATIVE = "speculative"


@dataclass
class LabeledFrame:
    """One class at one time: occupancy (h, w), backward flow (h, w, 2), IDs (h, w)."""

    occupancy: np.ndarray
    flow: np.ndarray
    ids: np.ndarray

    @classmethod
    def empty(cls, spec: GridSpec) -> "LabeledFrame":
        return cls(np.zeros(spec.shape), np.zeros(spec.shape + (2,)),
                   np.zeros(spec.shape, dtype=np.int64))


@dataclass
class LabelSet:
    current: LabeledFrame
    waypoints: list[LabeledFrame]
    mode: LabelMode = LabelMode.REGULAR

    @property
    def occupancy(self) -> np.ndarray:
        """Waypoint occupancy stacked to (T, h, w)."""
        return np.stack([f.occupancy for f in self.waypoints])

    @property
    def flow(self) -> np.ndarray:
        return np.stack([f.flow for f in self.waypoints])

    @property
    def ids(self) -> np.ndarray:
        return np.stack([f.ids for f in self.waypoints])

    @property
    def agent_ids(self) -> set[int]:
        found = set(np.unique(self.current.ids).tolist())
        for f in self.waypoints:
            found |= set(np.unique(f.ids).tolist())
        found.discard(0)
        return found


def mode_agents(scenario: Scenario, mode: LabelMode | str) -> set[int]:
    """Agent IDs labelled in ``mode``.

    Regular: observed at any past step. Speculative: never observed in the
    past but valid at some future step.
    """
    mode = LabelMode(mode)
    past = range(scenario.first_step, 1)
    seen = {tr.agent_id for tr in scenario.tracks if any(tr.state(t) for t in past)}
    if mode is LabelMode.REGULAR:
        return seen
    future = range(1, scenario.last_step + 1)
    return {tr.agent_id for tr in scenario.tracks
            if tr.agent_id not in seen and any(tr.state(t) for t in future)}


def _check_step(scenario: Scenario, t: int) -> None:
    if t not in scenario.steps:
        raise ValueError(f"timestep {t} outside scenario range "
                         f"[{scenario.first_step}, {scenario.last_step}]")


def render_frame(scenario: Scenario, t: int, cls: AgentClass | str,
                 agents: set[int] | None = None, ref_step: int | None = None) -> LabeledFrame:
    """Render one step, with flow pointing back to each cell's position at ``ref_step``.

    Overlapping agents resolve to the smallest ID. A cell whose owner is not
    observed at ``ref_step`` keeps zero flow. ``ref_step=None`` means ``t - 1``
    (zero flow everywhere when that precedes the scenario).
    """
    _check_step(scenario, t)
    cls = AgentClass(cls)
    spec = scenario.spec
    frame = LabeledFrame.empty(spec)
    if ref_step is None:
        ref_step = t - 1
    tracks = [tr for tr in scenario.tracks
              if tr.agent_class is cls and (agents is None or tr.agent_id in agents)]
    for tr in sorted(tracks, key=lambda tr: tr.agent_id, reverse=True):
        state = tr.state(t)
        if state is None:
            continue
        mask = rasterize_box(state.box(), spec)
        frame.ids[mask] = tr.agent_id
    frame.occupancy[frame.ids != 0] = 1.0

    centers = cell_centers(spec)
    for tr in tracks:
        owned = frame.ids == tr.agent_id
        if not owned.any():
            continue
        prev = tr.state(ref_step) if ref_step in scenario.steps else None
        if prev is None:
            continue
        motion = rigid_transform_between(prev, tr.state(t))
        here = centers[owned]
        there = world_to_grid(spec, motion.apply(grid_to_world(spec, here)))
        frame.flow[owned] = there - here
    return frame


def render_occupancy(scenario: Scenario, t: int, cls, agents=None):
    """Binary occupancy and owning-agent IDs at dataset step ``t``."""
    frame = render_frame(scenario, t, cls, agents)
    return frame.occupancy, frame.ids


def render_backward_flow(scenario: Scenario, t: int, cls, agents=None) -> np.ndarray:
    """Flow ``(x, y)_{t-1} - (x, y)_t`` on occupied cells, zero elsewhere."""
    if t - 1 < scenario.first_step:
        raise ValueError(f"backward flow needs step {t - 1}, before the scenario starts")
    return render_frame(scenario, t, cls, agents).flow


def aggregate_waypoints(frames: list[LabeledFrame], aggregation_factor: int) -> list[LabeledFrame]:
    """Merge consecutive windows of per-step frames into waypoint frames.

    Every frame in a window must carry flow referenced to the step just
    before the window (the previous waypoint). Occupancy is the max over the
    window; each cell takes its ID and flow from the latest frame that
    occupies it, so window-end cells carry the whole-window displacement.
    """
    if aggregation_factor < 1 or len(frames) % aggregation_factor:
        raise ValueError(f"{len(frames)} frames do not split into windows of {aggregation_factor}")
    out = []
    for start in range(0, len(frames), aggregation_factor):
        window = frames[start:start + aggregation_factor]
        occ = np.max([f.occupancy for f in window], axis=0)
        flow = window[0].flow.copy()
        ids = window[0].ids.copy()
        for f in window[1:]:
            hit = f.ids != 0
            flow[hit] = f.flow[hit]
            ids[hit] = f.ids[hit]
        out.append(LabeledFrame(occ, flow, ids))
    return out


def build_class_labels(scenario: Scenario, cls, mode=LabelMode.REGULAR,
                       agents: set[int] | None = None) -> LabelSet:
    mode = LabelMode(mode)
    spec = scenario.spec
    if agents is None:
        agents = mode_agents(scenario, mode)
    if mode is LabelMode.SPECULATIVE:
        current = LabeledFrame.empty(spec)
    else:
        current = render_frame(scenario, 0, cls, agents)
    f = spec.aggregation_factor
    frames = []
    for k in range(spec.num_waypoints):
        ref = k * f
        frames.extend(render_frame(scenario, t, cls, agents, ref_step=ref)
                      for t in range(ref + 1, ref + f + 1))
    return LabelSet(current, aggregate_waypoints(frames, f), mode)


def build_labels(scenario: Scenario, mode=LabelMode.REGULAR,
                 classes=tuple(AgentClass)) -> dict[AgentClass, LabelSet]:
    """Label sets for each agent class."""
    agents = mode_agents(scenario, mode)
    return {AgentClass(c): build_class_labels(scenario, c, mode, agents) for c in classes}


def save_labels(labels: dict[AgentClass, LabelSet], spec: GridSpec, out_dir) -> Path:
    """Write one grid file per (class, t, field) and a ``manifest.json`` index."""
    out_dir = Path(out_dir)
    manifest = {"kind": "labels", "spec": spec.to_dict(), "classes": {}}
    for cls, ls in labels.items():
        entries = []
        for t, frame in enumerate([ls.current] + ls.waypoints):
            stem = f"{cls.value}/t{t:02d}"
            gridio.write_grid(out_dir / f"{stem}_occupancy.off", frame.occupancy)
            gridio.write_grid(out_dir / f"{stem}_flow.off", frame.flow)
            gridio.write_ids(out_dir / f"{stem}_ids.ofi", frame.ids)
            entries.append({"t": t, "occupancy": f"{stem}_occupancy.off",
                            "flow": f"{stem}_flow.off", "ids": f"{stem}_ids.ofi"})
        manifest["classes"][cls.value] = {"mode": ls.mode.value, "frames": entries}
    path = out_dir / "manifest.json"
    gridio.atomic_write_json(path, manifest)
    return path


def load_labels(manifest_path) -> tuple[GridSpec, dict[AgentClass, LabelSet]]:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("kind") != "labels":
        raise ValueError(f"{manifest_path} is not a label manifest")
    spec = GridSpec.from_dict(manifest["spec"])
    base = manifest_path.parent
    out = {}
    for name, entry in manifest["classes"].items():
        frames = []
        for e in sorted(entry["frames"], key=lambda e: e["t"]):
            occ = gridio.read_grid(base / e["occupancy"])
            flow = gridio.read_grid(base / e["flow"])
            ids = gridio.read_ids(base / e["ids"])
            if occ.shape != spec.shape or flow.shape != spec.shape + (2,) or ids.shape != spec.shape:
                raise ValueError("spec mismatch")
            frames.append(LabeledFrame(occ, flow, ids))
        out[AgentClass(name)] = LabelSet(frames[0], frames[1:], LabelMode(entry["mode"]))
    return spec, out
