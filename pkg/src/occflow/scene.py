"""Agent tracks, oriented boxes, rigid motion and synthetic scenarios."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import shapely.geometry
import shapely.ops

from .grid import AgentClass, GridSpec, world_to_grid

# Slack (in cells) below which a box/cell intersection counts as edge contact.
OVERLAP_EPS = 1e-9


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    return theta - 2.0 * math.pi * math.ceil((theta - math.pi) / (2.0 * math.pi))


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float
    width: float
    length: float
    vx: float = 0.0
    vy: float = 0.0
    ax: float = 0.0
    ay: float = 0.0
    valid: bool = True

    def __post_init__(self):
        object.__setattr__(self, "valid", bool(self.valid))
        if not self.valid:
            return
        nums = (self.x, self.y, self.heading, self.width, self.length,
                self.vx, self.vy, self.ax, self.ay)
        if not all(math.isfinite(v) for v in nums):
            raise ValueError("valid agent state has non-finite fields")
        if self.width <= 0 or self.length <= 0:
            raise ValueError("agent extents must be positive")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])

    def box(self) -> "OrientedBox":
        return OrientedBox((self.x, self.y), self.heading, self.width / 2, self.length / 2)


@dataclass
class AgentTrack:
    agent_id: int
    agent_class: AgentClass
    states: dict[int, AgentState]

    def __post_init__(self):
        if self.agent_id < 1:
            raise ValueError("agent_id must be a positive integer (0 means no agent)")
        self.agent_class = AgentClass(self.agent_class)

    def state(self, t: int) -> AgentState | None:
        """The state at ``t`` if observed there, else None."""
        s = self.states.get(t)
        return s if s is not None and s.valid else None

    def valid_steps(self) -> list[int]:
        return sorted(t for t, s in self.states.items() if s.valid)


@dataclass
class Scenario:
    """Tracks on a common timestep range; ``t <= 0`` observed, ``t >= 1`` future.

    Road and traffic-light points are carried through I/O but never used.
    """

    spec: GridSpec
    tracks: list[AgentTrack]
    dt: float = 0.1
    road_points: list = field(default_factory=list)
    traffic_lights: list = field(default_factory=list)

    def __post_init__(self):
        ids = [tr.agent_id for tr in self.tracks]
        if len(set(ids)) != len(ids):
            raise ValueError("agent IDs must be unique within a scenario")
        want = set(self.steps)
        for tr in self.tracks:
            missing = want - set(tr.states)
            if missing:
                raise ValueError(f"track {tr.agent_id} lacks timesteps {sorted(missing)[:5]}")

    @property
    def first_step(self) -> int:
        return 1 - self.spec.input_steps

    @property
    def last_step(self) -> int:
        return self.spec.future_steps

    @property
    def steps(self) -> range:
        return range(self.first_step, self.last_step + 1)

    def track(self, agent_id: int) -> AgentTrack:
        for tr in self.tracks:
            if tr.agent_id == agent_id:
                return tr
        raise KeyError(agent_id)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "dt": self.dt,
            "tracks": [
                {
                    "id": tr.agent_id,
                    "class": tr.agent_class.value,
                    "states": [
                        {"t": t, "x": s.x, "y": s.y, "theta": s.heading, "w": s.width,
                         "l": s.length, "vx": s.vx, "vy": s.vy, "ax": s.ax, "ay": s.ay,
                         "valid": s.valid}
                        for t, s in sorted(tr.states.items())
                    ],
                }
                for tr in self.tracks
            ],
            "road_points": self.road_points,
            "traffic_lights": self.traffic_lights,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        tracks = []
        for tr in d["tracks"]:
            states = {}
            for s in tr["states"]:
                states[int(s["t"])] = AgentState(
                    s["x"], s["y"], s["theta"], s["w"], s["l"], s.get("vx", 0.0),
                    s.get("vy", 0.0), s.get("ax", 0.0), s.get("ay", 0.0), bool(s["valid"]))
            tracks.append(AgentTrack(int(tr["id"]), AgentClass(tr["class"]), states))
        return cls(GridSpec.from_dict(d["spec"]), tracks, float(d.get("dt", 0.1)),
                   list(d.get("road_points", [])), list(d.get("traffic_lights", [])))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle with ``length`` along ``heading`` and ``width`` across it."""

    center: tuple[float, float]
    heading: float
    half_width: float
    half_length: float

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        local = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=np.float64)
        local *= (self.half_length, self.half_width)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center)

    def to_grid(self, spec: GridSpec) -> "OrientedBox":
        """The same box expressed in continuous grid coordinates (cell units)."""
        cx, cy = world_to_grid(spec, self.center)
        k = 1.0 / spec.cell_size
        return OrientedBox((float(cx), float(cy)), self.heading,
                           self.half_width * k, self.half_length * k)


@dataclass(frozen=True)
class RigidTransform:
    """Planar motion ``p -> R(rotation) (p - pivot) + pivot + translation``.

    Maps one pose of an agent onto another: the pivot is the source box
    center and ``translation`` the center displacement.
    """

    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    pivot: tuple[float, float] = (0.0, 0.0)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        d = p - np.asarray(self.pivot)
        out = np.stack([c * d[..., 0] - s * d[..., 1], s * d[..., 0] + c * d[..., 1]], axis=-1)
        return out + np.asarray(self.pivot) + np.asarray(self.translation)

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """``self`` after ``inner``."""
        pivot = np.asarray(inner.pivot)
        moved = self.apply(inner.apply(pivot))
        return RigidTransform(wrap_angle(self.rotation + inner.rotation),
                              tuple(moved - pivot), tuple(pivot))


def rigid_transform_between(state_a: AgentState, state_b: AgentState) -> RigidTransform:
    """Transform carrying the box of ``state_b`` onto the box of ``state_a``.

    Only center and heading are used, so extent changes between frames are
    ignored.
    """
    if not (state_a.valid and state_b.valid):
        raise ValueError("state not observed")
    return RigidTransform(wrap_angle(state_a.heading - state_b.heading),
                          (state_a.x - state_b.x, state_a.y - state_b.y),
                          (state_b.x, state_b.y))


def _sat_overlap(gbox: OrientedBox, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
    """Positive-area intersection between a grid-frame box and unit cells.

    Separating-axis test over the four candidate normals of the two
    rectangles; a zero-width projected overlap is treated as a miss.
    """
    c, s = math.cos(gbox.heading), math.sin(gbox.heading)
    bx, by = gbox.center
    corners = gbox.corners()
    hit = np.ones(np.broadcast(cx, cy).shape, dtype=bool)
    for lo, hi, centers in ((corners[:, 0].min(), corners[:, 0].max(), cx),
                            (corners[:, 1].min(), corners[:, 1].max(), cy)):
        hit &= (np.minimum(centers + 0.5, hi) - np.maximum(centers - 0.5, lo)) > OVERLAP_EPS
    for (ux, uy), half in (((c, s), gbox.half_length), ((-s, c), gbox.half_width)):
        cell_r = 0.5 * (abs(ux) + abs(uy))
        gap = np.abs((cx - bx) * ux + (cy - by) * uy)
        hit &= (cell_r + half - gap) > OVERLAP_EPS
    return hit


def box_cell_overlap(box: OrientedBox, spec: GridSpec, cell) -> bool:
    """True iff the world-frame ``box`` covers positive area of ``cell = (x, y)``."""
    x, y = cell
    if not (0 <= x < spec.width_cells and 0 <= y < spec.height_cells):
        raise ValueError(f"cell {cell} outside the grid")
    return bool(_sat_overlap(box.to_grid(spec), np.float64(x), np.float64(y)))


def rasterize_box(box: OrientedBox, spec: GridSpec) -> np.ndarray:
    """Boolean (h, w) mask of every cell the box overlaps."""
    mask = np.zeros(spec.shape, dtype=bool)
    gbox = box.to_grid(spec)
    corners = gbox.corners()
    x_lo = max(int(math.floor(corners[:, 0].min() + 0.5)) - 1, 0)
    x_hi = min(int(math.ceil(corners[:, 0].max() - 0.5)) + 1, spec.width_cells - 1)
    y_lo = max(int(math.floor(corners[:, 1].min() + 0.5)) - 1, 0)
    y_hi = min(int(math.ceil(corners[:, 1].max() - 0.5)) + 1, spec.height_cells - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return mask
    ys, xs = np.mgrid[y_lo:y_hi + 1, x_lo:x_hi + 1].astype(np.float64)
    mask[y_lo:y_hi + 1, x_lo:x_hi + 1] = _sat_overlap(gbox, xs, ys)
    return mask


# -- synthetic scenes --------------------------------------------------------

MOTIONS = ("constant_velocity", "constant_turn_rate", "stop_and_go")


@dataclass(frozen=True)
class SceneConfig:
    """Knobs for :func:`generate_synthetic_scenario`.

    Speeds in m/s, sizes ``(lo, hi)`` in meters, turn rates in rad/s.
    ``late_fraction`` of the agents are unobserved at every past step and
    appear at a random future step. With ``separation`` set, the swept
    footprints of different agents are kept at least that far apart.
    """

    num_agents: int = 8
    pedestrian_fraction: float = 0.25
    vehicle_speed: tuple[float, float] = (2.0, 10.0)
    pedestrian_speed: tuple[float, float] = (0.5, 1.8)
    vehicle_width: tuple[float, float] = (1.7, 2.2)
    vehicle_length: tuple[float, float] = (3.8, 5.0)
    pedestrian_size: tuple[float, float] = (0.5, 0.9)
    motion_mix: dict = field(default_factory=lambda: {m: 1.0 for m in MOTIONS})
    turn_rate: tuple[float, float] = (-0.4, 0.4)
    stop_go_period: tuple[float, float] = (1.5, 4.0)
    late_fraction: float = 0.0
    dt: float = 0.1
    margin: float = 2.0
    separation: float | None = 1.0
    extent_noise: float = 0.0
    max_attempts: int = 500

    def validate(self, spec: GridSpec) -> None:
        if int(self.num_agents) != self.num_agents or self.num_agents < 1:
            raise ValueError(f"num_agents must be >= 1, got {self.num_agents}")
        if spec.future_steps < 1:
            raise ValueError("scenario needs at least one future step")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        for name in ("pedestrian_fraction", "late_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        unknown = set(self.motion_mix) - set(MOTIONS)
        if unknown:
            raise ValueError(f"unknown motion models {sorted(unknown)}")
        weights = [self.motion_mix.get(m, 0.0) for m in MOTIONS]
        if min(weights) < 0 or sum(weights) <= 0:
            raise ValueError("motion_mix weights must be non-negative with a positive sum")
        extent = min(spec.height_cells, spec.width_cells) * spec.cell_size
        if 2 * self.margin >= extent:
            raise ValueError("margin leaves no room inside the grid")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


def constant_velocity_pose(center, velocity, tau):
    """Center after ``tau`` seconds of constant velocity (shared with the baseline)."""
    return np.asarray(center, dtype=np.float64) + np.asarray(velocity, dtype=np.float64) * tau


def _kinematics(motion: str, p0, heading0, speed, params, times):
    """Centers, headings, velocities and accelerations at each time."""
    n = len(times)
    d0 = np.array([math.cos(heading0), math.sin(heading0)])
    if motion == "constant_turn_rate" and abs(params["omega"]) > 1e-9:
        w = params["omega"]
        th = heading0 + w * times
        centers = np.stack([p0[0] + speed / w * (np.sin(th) - math.sin(heading0)),
                            p0[1] + speed / w * (math.cos(heading0) - np.cos(th))], axis=-1)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        vel = speed * dirs
        acc = speed * w * np.stack([-np.sin(th), np.cos(th)], axis=-1)
        return centers, th, vel, acc
    if motion == "stop_and_go":
        period, phase = params["period"], params["phase"]
        k = 2 * math.pi / period
        arg = k * times + phase
        dist = speed / 2 * (times + (np.sin(arg) - math.sin(phase)) / k)
        spd = speed / 2 * (1 + np.cos(arg))
        centers = p0 + dist[:, None] * d0
        vel = spd[:, None] * d0
        acc = (-speed / 2 * k * np.sin(arg))[:, None] * d0
        return centers, np.full(n, heading0), vel, acc
    v = speed * d0
    centers = np.stack([constant_velocity_pose(p0, v, tau) for tau in times])
    return centers, np.full(n, heading0), np.tile(v, (n, 1)), np.zeros((n, 2))


def generate_synthetic_scenario(seed: int, config: SceneConfig | None = None,
                                spec: GridSpec | None = None) -> Scenario:
    """Deterministic synthetic scene: same seed and config give identical output.

    Every agent box stays at least ``config.margin`` meters inside the grid
    at all timesteps.

    Raises:
      ValueError: for an invalid config, or if agents cannot be placed.
    """
    config = config or SceneConfig()
    spec = spec or GridSpec()
    config.validate(spec)
    rng = np.random.default_rng(seed)
    steps = np.arange(1 - spec.input_steps, spec.future_steps + 1)
    times = steps * config.dt
    lo = np.asarray(spec.origin) + config.margin
    hi = np.asarray(spec.origin) + np.array([spec.width_cells, spec.height_cells]) * spec.cell_size - config.margin
    motions = [m for m in MOTIONS if config.motion_mix.get(m, 0.0) > 0]
    probs = np.array([config.motion_mix[m] for m in motions], dtype=np.float64)
    probs /= probs.sum()

    n_ped = int(round(config.pedestrian_fraction * config.num_agents))
    n_late = int(round(config.late_fraction * config.num_agents))
    classes = [AgentClass.PEDESTRIAN] * n_ped + [AgentClass.VEHICLE] * (config.num_agents - n_ped)
    late = [False] * (config.num_agents - n_late) + [True] * n_late
    order = rng.permutation(config.num_agents)

    footprints = []
    tracks = []
    for agent_id, idx in enumerate(order, start=1):
        cls = classes[idx]
        is_late = late[agent_id - 1]
        for _ in range(config.max_attempts):
            if cls is AgentClass.VEHICLE:
                width = rng.uniform(*config.vehicle_width)
                length = rng.uniform(*config.vehicle_length)
                speed = rng.uniform(*config.vehicle_speed)
            else:
                width = rng.uniform(*config.pedestrian_size)
                length = rng.uniform(*config.pedestrian_size)
                speed = rng.uniform(*config.pedestrian_speed)
            motion = motions[rng.choice(len(motions), p=probs)]
            heading0 = rng.uniform(-math.pi, math.pi)
            params = {"omega": rng.uniform(*config.turn_rate),
                      "period": rng.uniform(*config.stop_go_period),
                      "phase": rng.uniform(0, 2 * math.pi)}
            p0 = rng.uniform(lo, hi)
            centers, headings, vel, acc = _kinematics(motion, p0, heading0, speed, params, times)
            widths = np.full(len(steps), width)
            lengths = np.full(len(steps), length)
            if config.extent_noise > 0:
                widths = widths * (1 + config.extent_noise * rng.standard_normal(len(steps)))
                lengths = lengths * (1 + config.extent_noise * rng.standard_normal(len(steps)))
                widths, lengths = np.maximum(widths, 0.1), np.maximum(lengths, 0.1)
            boxes = [OrientedBox(tuple(c), h, wd / 2, ln / 2)
                     for c, h, wd, ln in zip(centers, headings, widths, lengths)]
            pts = np.concatenate([b.corners() for b in boxes])
            if np.any(pts < lo) or np.any(pts > hi):
                continue
            hull = shapely.geometry.MultiPoint([tuple(p) for p in pts]).convex_hull
            if config.separation is not None:
                zone = hull.buffer(config.separation)
                if any(zone.intersects(other) for other in footprints):
                    continue
            footprints.append(hull)
            break
        else:
            raise ValueError(f"could not place agent {agent_id} within {config.max_attempts} "
                             "attempts; config is infeasible for this grid")
        appear = int(rng.integers(1, spec.future_steps + 1)) if is_late else None
        states = {}
        for i, t in enumerate(steps):
            states[int(t)] = AgentState(
                float(centers[i, 0]), float(centers[i, 1]), float(headings[i]),
                float(widths[i]), float(lengths[i]), float(vel[i, 0]), float(vel[i, 1]),
                float(acc[i, 0]), float(acc[i, 1]), valid=bool(appear is None or t >= appear))
        tracks.append(AgentTrack(agent_id, cls, states))
    return Scenario(spec, tracks, config.dt)


def swept_footprint(track: AgentTrack):
    """Union of the track's valid boxes as a shapely geometry (world frame)."""
    polys = [shapely.geometry.Polygon(s.box().corners()) for s in track.states.values() if s.valid]
    return shapely.ops.unary_union(polys)


def with_states(track: AgentTrack, states: dict[int, AgentState]) -> AgentTrack:
    return replace(track, states=dict(states))
