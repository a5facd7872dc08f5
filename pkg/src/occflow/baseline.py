"""Non-learned predictors: constant-velocity extrapolation and trajectory sets.

The constant-velocity predictor shares its motion model with the synthetic
generator, so on constant-velocity scenes it reproduces the labels exactly.
The trajectory-set converter turns weighted Gaussian trajectories into
occupancy grids by rasterizing each box and blurring it with its covariance.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import gridio
from .grid import AgentClass, GridSpec, cell_centers, grid_to_world, world_to_grid
from .labels import LabelMode, build_class_labels
from .losses import Prediction
from .scene import (AgentState, OrientedBox, RigidTransform, Scenario, constant_velocity_pose,
                    rasterize_box, rigid_transform_between, with_states)

OCC_HIGH = 0.99
OCC_LOW = 0.01
# Added to covariance diagonals (cells^2) so a zero covariance becomes a delta kernel.
COV_JITTER = 1e-9


def extrapolate_constant_velocity(scenario: Scenario) -> tuple[Scenario, set[int]]:
    """Replace every future state with a constant-velocity continuation from t = 0.

    Returns the extrapolated scenario and the IDs of agents that were
    extrapolated. Agents observed in the past but not at t = 0 are dropped
    with a warning.
    """
    kept, tracks = set(), []
    for tr in scenario.tracks:
        s0 = tr.state(0)
        if s0 is None:
            if any(tr.state(t) for t in range(scenario.first_step, 0)):
                warnings.warn(f"agent {tr.agent_id} not observed at t=0; skipped", stacklevel=2)
            continue
        states = {t: s for t, s in tr.states.items() if t <= 0}
        for t in range(1, scenario.last_step + 1):
            x, y = constant_velocity_pose(s0.center, s0.velocity, t * scenario.dt)
            states[t] = AgentState(float(x), float(y), s0.heading, s0.width, s0.length,
                                   s0.vx, s0.vy, 0.0, 0.0, True)
        tracks.append(with_states(tr, states))
        kept.add(tr.agent_id)
    return Scenario(scenario.spec, tracks, scenario.dt), kept


def constant_velocity_predict(scenario: Scenario, classes=tuple(AgentClass)) -> dict[AgentClass, Prediction]:
    """Near-binary occupancy and rigid backward flow from constant-velocity boxes."""
    moved, kept = extrapolate_constant_velocity(scenario)
    out = {}
    for cls in classes:
        cls = AgentClass(cls)
        ls = build_class_labels(moved, cls, LabelMode.REGULAR, agents=kept)
        occ = np.where(ls.occupancy > 0, OCC_HIGH, OCC_LOW)
        out[cls] = Prediction.from_probabilities(occ, ls.flow)
    return out


# -- trajectory sets ---------------------------------------------------------


@dataclass
class TrajectoryHypothesis:
    """One predicted trajectory of one agent.

    ``centers`` (T, 2) in meters, ``headings`` (T,), ``covs`` (T, 2, 2) in
    square meters, one entry per waypoint.
    """

    likelihood: float
    centers: np.ndarray
    headings: np.ndarray
    covs: np.ndarray
    width: float
    length: float

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        self.headings = np.asarray(self.headings, dtype=np.float64).reshape(-1)
        self.covs = np.asarray(self.covs, dtype=np.float64).reshape(-1, 2, 2)
        if not 0.0 <= self.likelihood <= 1.0:
            raise ValueError(f"likelihood must lie in [0, 1], got {self.likelihood}")
        if not len(self.centers) == len(self.headings) == len(self.covs):
            raise ValueError("centers, headings and covs must have one entry per waypoint")
        for cov in self.covs:
            check_covariance(cov)

    def box(self, t: int) -> OrientedBox:
        """Box at waypoint index ``t`` (0-based)."""
        return OrientedBox(tuple(self.centers[t]), float(self.headings[t]),
                           self.width / 2, self.length / 2)


def check_covariance(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.shape != (2, 2) or not np.all(np.isfinite(cov)):
        raise ValueError("covariance must be a finite 2x2 matrix")
    if abs(cov[0, 1] - cov[1, 0]) > 1e-9 * max(1.0, np.abs(cov).max()):
        raise ValueError("covariance is not symmetric")
    if np.linalg.eigvalsh(cov).min() < -1e-12 * max(1.0, np.abs(cov).max()):
        raise ValueError("covariance is not positive semi-definite")
    return cov


def gaussian_kernel(cov_cells) -> np.ndarray:
    """Discrete Gaussian on integer offsets, truncated at Mahalanobis distance 3.

    ``cov_cells`` is in square cells with (x, y) ordering; the kernel is
    indexed ``[dy, dx]`` and sums to one.
    """
    raw = check_covariance(cov_cells)
    inv = np.linalg.inv(raw + COV_JITTER * np.eye(2))
    rx = max(int(math.ceil(3 * math.sqrt(raw[0, 0]))), 1)
    ry = max(int(math.ceil(3 * math.sqrt(raw[1, 1]))), 1)
    dy, dx = np.mgrid[-ry:ry + 1, -rx:rx + 1].astype(np.float64)
    m2 = inv[0, 0] * dx * dx + 2 * inv[0, 1] * dx * dy + inv[1, 1] * dy * dy
    k = np.where(m2 <= 9.0, np.exp(-0.5 * m2), 0.0)
    return k / k.sum()


def _validate_set(hyps: list[TrajectoryHypothesis], T: int) -> None:
    total = sum(h.likelihood for h in hyps)
    if total > 1 + 1e-6:
        raise ValueError(f"hypothesis likelihoods sum to {total:.6f} > 1")
    for h in hyps:
        if len(h.centers) != T:
            raise ValueError(f"hypothesis has {len(h.centers)} waypoints, grid expects {T}")


def trajectories_to_occupancy(hypotheses: dict[int, list[TrajectoryHypothesis]],
                              spec: GridSpec) -> np.ndarray:
    """Occupancy (T, h, w) from per-agent trajectory hypotheses.

    Each hypothesis box is rasterized, blurred with its waypoint covariance,
    scaled by its likelihood and clipped to [0, 1]; contributions combine as
    ``1 - prod(1 - c)``.
    """
    T = spec.num_waypoints
    free = np.ones((T,) + spec.shape)
    for hyps in hypotheses.values():
        _validate_set(hyps, T)
        for h in hyps:
            for t in range(T):
                mask = rasterize_box(h.box(t), spec).astype(np.float64)
                if not mask.any():
                    continue
                kernel = gaussian_kernel(h.covs[t] / spec.cell_size ** 2)
                blurred = ndimage.convolve(mask, kernel, mode="constant", cval=0.0)
                free[t] *= 1.0 - np.clip(h.likelihood * blurred, 0.0, 1.0)
    return 1.0 - free


def trajectories_to_flow(hypotheses: dict[int, list[TrajectoryHypothesis]],
                         current: dict[int, AgentState], spec: GridSpec) -> np.ndarray:
    """Backward flow (T, h, w, 2) from each agent's most likely hypothesis.

    Cells of that hypothesis's box at waypoint t point to where they were at
    the previous waypoint (the current state for t = 1). Lower agent IDs win
    where boxes overlap.
    """
    T = spec.num_waypoints
    flow = np.zeros((T,) + spec.shape + (2,))
    centers = cell_centers(spec)
    for agent_id in sorted(hypotheses, reverse=True):
        hyps = hypotheses[agent_id]
        if not hyps or agent_id not in current:
            continue
        best = max(hyps, key=lambda h: h.likelihood)
        prev = current[agent_id]
        for t in range(T):
            here = AgentState(*best.centers[t], best.headings[t], best.width, best.length)
            mask = rasterize_box(here.box(), spec)
            motion: RigidTransform = rigid_transform_between(prev, here)
            pts = centers[mask]
            flow[t][mask] = world_to_grid(spec, motion.apply(grid_to_world(spec, pts))) - pts
            prev = here
    return flow


def trajset_predict(hypotheses: dict[int, list[TrajectoryHypothesis]], scenario: Scenario,
                    agent_class=None) -> Prediction:
    """Prediction from trajectory hypotheses, optionally restricted to one class."""
    if agent_class is not None:
        cls = AgentClass(agent_class)
        hypotheses = {a: h for a, h in hypotheses.items() if scenario.track(a).agent_class is cls}
    current = {a: scenario.track(a).state(0) for a in hypotheses if scenario.track(a).state(0)}
    occ = trajectories_to_occupancy(hypotheses, scenario.spec)
    flow = trajectories_to_flow(hypotheses, current, scenario.spec)
    return Prediction.from_probabilities(occ, flow)


def constant_velocity_hypotheses(scenario: Scenario, speed_scales=(1.0,), likelihoods=None,
                                 sigma_per_second: float = 0.0) -> dict[int, list[TrajectoryHypothesis]]:
    """Trajectory sets made of constant-velocity rollouts at scaled speeds.

    The positional standard deviation grows linearly with time.
    """
    spec = scenario.spec
    if likelihoods is None:
        likelihoods = [1.0 / len(speed_scales)] * len(speed_scales)
    taus = np.arange(1, spec.num_waypoints + 1) * spec.aggregation_factor * scenario.dt
    out = {}
    for tr in scenario.tracks:
        s0 = tr.state(0)
        if s0 is None:
            continue
        hyps = []
        for k, lik in zip(speed_scales, likelihoods):
            centers = np.stack([constant_velocity_pose(s0.center, k * s0.velocity, tau) for tau in taus])
            covs = np.stack([(sigma_per_second * tau) ** 2 * np.eye(2) for tau in taus])
            hyps.append(TrajectoryHypothesis(lik, centers, np.full(len(taus), s0.heading), covs,
                                             s0.width, s0.length))
        out[tr.agent_id] = hyps
    return out


def hypotheses_to_dict(hypotheses: dict[int, list[TrajectoryHypothesis]], spec: GridSpec) -> dict:
    agents = []
    for agent_id in sorted(hypotheses):
        entries = []
        for h in hypotheses[agent_id]:
            wps = [{"t": t + 1, "x": float(h.centers[t, 0]), "y": float(h.centers[t, 1]),
                    "theta": float(h.headings[t]), "cov": h.covs[t].tolist()}
                   for t in range(len(h.centers))]
            entries.append({"likelihood": float(h.likelihood), "w": float(h.width),
                            "l": float(h.length), "waypoints": wps})
        agents.append({"id": int(agent_id), "hypotheses": entries})
    return {"kind": "hypotheses", "spec": spec.to_dict(), "agents": agents}


def hypotheses_from_dict(d: dict) -> tuple[GridSpec, dict[int, list[TrajectoryHypothesis]]]:
    spec = GridSpec.from_dict(d["spec"])
    out = {}
    for agent in d["agents"]:
        hyps = []
        for e in agent["hypotheses"]:
            wps = sorted(e["waypoints"], key=lambda w: w["t"])
            hyps.append(TrajectoryHypothesis(
                float(e["likelihood"]), [(w["x"], w["y"]) for w in wps],
                [w["theta"] for w in wps], [w["cov"] for w in wps], float(e["w"]), float(e["l"])))
        out[int(agent["id"])] = hyps
    return spec, out


def save_hypotheses(path, hypotheses, spec: GridSpec) -> None:
    gridio.atomic_write_json(path, hypotheses_to_dict(hypotheses, spec))


def load_hypotheses(path):
    return hypotheses_from_dict(json.loads(Path(path).read_text()))


def save_predictions(preds: dict[AgentClass, Prediction], spec: GridSpec, out_dir, source: str) -> Path:
    """OFF1 occupancy probabilities and flows per class and waypoint, plus a manifest."""
    out_dir = Path(out_dir)
    manifest = {"kind": "predictions", "source": source, "spec": spec.to_dict(), "classes": {}}
    for cls, pred in preds.items():
        entries = []
        occ = pred.occupancy
        for t in range(len(occ)):
            stem = f"{cls.value}/t{t + 1:02d}"
            gridio.write_grid(out_dir / f"{stem}_occupancy.off", occ[t])
            gridio.write_grid(out_dir / f"{stem}_flow.off", pred.flow[t])
            entries.append({"t": t + 1, "occupancy": f"{stem}_occupancy.off", "flow": f"{stem}_flow.off"})
        manifest["classes"][cls.value] = {"frames": entries}
    path = out_dir / "manifest.json"
    gridio.atomic_write_json(path, manifest)
    return path


def load_predictions(manifest_path) -> tuple[GridSpec, dict[AgentClass, Prediction]]:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("kind") != "predictions":
        raise ValueError(f"{manifest_path} is not a prediction manifest")
    spec = GridSpec.from_dict(manifest["spec"])
    base = manifest_path.parent
    out = {}
    for name, entry in manifest["classes"].items():
        frames = sorted(entry["frames"], key=lambda e: e["t"])
        occ = np.stack([gridio.read_grid(base / e["occupancy"]) for e in frames])
        flow = np.stack([gridio.read_grid(base / e["flow"]) for e in frames])
        if occ.shape[1:] != spec.shape or flow.shape[1:] != spec.shape + (2,):
            raise ValueError("spec mismatch")
        out[AgentClass(name)] = Prediction.from_probabilities(occ, flow)
    return spec, out
