"""Occupancy flow fields: grids, labels, warping, losses, metrics and baselines."""

from .grid import AgentClass, GridSpec, bilinear_sample, cell_centers, grid_to_world, world_to_grid
from .labels import LabeledFrame, LabelMode, LabelSet, build_labels
from .losses import LossWeights, Prediction, loss_gradients, total_loss
from .metrics import MetricReport, auc, epe, evaluate, id_recall, soft_iou
from .scene import AgentState, AgentTrack, Scenario, SceneConfig, generate_synthetic_scenario
from .warp import WarpedOccupancy, flow_trace, warp_once

__all__ = [
    "AgentClass", "AgentState", "AgentTrack", "GridSpec", "LabelMode", "LabelSet", "LabeledFrame",
    "LossWeights", "MetricReport", "Prediction", "Scenario", "SceneConfig", "WarpedOccupancy",
    "auc", "bilinear_sample", "build_labels", "cell_centers", "epe", "evaluate", "flow_trace",
    "generate_synthetic_scenario", "grid_to_world", "id_recall", "loss_gradients", "soft_iou",
    "total_loss", "warp_once", "world_to_grid",
]
