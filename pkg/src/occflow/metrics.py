"""Occupancy, flow, ID-recall and flow-traced metrics.

Undefined values (no positives, no occupied cells) are reported as ``None``
and skipped when averaging; the number skipped is recorded next to the mean.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grid import AgentClass
from .labels import LabelSet
from .losses import Prediction
from .warp import flow_trace

METRIC_NAMES = ("auc", "soft_iou", "epe", "id_recall", "ft_auc", "ft_iou")
NUM_THRESHOLDS = 100


def pr_points(pred, label, num_thresholds: int = NUM_THRESHOLDS) -> np.ndarray:
    """Precision/recall of ``pred >= tau`` for linearly spaced ``tau`` in [0, 1].

    Returns an array of ``(tau, recall, precision)`` rows, highest threshold
    first, dropping thresholds with no predicted positives.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    label = np.asarray(label).ravel() != 0
    taus = np.linspace(0.0, 1.0, num_thresholds)[::-1]
    # Count positives at each threshold from the sorted predictions.
    order = np.sort(pred)
    pos_sorted = np.sort(pred[label])
    n_pred = pred.size - np.searchsorted(order, taus, side="left")
    n_tp = pos_sorted.size - np.searchsorted(pos_sorted, taus, side="left")
    keep = n_pred > 0
    recall = n_tp[keep] / max(label.sum(), 1)
    precision = n_tp[keep] / n_pred[keep]
    return np.column_stack([taus[keep], recall, precision])


def auc(pred, label, num_thresholds: int = NUM_THRESHOLDS) -> float | None:
    """Area under the precision-recall curve; ``None`` when ``label`` has no positives.

    Points are sorted by recall; repeated recalls keep their best precision.
    The curve starts at recall 0 with the precision of the highest threshold.
    """
    label = np.asarray(label)
    if not np.any(label != 0):
        return None
    pts = pr_points(pred, label, num_thresholds)
    if len(pts) == 0:
        return 0.0
    start = pts[0, 2]
    best = {}
    for r, p in pts[:, 1:]:
        best[r] = max(best.get(r, 0.0), p)
    recall = np.array([0.0] + sorted(best))
    precision = np.array([start] + [best[r] for r in sorted(best)])
    return float(np.clip(np.trapezoid(precision, recall), 0.0, 1.0))


def soft_iou(pred, label) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    inter = np.sum(pred * label)
    union = np.sum(pred + label - pred * label)
    return float(inter / union) if union > 0 else 0.0


def epe(pred_flow, label_flow, label_occ) -> float | None:
    """Mean L2 flow error over cells occupied in the ground truth (in cells)."""
    mask = np.asarray(label_occ) != 0
    if not mask.any():
        return None
    err = np.linalg.norm(np.asarray(pred_flow) - np.asarray(label_flow), axis=-1)
    return float(err[mask].mean())


def id_recall(trace_ids, label_ids) -> float | None:
    """Fraction of labelled cells whose traced ID matches the true owner."""
    trace_ids = np.asarray(trace_ids)
    label_ids = np.asarray(label_ids)
    owned = label_ids != 0
    if not owned.any():
        return None
    return float(np.mean(trace_ids[owned] == label_ids[owned]))


def flow_traced_metrics(trace_values, pred_occ, label_occ,
                        num_thresholds: int = NUM_THRESHOLDS):
    """``(ft_auc, ft_iou)`` of the traced prediction ``W_t * O_t``."""
    traced = np.asarray(trace_values) * np.asarray(pred_occ)
    return auc(traced, label_occ, num_thresholds), soft_iou(traced, label_occ)


@dataclass
class MetricReport:
    """Per class, per waypoint metric rows plus mean rows.

    ``rows[cls][t - 1]`` maps metric name to a float or ``None``.
    """

    rows: dict = field(default_factory=dict)

    def mean(self, cls) -> tuple[dict, dict]:
        """Average over waypoints; returns ``(means, skipped_counts)``."""
        means, skipped = {}, {}
        for name in METRIC_NAMES:
            vals = [r[name] for r in self.rows[cls] if r[name] is not None]
            skipped[name] = len(self.rows[cls]) - len(vals)
            means[name] = float(np.mean(vals)) if vals else None
        return means, skipped

    def to_dict(self) -> dict:
        out = {}
        means, skipped = {}, {}
        for cls, rows in self.rows.items():
            out[cls] = {str(t): dict(r) for t, r in enumerate(rows, start=1)}
            means[cls], skipped[cls] = self.mean(cls)
        out["mean"] = means
        out["skipped"] = skipped
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        rows = {}
        for name, per_t in data.items():
            if name in ("mean", "skipped"):
                continue
            rows[name] = [per_t[k] for k in sorted(per_t, key=int)]
        return cls(rows)

    def to_csv(self) -> str:
        """One row per (class, t), metric columns in the usual table order."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("class", "t") + METRIC_NAMES)
        for cls, rows in self.rows.items():
            for t, r in enumerate(rows, start=1):
                writer.writerow([cls, t] + [_fmt(r[m]) for m in METRIC_NAMES])
        return buf.getvalue()


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def comparison_table(a: MetricReport, b: MetricReport, cls, waypoint_seconds: float = 1.0) -> list[list]:
    """Time column plus six metrics for each of two reports (12 metric columns)."""
    cls = _name(cls)
    header = ["time_s"] + [f"a_{m}" for m in METRIC_NAMES] + [f"b_{m}" for m in METRIC_NAMES]
    table = [header]
    for t, (ra, rb) in enumerate(zip(a.rows[cls], b.rows[cls]), start=1):
        table.append([round(t * waypoint_seconds, 6)] + [ra[m] for m in METRIC_NAMES]
                     + [rb[m] for m in METRIC_NAMES])
    return table


def _name(cls) -> str:
    return cls.value if isinstance(cls, AgentClass) else str(cls)


def _waypoint_row(pred: Prediction, labels: LabelSet, trace, t: int, num_thresholds: int) -> dict:
    frame = labels.waypoints[t]
    occ = pred.occupancy[t]
    ft_auc, ft_iou = flow_traced_metrics(trace[t].values, occ, frame.occupancy, num_thresholds)
    return {
        "auc": auc(occ, frame.occupancy, num_thresholds),
        "soft_iou": soft_iou(occ, frame.occupancy),
        "epe": epe(pred.flow[t], frame.flow, frame.occupancy),
        "id_recall": id_recall(trace[t].ids, frame.ids),
        "ft_auc": ft_auc,
        "ft_iou": ft_iou,
    }


def evaluate_class(pred: Prediction, labels: LabelSet, num_thresholds: int = NUM_THRESHOLDS,
                   jobs: int = 1) -> list[dict]:
    """Trace the current occupancy through the predicted flow and score each waypoint."""
    T = len(labels.waypoints)
    if pred.logits.shape != (T,) + labels.current.occupancy.shape:
        raise ValueError(f"spec mismatch: prediction {pred.logits.shape} vs labels "
                         f"{(T,) + labels.current.occupancy.shape}")
    trace = flow_trace(labels.current.occupancy, labels.current.ids, pred.flow)
    if jobs <= 1:
        return [_waypoint_row(pred, labels, trace, t, num_thresholds) for t in range(T)]
    with ThreadPoolExecutor(jobs) as pool:
        return list(pool.map(lambda t: _waypoint_row(pred, labels, trace, t, num_thresholds), range(T)))


def evaluate(preds, labels, num_thresholds: int = NUM_THRESHOLDS, jobs: int = 1) -> MetricReport:
    """Score predictions against labels.

    Accepts either one ``Prediction``/``LabelSet`` pair or dicts keyed by class.
    """
    if isinstance(preds, Prediction):
        preds, labels = {"all": preds}, {"all": labels}
    rows = {}
    for cls in sorted(preds, key=_name):
        if cls not in labels:
            raise ValueError(f"no labels for class {_name(cls)}")
        rows[_name(cls)] = evaluate_class(preds[cls], labels[cls], num_thresholds, jobs)
    return MetricReport(rows)
