"""Occupancy, flow and flow-trace losses with analytic gradients.

Per-class losses are raw sums over waypoints and cells; :func:`total_loss`
applies the ``1 / (h * w * T)`` normalization and the loss weights.
Predicted occupancy is held as logits; every logarithm clips its argument
into ``[PROB_EPS, 1 - PROB_EPS]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .grid import AgentClass
from .labels import LabelSet
from .warp import warp_values, warp_vjp

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    occupancy: float = 1000.0
    flow: float = 1.0
    trace: float = 1000.0

    def __post_init__(self):
        for name in ("occupancy", "flow", "trace"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v!r}")

    def scaled(self, k: float) -> "LossWeights":
        return LossWeights(self.occupancy * k, self.flow * k, self.trace * k)


@dataclass
class Prediction:
    """One class's predicted occupancy logits (T, h, w) and backward flow (T, h, w, 2)."""

    logits: np.ndarray
    flow: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.flow = np.asarray(self.flow, dtype=np.float64)
        if self.flow.shape != self.logits.shape + (2,):
            raise ValueError(f"flow shape {self.flow.shape} does not match logits {self.logits.shape}")
        if not (np.all(np.isfinite(self.logits)) and np.all(np.isfinite(self.flow))):
            raise ValueError("prediction contains non-finite values")

    @property
    def occupancy(self) -> np.ndarray:
        return expit(self.logits)

    @classmethod
    def from_probabilities(cls, occupancy, flow, eps: float = PROB_EPS) -> "Prediction":
        p = np.clip(np.asarray(occupancy, dtype=np.float64), eps, 1 - eps)
        return cls(logit(p), flow)


def cross_entropy(p, q) -> np.ndarray:
    """Binary cross-entropy ``H(p, q) = -[q ln p + (1 - q) ln(1 - p)]`` per cell."""
    p = np.clip(p, PROB_EPS, 1 - PROB_EPS)
    return -(q * np.log(p) + (1 - q) * np.log1p(-p))


def _check(pred: Prediction, labels: LabelSet) -> None:
    if pred.logits.shape != (len(labels.waypoints),) + labels.current.occupancy.shape:
        raise ValueError(f"spec mismatch: prediction {pred.logits.shape} vs labels "
                         f"{(len(labels.waypoints),) + labels.current.occupancy.shape}")


def occupancy_loss(pred: Prediction, labels: LabelSet) -> float:
    _check(pred, labels)
    return float(np.sum(cross_entropy(pred.occupancy, labels.occupancy)))


def flow_loss(pred: Prediction, labels: LabelSet) -> float:
    """L1 flow error weighted by ground-truth occupancy."""
    _check(pred, labels)
    err = np.abs(pred.flow - labels.flow).sum(axis=-1)
    return float(np.sum(err * labels.occupancy))


def traced_values(flows: np.ndarray, current: np.ndarray) -> list[np.ndarray]:
    """Warped current occupancy for t = 1..T (values only)."""
    out, w = [], np.asarray(current, dtype=np.float64)
    for f in flows:
        w = warp_values(f, w)
        out.append(w)
    return out


def trace_loss(pred: Prediction, labels: LabelSet) -> float:
    """Cross-entropy between the flow-traced prediction and ground truth."""
    _check(pred, labels)
    traced = np.stack(traced_values(pred.flow, labels.current.occupancy))
    return float(np.sum(cross_entropy(traced * pred.occupancy, labels.occupancy)))


@dataclass
class LossReport:
    l_occupancy: float
    l_flow: float
    l_trace: float
    total: float
    per_class: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"l_occupancy": self.l_occupancy, "l_flow": self.l_flow,
                "l_trace": self.l_trace, "total": self.total, "per_class": self.per_class}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def combine(components: dict, weights: LossWeights, cells: dict) -> LossReport:
    """Weighted, normalized total from raw per-class ``(l_o, l_f, l_w)`` sums.

    ``cells`` maps each class to its ``h * w * T``.
    """
    per_class = {}
    total = 0.0
    sums = np.zeros(3)
    for cls, (lo, lf, lw) in components.items():
        value = (weights.occupancy * lo + weights.flow * lf + weights.trace * lw) / cells[cls]
        name = cls.value if isinstance(cls, AgentClass) else str(cls)
        per_class[name] = {"l_occupancy": lo, "l_flow": lf, "l_trace": lw, "total": value}
        total += value
        sums += (lo, lf, lw)
    return LossReport(float(sums[0]), float(sums[1]), float(sums[2]), float(total), per_class)


def total_loss(preds: dict, labels: dict, weights: LossWeights = LossWeights()) -> LossReport:
    """Sum over classes of ``(wO * L_O + wF * L_F + wW * L_W) / (h * w * T)``."""
    components, cells = {}, {}
    for cls, pred in preds.items():
        ls = labels[cls]
        components[cls] = (occupancy_loss(pred, ls), flow_loss(pred, ls), trace_loss(pred, ls))
        cells[cls] = pred.logits.size
    return combine(components, weights, cells)


def class_gradients(pred: Prediction, labels: LabelSet, weights: LossWeights = LossWeights(),
                    detach_trace: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of one class's normalized loss w.r.t. logits and flow.

    The clip inside the trace cross-entropy is passed straight through: its
    derivative is taken as 1, with ``dH/dp`` evaluated at the clipped value.
    With ``detach_trace`` the warped occupancy is treated as a constant and
    the trace term sends no gradient to the flow.
    """
    _check(pred, labels)
    scale = 1.0 / pred.logits.size
    p = pred.occupancy
    q = labels.occupancy

    g_logits = weights.occupancy * scale * (p - q)
    g_flow = weights.flow * scale * np.sign(pred.flow - labels.flow) * q[..., None]

    if weights.trace == 0:
        return g_logits, g_flow
    traced = traced_values(pred.flow, labels.current.occupancy)
    w = np.stack(traced)
    pc = np.clip(w * p, PROB_EPS, 1 - PROB_EPS)
    dh_dp = weights.trace * scale * (pc - q) / (pc * (1 - pc))
    g_logits = g_logits + dh_dp * w * p * (1 - p)
    if detach_trace:
        return g_logits, g_flow

    g_w = dh_dp * p
    carry = np.zeros_like(g_w[0])
    g_flow = g_flow.copy()
    sources = [labels.current.occupancy] + traced[:-1]
    for t in range(len(traced) - 1, -1, -1):
        upstream = g_w[t] + carry
        carry, gf = warp_vjp(pred.flow[t], sources[t], upstream)
        g_flow[t] += gf
    return g_logits, g_flow


def loss_gradients(preds: dict, labels: dict, weights: LossWeights = LossWeights(),
                   detach_trace: bool = False) -> dict:
    """Per-class ``(d total / d logits, d total / d flow)``."""
    return {cls: class_gradients(pred, labels[cls], weights, detach_trace)
            for cls, pred in preds.items()}
