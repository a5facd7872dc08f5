"""Compare analytic loss gradients with central finite differences.

Run: python3 demos/gradient_check.py
"""

import numpy as np

from occflow.labels import LabeledFrame, LabelSet
from occflow.losses import LossWeights, Prediction, loss_gradients, total_loss

rng = np.random.default_rng(0)
h = w = 6
T = 3


def blob():
    m = np.zeros((h, w))
    y, x = rng.integers(0, h - 2, 2)
    m[y:y + 2, x:x + 2] = 1
    return m


cur = blob()
frames = [LabeledFrame(o, rng.uniform(-1, 1, (h, w, 2)) * o[..., None], o.astype(int))
          for o in (blob() for _ in range(T))]
labels = {"demo": LabelSet(LabeledFrame(cur, np.zeros((h, w, 2)), cur.astype(int)), frames)}
flow = rng.uniform(-1.4, 1.4, (T, h, w, 2)) + 0.03
pred = Prediction(rng.normal(0, 1.5, (T, h, w)), flow)
weights = LossWeights()

g_logits, g_flow = loss_gradients({"demo": pred}, labels, weights)["demo"]


def loss(logits, flow):
    return total_loss({"demo": Prediction(logits, flow)}, labels, weights).total


step = 1e-4
worst = 0.0
for idx in np.ndindex(g_flow.shape):
    if abs(g_flow[idx]) < 1e-6:
        continue
    a, b = flow.copy(), flow.copy()
    a[idx] += step
    b[idx] -= step
    num = (loss(pred.logits, a) - loss(pred.logits, b)) / (2 * step)
    worst = max(worst, abs(num - g_flow[idx]) / abs(g_flow[idx]))
print(f"loss {loss(pred.logits, flow):.4f}")
print(f"flow gradient: worst relative error {worst:.2e} "
      "(a sample straddling a bilinear kink can show a larger value)")
