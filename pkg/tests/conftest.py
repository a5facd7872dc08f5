import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from occflow.grid import GridSpec
from occflow.labels import LabeledFrame, LabelSet
from occflow.losses import Prediction

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def small_spec():
    return GridSpec(60, 60, 0.5, (-15.0, -15.0), num_waypoints=4, input_steps=3, aggregation_factor=3)


def random_instance(seed, h=6, w=6, T=3, margin=0.02):
    """Random labels and prediction whose flows keep ``margin`` away from kinks.

    Fractional parts of the predicted flow and ``|F - F~|`` stay at least
    ``margin`` from 0 so a central difference never straddles a corner of
    the piecewise-linear warp or the L1 term.
    """
    rng = np.random.default_rng(seed)

    def blob():
        m = np.zeros((h, w))
        y, x = rng.integers(0, h - 2), rng.integers(0, w - 2)
        m[y:y + rng.integers(1, 3) + 1, x:x + rng.integers(1, 3) + 1] = 1
        return m

    cur = blob()
    frames = []
    for _ in range(T):
        o = blob()
        frames.append(LabeledFrame(o, rng.uniform(-2, 2, (h, w, 2)) * o[..., None], o.astype(int)))
    labels = LabelSet(LabeledFrame(cur, np.zeros((h, w, 2)), cur.astype(int)), frames)
    logits = rng.normal(0, 1.5, (T, h, w))
    flow = rng.uniform(-1.5, 1.5, (T, h, w, 2))
    for _ in range(100):
        frac = flow - np.floor(flow)
        bad = (np.minimum(frac, 1 - frac) < margin) | (np.abs(flow - labels.flow) < margin)
        if not bad.any():
            break
        flow[bad] = rng.uniform(-1.5, 1.5, bad.sum())
    return Prediction(logits, flow), labels


def central_difference(fn, arr, i, step=1e-4):
    a = arr.copy()
    b = arr.copy()
    a[i] += step
    b[i] -= step
    return (fn(a) - fn(b)) / (2 * step)


# Acceptance outcomes, echoed once more at the end of the session.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
