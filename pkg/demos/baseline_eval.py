"""Score the constant-velocity baseline against regular labels on a few scenes.

Run: python3 demos/baseline_eval.py
"""

import warnings

from occflow.baseline import constant_velocity_predict
from occflow.grid import GridSpec
from occflow.labels import build_labels
from occflow.metrics import METRIC_NAMES, evaluate
from occflow.scene import SceneConfig, generate_synthetic_scenario

spec = GridSpec(200, 200, 0.4, (-40.0, -40.0), num_waypoints=10)
motions = {"constant_velocity": {"constant_velocity": 1.0},
           "mixed": {"constant_velocity": 1.0, "constant_turn_rate": 1.0, "stop_and_go": 1.0}}

for name, mix in motions.items():
    print(f"== {name} motion")
    for seed in range(3):
        scene = generate_synthetic_scenario(seed, SceneConfig(motion_mix=mix), spec)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            preds = constant_velocity_predict(scene)
        report = evaluate(preds, build_labels(scene))
        for cls in report.rows:
            means, _ = report.mean(cls)
            cells = "  ".join(f"{m}={'-' if means[m] is None else format(means[m], '.3f')}"
                              for m in METRIC_NAMES)
            print(f"seed {seed} {cls:10s} {cells}")
