"""``occflow`` command line: generate, labels, predict, trace, evaluate, render, pipeline.

Every output file is written atomically and contains no timestamps, so
rerunning a command with the same inputs and seed reproduces it byte for
byte. Errors go to stderr as ``occflow: error[CODE]: message``.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import gridio, render
from .baseline import (OCC_HIGH, OCC_LOW, constant_velocity_hypotheses, constant_velocity_predict,
                       load_hypotheses, load_predictions, save_hypotheses, save_predictions,
                       trajset_predict)
from .grid import AgentClass, GridSpec
from .labels import LabelMode, build_labels, load_labels, save_labels
from .losses import Prediction
from .metrics import NUM_THRESHOLDS, MetricReport, evaluate
from .scene import MOTIONS, Scenario, SceneConfig, generate_synthetic_scenario
from .warp import flow_trace, save_trace

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: str, message: str, status: int) -> None:
    print(f"occflow: error[{code}]: {message}", file=sys.stderr)
    raise SystemExit(status)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail("E_USAGE", message, EXIT_USAGE)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


# -- scenario and grid options ----------------------------------------------


def _add_scene_args(p):
    g = p.add_argument_group("scene")
    g.add_argument("--count", type=int, default=1, help="number of scenarios")
    g.add_argument("--agents", type=int, default=8, help="agents per scenario")
    g.add_argument("--pedestrian-fraction", type=float, default=0.25)
    g.add_argument("--late-fraction", type=float, default=0.0,
                   help="fraction of agents first seen in the future")
    g.add_argument("--motion", nargs="+", choices=MOTIONS, default=list(MOTIONS))
    g.add_argument("--height", type=int, default=200, help="grid rows")
    g.add_argument("--width", type=int, default=200, help="grid columns")
    g.add_argument("--cell-size", type=float, default=0.4, help="meters per cell")
    g.add_argument("--waypoints", type=int, default=10)


def _scene_setup(args) -> tuple[GridSpec, SceneConfig]:
    extent_x = args.width * args.cell_size
    extent_y = args.height * args.cell_size
    spec = GridSpec(args.height, args.width, args.cell_size, (-extent_x / 2, -extent_y / 2),
                    args.waypoints)
    extra = dict(getattr(args, "scene", None) or {})
    config = SceneConfig(num_agents=args.agents, pedestrian_fraction=args.pedestrian_fraction,
                         late_fraction=args.late_fraction,
                         motion_mix={m: 1.0 for m in args.motion})
    if extra:
        config = SceneConfig.from_dict({**config.__dict__, **extra})
    if args.count < 1:
        raise ValueError(f"count must be >= 1, got {args.count}")
    config.validate(spec)
    return spec, config


def _generate(args, out_dir: Path) -> list[Path]:
    spec, config = _scene_setup(args)
    seeds = [args.seed + i for i in range(args.count)]
    scenes = _map(args.jobs, lambda s: generate_synthetic_scenario(s, config, spec), seeds)
    paths = []
    for seed, sc in zip(seeds, scenes):
        path = out_dir / f"scenario_{seed:06d}.json"
        gridio.atomic_write_bytes(path, sc.to_json().encode())
        paths.append(path)
    return paths


def _map(jobs: int, fn, items) -> list:
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items))


# -- subcommands ---------------------------------------------------------------


def cmd_generate(args) -> None:
    for path in _generate(args, Path(args.out)):
        print(path)


def cmd_labels(args) -> None:
    scenario = Scenario.load(args.scenario)
    labels = build_labels(scenario, LabelMode(args.mode))
    print(save_labels(labels, scenario.spec, Path(args.out)))


def cmd_predict(args) -> None:
    scenario = Scenario.load(args.scenario)
    if args.method == "cv":
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            preds = constant_velocity_predict(scenario)
        for w in caught:
            print(f"occflow: warning: {w.message}", file=sys.stderr)
    else:
        if args.hypotheses:
            spec, hyps = load_hypotheses(args.hypotheses)
            if spec != scenario.spec:
                raise ValueError("spec mismatch: hypotheses and scenario grids differ")
        else:
            scales = args.speed_scales
            hyps = constant_velocity_hypotheses(scenario, scales, [1.0 / len(scales)] * len(scales),
                                                args.sigma)
            save_hypotheses(Path(args.out) / "hypotheses.json", hyps, scenario.spec)
        preds = {cls: trajset_predict(hyps, scenario, cls) for cls in AgentClass}
    print(save_predictions(preds, scenario.spec, Path(args.out), args.method))


def _load_predictions_or_labels(path) -> tuple[GridSpec, dict[AgentClass, Prediction]]:
    """Read a prediction manifest; a label manifest becomes near-binary predictions."""
    kind = json.loads(Path(path).read_text()).get("kind")
    if kind == "labels":
        spec, labels = load_labels(path)
        return spec, {cls: Prediction.from_probabilities(
            np.where(ls.occupancy > 0, OCC_HIGH, OCC_LOW), ls.flow) for cls, ls in labels.items()}
    return load_predictions(path)


def _matched_inputs(args):
    pspec, preds = _load_predictions_or_labels(args.predictions)
    lspec, labels = load_labels(args.labels)
    if pspec != lspec:
        raise ValueError("spec mismatch: prediction and label grids differ")
    missing = set(preds) - set(labels)
    if missing:
        raise ValueError(f"no labels for classes {sorted(c.value for c in missing)}")
    return lspec, preds, labels


def cmd_trace(args) -> None:
    spec, preds, labels = _matched_inputs(args)
    out_dir = Path(args.out)
    manifest = {"kind": "trace", "spec": spec.to_dict(), "classes": {}}
    for cls in sorted(preds, key=lambda c: c.value):
        cur = labels[cls].current
        trace = flow_trace(cur.occupancy, cur.ids, preds[cls].flow, jobs=args.jobs)
        manifest["classes"][cls.value] = save_trace(trace, out_dir, prefix=f"{cls.value}/")
    path = out_dir / "manifest.json"
    gridio.atomic_write_json(path, manifest)
    print(path)


def cmd_evaluate(args) -> None:
    _, preds, labels = _matched_inputs(args)
    report = evaluate(preds, labels, args.thresholds, args.jobs)
    _write_report(report, Path(args.out), Path(args.csv) if args.csv else None)
    print(args.out)


def _write_report(report: MetricReport, out: Path, csv_path: Path | None) -> None:
    gridio.atomic_write_bytes(out, report.to_json().encode())
    if csv_path is not None:
        gridio.atomic_write_bytes(csv_path, report.to_csv().encode())


def cmd_render(args) -> None:
    if args.style == "ids":
        ids = gridio.read_ids(args.input)
        render.write_ppm(args.out, render.id_color(ids))
        return
    grid = gridio.read_grid(args.input)
    if args.style == "occupancy":
        if grid.ndim != 2:
            raise ValueError("occupancy rendering needs a single-channel grid")
        render.write_pgm(args.out, render.occupancy_image(grid))
        return
    if grid.ndim != 3 or grid.shape[-1] != 2:
        raise ValueError("flow rendering needs a two-channel grid")
    occ = None
    if args.style == "combined":
        if not args.occupancy:
            raise ValueError("--occupancy is required for the combined style")
        occ = gridio.read_grid(args.occupancy)
        if occ.shape != grid.shape[:2]:
            raise ValueError("spec mismatch: occupancy and flow grids differ")
    render.write_ppm(args.out, render.flow_image(grid, args.max_magnitude, occ))


def _render_figures(labels_manifest: Path, preds_manifest: Path, out_dir: Path, t: int = 1) -> None:
    _, labels = load_labels(labels_manifest)
    _, preds = load_predictions(preds_manifest)
    for cls, pred in sorted(preds.items(), key=lambda kv: kv[0].value):
        frame = labels[cls].waypoints[t - 1]
        stem = f"{cls.value}_t{t:02d}"
        render.write_pgm(out_dir / f"{stem}_occupancy.pgm", render.occupancy_image(pred.occupancy[t - 1]))
        mag = max(float(np.abs(pred.flow[t - 1]).max()), 1.0)
        render.write_ppm(out_dir / f"{stem}_flow.ppm",
                         render.flow_image(pred.flow[t - 1], mag, pred.occupancy[t - 1]))
        render.write_ppm(out_dir / f"{stem}_ids.ppm", render.id_color(frame.ids))


def cmd_pipeline(args) -> None:
    out = Path(args.out)
    paths = _generate(args, out / "scenarios")

    def run(path: Path) -> dict:
        name = path.stem
        scenario = Scenario.load(path)
        lm = save_labels(build_labels(scenario), scenario.spec, out / "labels" / name)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            preds = constant_velocity_predict(scenario)
        pm = save_predictions(preds, scenario.spec, out / "predictions" / name, "cv")
        _, labels = load_labels(lm)
        _, loaded = load_predictions(pm)
        report = evaluate(loaded, labels, args.thresholds)
        _write_report(report, out / "reports" / f"{name}.json", out / "reports" / f"{name}.csv")
        _render_figures(lm, pm, out / "figures" / name)
        return report.to_dict()["mean"]

    means = _map(args.jobs, run, paths)
    summary = {p.stem: m for p, m in zip(paths, means)}
    gridio.atomic_write_json(out / "summary.json", summary)
    print(out / "summary.json")


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=_positive_int, default=1, help="worker threads")
    common.add_argument("--config", help="JSON file whose keys override flag defaults")

    parser = _Parser(prog="occflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write synthetic scenarios")
    _add_scene_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("labels", parents=[common], help="build ground-truth grids")
    p.add_argument("--scenario", required=True)
    p.add_argument("--mode", choices=[m.value for m in LabelMode], default="regular")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("predict", parents=[common], help="run a baseline predictor")
    p.add_argument("method", choices=["cv", "trajset"])
    p.add_argument("--scenario", required=True)
    p.add_argument("--hypotheses", help="trajectory hypothesis JSON (trajset)")
    p.add_argument("--speed-scales", type=float, nargs="+", default=[1.0],
                   help="speed multipliers for generated trajset hypotheses")
    p.add_argument("--sigma", type=float, default=0.5,
                   help="positional std growth in m/s for generated hypotheses")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("trace", parents=[common], help="flow-trace current occupancy")
    p.add_argument("--predictions", required=True, help="prediction or label manifest")
    p.add_argument("--labels", required=True, help="label manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions")
    p.add_argument("--predictions", required=True, help="prediction or label manifest")
    p.add_argument("--labels", required=True, help="label manifest")
    p.add_argument("--thresholds", type=_positive_int, default=NUM_THRESHOLDS)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--csv", help="also write a CSV table here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", parents=[common], help="draw a grid file as PGM/PPM")
    p.add_argument("--input", required=True)
    p.add_argument("--style", choices=["occupancy", "flow", "combined", "ids"], required=True)
    p.add_argument("--occupancy", help="occupancy grid for the combined style")
    p.add_argument("--max-magnitude", type=float, default=1.0, help="flow magnitude at full saturation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("pipeline", parents=[common], help="generate, label, predict, evaluate, render")
    _add_scene_args(p)
    p.add_argument("--thresholds", type=_positive_int, default=NUM_THRESHOLDS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse twice: config-file values become defaults that explicit flags override."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        overrides = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError("E_CONFIG", f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(overrides, dict):
        raise CliError("E_CONFIG", "config file must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions} | {"scene"}
    unknown = {k.replace("-", "_") for k in overrides} - known
    if unknown:
        raise CliError("E_CONFIG", f"unknown config keys {sorted(unknown)}")
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in overrides.items()})
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except CliError as exc:
        print(f"occflow: error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except gridio.GridFormatError as exc:
        print(f"occflow: error[E_FORMAT]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, KeyError) as exc:
        code = "E_SPEC" if "spec mismatch" in str(exc) else "E_VALIDATION"
        print(f"occflow: error[{code}]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"occflow: error[E_IO]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
