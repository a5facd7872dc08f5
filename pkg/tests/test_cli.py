import csv
import json

import numpy as np
import pytest

from occflow import gridio, render
from occflow.cli import main
from occflow.labels import load_labels
from occflow.scene import Scenario

SMALL = ["--height", "60", "--width", "60", "--cell-size", "0.5", "--waypoints", "3", "--agents", "4"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def scene(tmp_path, capsys):
    code, out, _ = run(capsys, "generate", "--seed", 7, "--out", tmp_path / "s", *SMALL)
    assert code == 0
    return tmp_path / "s" / "scenario_000007.json"


def read_tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_generate_is_byte_identical(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "generate", "--seed", 7, "--count", 2, "--out", tmp_path / d, *SMALL)[0] == 0
    a, b = read_tree(tmp_path / "a"), read_tree(tmp_path / "b")
    assert len(a) == 2 and a == b
    for path in (tmp_path / "a").iterdir():
        sc = Scenario.load(path)
        assert sc.to_json() == path.read_text()


def test_generate_rejects_zero_agents(tmp_path, capsys):
    code, _, err = run(capsys, "generate", "--agents", 0, "--out", tmp_path / "x")
    assert code == 1 and err.startswith("occflow: error[E_VALIDATION]")
    assert not (tmp_path / "x").exists()


def test_labels_modes(tmp_path, capsys, scene):
    assert run(capsys, "labels", "--scenario", scene, "--out", tmp_path / "r")[0] == 0
    _, reg = load_labels(tmp_path / "r" / "manifest.json")
    assert any(ls.current.occupancy.any() for ls in reg.values())
    assert run(capsys, "labels", "--scenario", scene, "--mode", "speculative", "--out", tmp_path / "p")[0] == 0
    _, spec_labels = load_labels(tmp_path / "p" / "manifest.json")
    assert all(not ls.occupancy.any() for ls in spec_labels.values())
    code, _, err = run(capsys, "labels", "--scenario", scene, "--mode", "sideways", "--out", tmp_path / "q")
    assert code == 2 and "error[E_USAGE]" in err


def test_evaluate_labels_against_themselves(tmp_path, capsys, scene):
    run(capsys, "labels", "--scenario", scene, "--out", tmp_path / "l")
    m = tmp_path / "l" / "manifest.json"
    code, _, _ = run(capsys, "evaluate", "--predictions", m, "--labels", m,
                     "--out", tmp_path / "r.json", "--csv", tmp_path / "r.csv")
    assert code == 0
    report = json.loads((tmp_path / "r.json").read_text())
    _, labels = load_labels(m)
    for cls, ls in labels.items():
        for t, row in report[cls.value].items():
            occ = ls.waypoints[int(t) - 1].occupancy
            if not occ.any():
                assert row["auc"] is None and row["epe"] is None
                continue
            assert row["auc"] == 1.0 and row["epe"] == 0.0
            # near-binary predictions: 0.99 k / (k + 0.01 (N - k))
            k, n = occ.sum(), occ.size
            assert row["soft_iou"] == pytest.approx(0.99 * k / (k + 0.01 * (n - k)), rel=1e-6)
    header = next(csv.reader((tmp_path / "r.csv").open()))
    assert header == ["class", "t", "auc", "soft_iou", "epe", "id_recall", "ft_auc", "ft_iou"]


def test_evaluate_spec_mismatch(tmp_path, capsys, scene):
    run(capsys, "labels", "--scenario", scene, "--out", tmp_path / "l")
    run(capsys, "generate", "--seed", 1, "--out", tmp_path / "s2", *SMALL[:-4], "--waypoints", 2,
        "--agents", 2)
    run(capsys, "labels", "--scenario", tmp_path / "s2" / "scenario_000001.json", "--out", tmp_path / "l2")
    code, _, err = run(capsys, "evaluate", "--predictions", tmp_path / "l2" / "manifest.json",
                       "--labels", tmp_path / "l" / "manifest.json", "--out", tmp_path / "r.json")
    assert code == 1 and "error[E_SPEC]" in err and "spec mismatch" in err


def test_predict_trace_and_render(tmp_path, capsys, scene):
    run(capsys, "labels", "--scenario", scene, "--out", tmp_path / "l")
    lm = tmp_path / "l" / "manifest.json"
    for method in ("cv", "trajset"):
        code, _, _ = run(capsys, "predict", method, "--scenario", scene, "--out", tmp_path / method)
        assert code == 0
    assert (tmp_path / "trajset" / "hypotheses.json").exists()
    pm = tmp_path / "cv" / "manifest.json"
    outs = []
    for jobs in (1, 8):
        d = tmp_path / f"trace{jobs}"
        assert run(capsys, "trace", "--predictions", pm, "--labels", lm, "--out", d, "--jobs", jobs)[0] == 0
        outs.append(read_tree(d))
    assert outs[0] == outs[1] and len(outs[0]) > 1

    occ = tmp_path / "cv" / "vehicle" / "t01_occupancy.off"
    flow = tmp_path / "cv" / "vehicle" / "t01_flow.off"
    assert run(capsys, "render", "--input", occ, "--style", "occupancy", "--out", tmp_path / "o.pgm")[0] == 0
    img = render.decode_pnm((tmp_path / "o.pgm").read_bytes())
    np.testing.assert_array_equal(img, render.occupancy_image(gridio.read_grid(occ)))
    assert run(capsys, "render", "--input", flow, "--style", "combined", "--occupancy", occ,
               "--max-magnitude", 5, "--out", tmp_path / "c.ppm")[0] == 0
    ids = tmp_path / "l" / "vehicle" / "t01_ids.ofi"
    assert run(capsys, "render", "--input", ids, "--style", "ids", "--out", tmp_path / "i.ppm")[0] == 0
    code, _, err = run(capsys, "render", "--input", occ, "--style", "flow", "--out", tmp_path / "f.ppm")
    assert code == 1 and "E_VALIDATION" in err


def test_render_corrupt_header(tmp_path, capsys):
    bad = tmp_path / "bad.off"
    bad.write_bytes(gridio.encode_grid(np.zeros((2, 2)))[:-3])
    code, _, err = run(capsys, "render", "--input", bad, "--style", "occupancy", "--out", tmp_path / "x.pgm")
    assert code == 1 and "error[E_FORMAT]" in err and "byte offset" in err
    assert not (tmp_path / "x.pgm").exists()


def test_config_file_overrides_defaults(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"agents": 3, "height": 50, "width": 50, "cell_size": 0.5,
                               "waypoints": 2, "scene": {"pedestrian_fraction": 0.0}}))
    assert run(capsys, "generate", "--config", cfg, "--out", tmp_path / "g")[0] == 0
    sc = Scenario.load(tmp_path / "g" / "scenario_000000.json")
    assert len(sc.tracks) == 3 and sc.spec.height_cells == 50
    assert all(tr.agent_class.value == "vehicle" for tr in sc.tracks)
    # explicit flags still win
    assert run(capsys, "generate", "--config", cfg, "--agents", 2, "--out", tmp_path / "h")[0] == 0
    assert len(Scenario.load(tmp_path / "h" / "scenario_000000.json").tracks) == 2
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, err = run(capsys, "generate", "--config", cfg, "--out", tmp_path / "k")
    assert code == 1 and "E_CONFIG" in err


def test_pipeline_writes_everything(tmp_path, capsys):
    code, _, _ = run(capsys, "pipeline", "--seed", 2, "--out", tmp_path / "p", *SMALL)
    assert code == 0
    root = tmp_path / "p"
    for sub in ("scenarios", "labels", "predictions", "reports", "figures"):
        assert (root / sub).is_dir()
    summary = json.loads((root / "summary.json").read_text())
    assert set(summary) == {"scenario_000002"}
