import json
import re
import subprocess
import sys

import numpy as np
import pytest

from catenav.cli import main
from catenav.harness import (generate_random_scenario, named_scenario, read_record_csv,
                             run_simulation, record_to_csv, write_record_csv)
from catenav.metrics import SimulationRecord, compute_metrics
from catenav.svg import render_svg


@pytest.fixture(scope="module")
def narrow_gap_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("narrow")
    code = main(["run", "--scenario", "narrow-gap-8", "--out", str(out)])
    return code, out


def test_run_named_scenario(narrow_gap_run, capsys):
    code, out = narrow_gap_run
    assert code == 0
    for name in ("record.csv", "metrics.json", "scenario.json"):
        assert (out / name).is_file()
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["success"] and metrics["termination"] == "converged"


def test_run_matches_library_call(narrow_gap_run):
    _, out = narrow_gap_run
    record = run_simulation(named_scenario("narrow-gap-8"))
    assert (out / "record.csv").read_text() == record_to_csv(record)


def test_metrics_subcommand_recomputes_report(narrow_gap_run, tmp_path, capsys):
    _, out = narrow_gap_run
    record_file = out / "record.csv"
    before = record_file.read_bytes()
    assert main(["metrics", "--record", str(record_file), "--out", str(tmp_path / "m.json")]) == 0
    expected = compute_metrics(read_record_csv(record_file)).to_json()
    assert (tmp_path / "m.json").read_text().strip() == expected
    assert record_file.read_bytes() == before


def test_plot_structure(narrow_gap_run, tmp_path):
    _, out = narrow_gap_run
    svg_file = tmp_path / "f.svg"
    assert main(["plot", "--record", str(out / "record.csv"), "--out", str(svg_file)]) == 0
    text = svg_file.read_text()
    assert text.count("<polyline") == 8
    assert text.count('class="obstacle"') == 2
    assert text.count('class="start"') == 8 and text.count('class="end"') == 8
    assert text == render_svg(read_record_csv(out / "record.csv"))


def test_validate_reports_robot_overlap(tmp_path, capsys):
    spec = named_scenario("column-2obs")
    robots = spec.robots.copy()
    robots[1] = robots[0] + [0.5, 0.0]
    bad = tmp_path / "bad.json"
    bad.write_text(spec.replace(robots=robots).to_json())
    assert main(["validate", "--scenario", str(bad)]) == 2
    assert re.search(r"A3: \(0, 1\)", capsys.readouterr().err)
    assert main(["validate", "--scenario", "column-2obs"]) == 0


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["run", "--scenario", "no-such-thing", "--out", str(tmp_path)]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert main(["run", "--scenario", str(broken), "--out", str(tmp_path)]) == 2
    assert main(["run", "--scenario", "column-2obs", "--out", str(tmp_path), "--schedule", "chaos"]) == 2
    assert "error" in capsys.readouterr().err


def test_run_timeout_exits_one(tmp_path):
    assert main(["run", "--scenario", "column-2obs", "--out", str(tmp_path), "--timeout", "0.5"]) == 1
    assert json.loads((tmp_path / "metrics.json").read_text())["termination"] == "timeout"


def test_gen_matches_generator(tmp_path, capsys):
    f = tmp_path / "g.json"
    assert main(["gen", "-N", "5", "-M", "4", "--seed", "3", "--out", str(f)]) == 0
    assert f.read_text() == generate_random_scenario(5, 4, 3).to_json() + "\n"
    assert main(["gen", "--scenario", "amr-gap-2", "--out", str(tmp_path / "a.json")]) == 0
    assert main(["gen", "-N", "5"]) == 2


def test_batch_subcommand(tmp_path, monkeypatch):
    monkeypatch.setenv("CATE_THREADS", "1")
    spec = tmp_path / "b.json"
    spec.write_text(json.dumps({"cells": [[3, 1]], "trials": 1, "timeout": 20}))
    out = tmp_path / "out"
    assert main(["batch", "--spec", str(spec), "--out", str(out)]) in (0, 1)
    assert (out / "runs.csv").read_text().count("\n") == 3
    assert (out / "summary.csv").is_file()
    spec.write_text(json.dumps({"cells": [[3, 1]], "colour": 1}))
    assert main(["batch", "--spec", str(spec), "--out", str(out)]) == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "catenav.cli", "validate", "--scenario", "platoon-3d-8"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "ok"


def make_record(positions, radii=()):
    positions = np.asarray(positions, float)
    T, N, n = positions.shape
    M = len(radii)
    return SimulationRecord(0.1, positions, np.tile(np.arange(N), (T, 1)), positions,
                            np.zeros((T, M, n)) + 9.0, np.asarray(radii, float))


def test_svg_stationary_robot_single_marker():
    text = render_svg(make_record(np.zeros((3, 1, 2))))
    assert text.count('class="stationary"') == 1 and "<polyline" not in text


def test_svg_polylines_and_determinism():
    rng = np.random.default_rng(0)
    rec = make_record(np.cumsum(rng.normal(size=(20, 4, 2)), axis=0), radii=[1.0, 2.0])
    a, b = render_svg(rec), render_svg(rec)
    assert a == b and a.count("<polyline") == 4 and a.count("<circle") == 2


def test_svg_3d_has_two_panels():
    rec = make_record(np.cumsum(np.ones((5, 2, 3)), axis=0))
    text = render_svg(rec)
    assert 'id="panel-xy"' in text and 'id="panel-xz"' in text
    assert text.count("<polyline") == 4


def test_record_file_round_trip(tmp_path):
    rec = run_simulation(named_scenario("amr-gap-2").with_params(timeout=1.0))
    write_record_csv(rec, tmp_path / "r.csv")
    back = read_record_csv(tmp_path / "r.csv")
    assert np.allclose(back.positions, rec.positions) and np.allclose(back.headings, rec.headings)
    assert record_to_csv(back) == record_to_csv(rec)
