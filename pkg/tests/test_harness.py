import statistics

import numpy as np
import pytest

from catenav.geometry import validate_scenario
from catenav.harness import (AREA, EXCLUSION, NAMED_SCENARIOS, BatchSpec, derive_seed,
                             formation_pattern, generate_random_scenario, named_scenario,
                             read_runs_csv, run_batch, run_simulation, runs_csv, splitmix64,
                             summarize)
from catenav.metrics import MetricsReport


def test_splitmix64_reference_values():
    # first outputs of the reference generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4


def test_derived_seeds_distinct_and_stable():
    seeds = {derive_seed(2024, N, M, t) for N in (5, 7, 9, 11) for M in (4, 5, 6, 7) for t in range(10)}
    assert len(seeds) == 160
    assert derive_seed(2024, 5, 4, 0) == derive_seed(2024, 5, 4, 0)
    assert derive_seed(2024, 5, 4, 0) != derive_seed(2025, 5, 4, 0)


@pytest.mark.parametrize("name", ["arrow", "column", "platoon"])
def test_formation_patterns_spacing(name):
    pts = formation_pattern(name, 7, 1.5)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    np.fill_diagonal(d, np.inf)
    assert d.min() == pytest.approx(1.5)
    assert np.allclose(pts.mean(axis=0), [17.5, 12.5], atol=1.0)
    (x0, x1), (y0, y1) = EXCLUSION
    assert np.all((pts[:, 0] > x0) & (pts[:, 0] < x1) & (pts[:, 1] > y0) & (pts[:, 1] < y1))
    with pytest.raises(ValueError):
        formation_pattern("spiral", 3, 1.5)


def test_generator_respects_layout_rules():
    for N, M in [(5, 4), (11, 7), (9, 6)]:
        for trial in range(5):
            spec = generate_random_scenario(N, M, derive_seed(1, N, M, trial))
            assert spec.N == N and spec.M == M and validate_scenario(spec).ok
            (x0, x1), (y0, y1) = AREA
            assert np.all((spec.robots[:, 0] >= x0) & (spec.robots[:, 0] <= x1))
            assert np.all((spec.robots[:, 1] >= y0) & (spec.robots[:, 1] <= y1))
            for ob in spec.obstacles:
                assert 1.7 <= ob.radius <= 4.0
                cx = np.clip(ob.center[0], *EXCLUSION[0])
                cy = np.clip(ob.center[1], *EXCLUSION[1])
                assert np.hypot(ob.center[0] - cx, ob.center[1] - cy) > ob.radius + spec.params.r


def test_generator_is_deterministic():
    a = generate_random_scenario(7, 5, 99)
    b = generate_random_scenario(7, 5, 99)
    assert a.to_json() == b.to_json()
    assert a.to_json() != generate_random_scenario(7, 5, 100).to_json()


@pytest.mark.parametrize("name", sorted(NAMED_SCENARIOS))
def test_named_scenarios_valid(name):
    spec = named_scenario(name)
    assert validate_scenario(spec).ok


def test_unknown_named_scenario():
    with pytest.raises(Exception, match="unknown scenario"):
        named_scenario("nope")


def test_simulation_record_invariants():
    spec = generate_random_scenario(5, 4, 11)
    rec = run_simulation(spec)
    assert rec.positions.shape == (rec.T, 5, 2)
    # sample 0 already holds the allocation chosen by the first sweep
    assert np.all((rec.allocation >= 0) & (rec.allocation < 5))
    assert np.all(np.linalg.norm(rec.inputs, axis=2) <= spec.params.u_max + 1e-9)
    assert rec.inputs.shape[0] in (rec.T - 1, rec.T)
    steps = np.diff(rec.positions, axis=0)
    assert np.allclose(steps, rec.dt * rec.inputs[:len(steps)])
    assert rec.termination in ("converged", "timeout")


def test_simulation_deterministic():
    spec = generate_random_scenario(5, 4, 12)
    a, b = run_simulation(spec), run_simulation(spec)
    assert a.positions.tobytes() == b.positions.tobytes()


def test_settled_start_converges_immediately():
    spec = named_scenario("column-2obs")
    spec = spec.replace(robots=spec.formation.points.copy())
    rec = run_simulation(spec)
    assert rec.termination == "converged"
    assert rec.T == int(round(spec.params.settle_time / spec.params.dt)) + 1


def _report(ctrl, ok, tr, cr, ln):
    return MetricsReport(ctrl, 0, 5, 4, "converged" if ok else "timeout", ok, tr if ok else None,
                         cr, cr, ln, 2.0, 1.0, 0, True, 0, 10)


def test_summary_statistics():
    reps = [_report("CATE", True, 8.0, 1, 50.0), _report("CATE", True, 9.0, 3, 52.0),
            _report("CATE", True, 10.5, 2, 49.0), _report("CATE", False, 0, 7, 70.0)]
    (row,) = summarize(reps)
    assert row["success_rate"] == 75.0 and row["trials"] == 4
    assert row["tr_mean"] == pytest.approx(statistics.mean([8.0, 9.0, 10.5]))
    assert row["tr_sd"] == pytest.approx(statistics.stdev([8.0, 9.0, 10.5]))
    assert row["crossings_mean"] == pytest.approx(2.0)
    assert row["length_sd"] == pytest.approx(statistics.stdev([50.0, 52.0, 49.0]))
    assert read_runs_csv(runs_csv(reps))[1].csv_row() == reps[1].csv_row()


def test_batch_spec_jobs_and_strictness():
    spec = BatchSpec(cells=((5, 4),), trials=2)
    jobs = list(spec.jobs())
    assert len(jobs) == 4 and {j[4] for j in jobs} == {"CATE", "FOTE"}
    assert jobs[0][3] == derive_seed(2024, 5, 4, 0)
    with pytest.raises(Exception, match="colour"):
        BatchSpec.from_dict({"colour": 1})


def test_batch_independent_of_worker_count(tmp_path):
    spec = BatchSpec(cells=((3, 1),), trials=2, timeout=15.0)
    serial, _ = run_batch(spec, workers=1)
    pooled, _ = run_batch(spec.__class__(**{**spec.__dict__, "out_dir": str(tmp_path)}), workers=2)
    assert runs_csv(serial) == runs_csv(pooled)
    assert (tmp_path / "runs.csv").read_text() == runs_csv(serial)
