from fractions import Fraction as F
import itertools

import numpy as np
import pytest

from catenav.metrics import (CSV_COLUMNS, MetricsReport, SimulationRecord, allocation_changes,
                             compute_metrics, convergence_index, convergence_time,
                             count_path_crossings, safety_margins, trajectory_length)


def make_record(positions, allocation=None, desired=None, obstacles=None, radii=(), **kw):
    positions = np.asarray(positions, float)
    T, N, n = positions.shape
    allocation = np.tile(np.arange(N), (T, 1)) if allocation is None else allocation
    desired = positions[-1:].repeat(T, 0) if desired is None else desired
    obstacles = np.zeros((T, 0, n)) if obstacles is None else obstacles
    return SimulationRecord(kw.pop("dt", 0.1), positions, allocation, desired, obstacles, np.asarray(radii), **kw)


def paths(*polylines):
    """Stack equally long polylines into a T x N x n array."""
    return np.stack([np.asarray(p, float) for p in polylines], axis=1)


# exact oracle ---------------------------------------------------------------

def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1])


def _on_segment(p, a, b):
    if _cross(_sub(b, a), _sub(p, a)) != 0:
        return False
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def exact_pair_crossings(A, B):
    A = [tuple(map(F, p)) for p in A]
    B = [tuple(map(F, p)) for p in B]
    pts, runs = set(), []
    for a0, a1 in zip(A, A[1:]):
        for b0, b1 in zip(B, B[1:]):
            if a0 == a1 or b0 == b1:
                continue
            d1, d2, w = _sub(a1, a0), _sub(b1, b0), _sub(b0, a0)
            den = _cross(d1, d2)
            if den != 0:
                s, t = _cross(w, d2) / den, _cross(w, d1) / den
                if 0 <= s <= 1 and 0 <= t <= 1:
                    pts.add((a0[0] + s * d1[0], a0[1] + s * d1[1]))
            elif _cross(w, d1) == 0:
                ends = sorted(p for p in (a0, a1, b0, b1) if _on_segment(p, a0, a1) and _on_segment(p, b0, b1))
                if ends:
                    if ends[0] == ends[-1]:
                        pts.add(ends[0])
                    else:
                        runs.append((ends[0], ends[-1]))
    # connected components of overlapping runs
    comp = list(range(len(runs)))

    def root(u):
        while comp[u] != u:
            u = comp[u]
        return u
    for u, v in itertools.combinations(range(len(runs)), 2):
        (p0, p1), (q0, q1) = runs[u], runs[v]
        if any(_on_segment(x, *runs[v]) for x in (p0, p1)) or any(_on_segment(x, *runs[u]) for x in (q0, q1)):
            comp[root(u)] = root(v)
    n_runs = len({root(u) for u in range(len(runs))})
    loose = [p for p in pts if not any(_on_segment(p, *r) for r in runs)]
    return n_runs + len(loose)


def exact_crossings(pos):
    N = pos.shape[1]
    return sum(exact_pair_crossings(pos[:, i], pos[:, j]) for i in range(N) for j in range(i + 1, N))


# crossings -----------------------------------------------------------------

def test_crossing_examples():
    assert count_path_crossings(paths([[0, 0], [2, 2]], [[0, 2], [2, 0]])) == 1
    assert count_path_crossings(paths([[0, 0], [2, 0]], [[0, 1], [2, 1]])) == 0
    # crossing through a shared vertex of consecutive segments counts once
    assert count_path_crossings(paths([[0, 0], [1, 1], [2, 0]], [[1, 2], [1, 1], [1, 0]])) == 1
    # an overlap along a collinear stretch counts once
    assert count_path_crossings(paths([[0, 0], [3, 0], [3, 1]], [[1, 0], [2, 0], [2, -1]])) == 1
    # a robot that sits still on another's path
    assert count_path_crossings(paths([[1, 0], [1, 0]], [[0, 0], [2, 0]])) == 1
    assert count_path_crossings(paths([[0, 0], [1, 0]])) == 0


def test_crossings_match_exact_oracle():
    rng = np.random.default_rng(0)
    for _ in range(150):
        N, T = int(rng.integers(2, 4)), int(rng.integers(2, 7))
        pos = rng.integers(0, 5, size=(T, N, 2)).astype(float)
        assert count_path_crossings(pos) == exact_crossings(pos)
        assert count_path_crossings(pos, chunk=1) == count_path_crossings(pos)


def test_crossings_chunking_invariant_on_long_paths():
    rng = np.random.default_rng(1)
    pos = np.cumsum(rng.normal(size=(400, 3, 2)), axis=0)
    ref = count_path_crossings(pos, chunk=1000)
    for chunk in (1, 7, 64):
        assert count_path_crossings(pos, chunk=chunk) == ref


def test_crossings_3d():
    a = [[0, 0, 0], [2, 2, 0]]
    assert count_path_crossings(paths(a, [[0, 2, 0], [2, 0, 0]])) == 1
    assert count_path_crossings(paths(a, [[0, 2, 1], [2, 0, 1]])) == 0


def test_crossings_upto():
    pos = paths([[0, 0], [1, 0], [1, 2]], [[2, 1], [3, 1], [0, 1]])
    assert count_path_crossings(pos) == 1
    assert count_path_crossings(pos, upto=2) == 0


# convergence, length, safety -------------------------------------------------

def test_convergence_and_truncated_length():
    xs = np.array([0.0, 1.0, 1.9, 2.0, 3.0])
    pos = np.stack([np.column_stack([xs, np.zeros(5)])], axis=1)
    desired = np.full((5, 1, 2), [2.0, 0.0])
    rec = make_record(pos, desired=desired, rho=0.2, dt=0.5)
    assert convergence_index(rec) == 2 and convergence_time(rec) == 1.0
    assert trajectory_length(rec) == pytest.approx(1.9)
    assert trajectory_length(rec, truncate=False) == pytest.approx(3.0)
    assert convergence_index(rec, rho=0.05) == 3
    with pytest.raises(ValueError):
        convergence_index(rec, rho=0.0)


def test_convergence_uses_current_allocation():
    pos = np.array([[[0.0, 0.0], [5.0, 0.0]]] * 2)
    desired = np.array([[[5.0, 0.0], [0.0, 0.0]]] * 2)
    alloc = np.array([[0, 1], [1, 0]])
    rec = make_record(pos, allocation=alloc, desired=desired)
    assert convergence_index(rec) == 1
    assert allocation_changes(rec) == 1 and allocation_changes(rec, 1) == 0


def test_safety_margins():
    pos = paths([[0, 0], [0, 0]], [[3, 0], [1.5, 0]])
    obstacles = np.array([[[0.0, 5.0]], [[0.0, 5.0]]])
    rec = make_record(pos, obstacles=obstacles, radii=[2.0], r=1.0)
    rr, ro = safety_margins(rec)
    assert rr == pytest.approx(1.5) and ro == pytest.approx(2.0)


def test_record_validation():
    with pytest.raises(ValueError):
        make_record(np.zeros((2, 1, 2)), termination="exploded")
    with pytest.raises(ValueError):
        make_record(np.full((2, 1, 2), np.nan))


def test_report_csv_round_trip():
    pos = paths([[0, 0], [1, 1], [2, 2]], [[0, 2], [1, 1.5], [2, 0]])
    rec = make_record(pos, termination="converged", controller="FOTE", seed=5)
    rep = compute_metrics(rec)
    assert rep.success and rep.crossings == 1 and rep.final_is_permutation
    row = dict(zip(CSV_COLUMNS, rep.csv_row()))
    back = MetricsReport.from_csv_row(row)
    assert back.csv_row() == rep.csv_row()
    assert '"controller": "FOTE"' in rep.to_json()
