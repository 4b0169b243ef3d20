"""Evaluation of simulation records: crossings, path length, convergence and safety."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

SAFETY_TOL = 1e-3
DEDUP_RADIUS = 1e-6
TERMINATIONS = ("converged", "timeout", "safety-breach", "solver-failure")


@dataclass
class SimulationRecord:
    """Time series of one run; sample ``t`` holds positions and the allocation decided there."""

    dt: float
    positions: np.ndarray       # T x N x n
    allocation: np.ndarray      # T x N, point index per robot
    desired: np.ndarray         # T x N x n
    obstacles: np.ndarray       # T x M x n
    obstacle_radii: np.ndarray  # M
    r: float = 1.0
    rho: float = 0.2
    controller: str = "CATE"
    seed: int = 0
    termination: str = "timeout"
    headings: np.ndarray | None = None  # T x N in unicycle mode
    fallbacks: int = 0
    inputs: np.ndarray | None = None  # commanded inputs per integrated step (in memory only)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        T = self.positions.shape[0]
        self.allocation = np.asarray(self.allocation, dtype=np.int64).reshape(T, -1)
        self.desired = np.asarray(self.desired, dtype=float)
        self.obstacles = np.asarray(self.obstacles, dtype=float).reshape(T, -1, self.positions.shape[2])
        self.obstacle_radii = np.asarray(self.obstacle_radii, dtype=float).reshape(-1)
        if self.desired.shape != self.positions.shape or self.allocation.shape != self.positions.shape[:2]:
            raise ValueError("record series must have equal lengths and robot counts")
        if self.obstacles.shape[1] != self.obstacle_radii.size:
            raise ValueError("one radius per obstacle required")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        if self.termination not in TERMINATIONS:
            raise ValueError(f"unknown termination {self.termination!r}")

    @property
    def T(self) -> int:
        return self.positions.shape[0]

    @property
    def N(self) -> int:
        return self.positions.shape[1]

    @property
    def n(self) -> int:
        return self.positions.shape[2]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.T) * self.dt


# ---------------------------------------------------------------------------
# path crossings


def _clean_polyline(p: np.ndarray) -> np.ndarray:
    keep = np.ones(len(p), bool)
    keep[1:] = np.any(p[1:] != p[:-1], axis=1)
    return p[keep]


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _segment_hits_2d(P0, P1, Q0, Q1):
    """All intersections between segments ``P`` (a) and ``Q`` (b).

    Returns (point hits as (ia, ib, x, y) rows, collinear runs as (ia, ib, start, end)).
    """
    d1 = (P1 - P0)[:, None, :]
    d2 = (Q1 - Q0)[None, :, :]
    w = Q0[None, :, :] - P0[:, None, :]
    denom = _cross2(d1, d2)
    len1 = np.linalg.norm(d1, axis=2)
    len2 = np.linalg.norm(d2, axis=2)
    parallel = np.abs(denom) <= 1e-12 * len1 * len2
    eps = 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        s = _cross2(w, d2) / denom
        t = _cross2(w, d1) / denom
    hit = ~parallel & (s >= -eps) & (s <= 1 + eps) & (t >= -eps) & (t <= 1 + eps)
    ia, ib = np.nonzero(hit)
    pts = P0[ia] + np.clip(s[ia, ib], 0.0, 1.0)[:, None] * (P1[ia] - P0[ia])
    points = [(int(a), int(b), float(x), float(y)) for a, b, (x, y) in zip(ia, ib, pts)]

    runs = []
    wn = np.linalg.norm(w, axis=2)
    collinear = parallel & (np.abs(_cross2(w, d1)) <= 1e-12 * len1 * np.maximum(wn, len2))
    for a, b in zip(*np.nonzero(collinear)):
        base, direction = P0[a], P1[a] - P0[a]
        L2 = direction @ direction
        t0 = (Q0[b] - base) @ direction / L2
        t1 = (Q1[b] - base) @ direction / L2
        lo, hi = max(0.0, min(t0, t1)), min(1.0, max(t0, t1))
        if hi < lo - eps:
            continue
        start, end = base + lo * direction, base + max(hi, lo) * direction
        if np.linalg.norm(end - start) <= DEDUP_RADIUS:
            points.append((int(a), int(b), float(start[0]), float(start[1])))
        else:
            runs.append((int(a), int(b), start, end))
    return points, runs


def _segment_hits_3d(P0, P1, Q0, Q1, tol):
    # closest points between segments; hit when they come within tol
    d1 = (P1 - P0)[:, None, :]
    d2 = (Q1 - Q0)[None, :, :]
    r = P0[:, None, :] - Q0[None, :, :]
    a = np.sum(d1 * d1, axis=2)
    e = np.sum(d2 * d2, axis=2)
    f = np.sum(d2 * r, axis=2)
    c = np.sum(d1 * r, axis=2)
    b = np.sum(d1 * d2, axis=2)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-18 * a * e, np.clip((b * f - c * e) / denom, 0, 1), 0.0)
        t = (b * s + f) / e
        t_c = np.clip(t, 0, 1)
        s = np.where((t < 0) | (t > 1), np.clip((b * t_c - c) / a, 0, 1), s)
    cp = P0[:, None, :] + s[..., None] * d1
    cq = Q0[None, :, :] + t_c[..., None] * d2
    dist = np.linalg.norm(cp - cq, axis=2)
    ia, ib = np.nonzero(dist <= tol)
    mids = 0.5 * (cp[ia, ib] + cq[ia, ib])
    return [(int(x), int(y), *map(float, m)) for x, y, m in zip(ia, ib, mids)], []


def _point_segment_distance(p, a, b) -> float:
    d = b - a
    L2 = d @ d
    t = 0.0 if L2 == 0 else min(1.0, max(0.0, (p - a) @ d / L2))
    return float(np.linalg.norm(p - (a + t * d)))


def _count_pair(A: np.ndarray, B: np.ndarray, chunk: int, tol3d: float) -> int:
    if len(A) < 2 or len(B) < 2:
        if len(A) < 2 and len(B) < 2:
            return int(np.linalg.norm(A[0] - B[0]) <= DEDUP_RADIUS)
        p, line = (A[0], B) if len(A) < 2 else (B[0], A)
        # a stationary robot sitting on another robot's path
        dmin = min(_point_segment_distance(p, line[k], line[k + 1]) for k in range(len(line) - 1))
        return int(dmin <= DEDUP_RADIUS)
    n = A.shape[1]
    points, runs = [], []
    na, nb = len(A) - 1, len(B) - 1
    starts_a = range(0, na, chunk)
    starts_b = range(0, nb, chunk)
    box_a = np.array([[A[s:s + chunk + 1].min(0), A[s:s + chunk + 1].max(0)] for s in starts_a])
    box_b = np.array([[B[s:s + chunk + 1].min(0), B[s:s + chunk + 1].max(0)] for s in starts_b])
    pad = tol3d if n == 3 else 1e-9
    overlap = np.all((box_a[:, None, 0] <= box_b[None, :, 1] + pad)
                     & (box_b[None, :, 0] <= box_a[:, None, 1] + pad), axis=2)
    for ca, cb in zip(*np.nonzero(overlap)):
        sa, sb = ca * chunk, cb * chunk
        ea, eb = min(sa + chunk, na), min(sb + chunk, nb)
        P0, P1 = A[sa:ea], A[sa + 1:ea + 1]
        Q0, Q1 = B[sb:eb], B[sb + 1:eb + 1]
        if n == 2:
            pts, rns = _segment_hits_2d(P0, P1, Q0, Q1)
        else:
            pts, rns = _segment_hits_3d(P0, P1, Q0, Q1, tol3d)
        points += [(a + sa, b + sb, *xy) for a, b, *xy in pts]
        runs += [(a + sa, b + sb, s0, s1) for a, b, s0, s1 in rns]
    return _dedup_count(points, runs)


def _dedup_count(points, runs) -> int:
    # merge collinear pieces that touch or overlap into maximal runs
    parent = list(range(len(runs)))

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    for u in range(len(runs)):
        for v in range(u + 1, len(runs)):
            a0, a1 = runs[u][2], runs[u][3]
            b0, b1 = runs[v][2], runs[v][3]
            gap = min(_point_segment_distance(a0, b0, b1), _point_segment_distance(a1, b0, b1),
                      _point_segment_distance(b0, a0, a1), _point_segment_distance(b1, a0, a1))
            if gap <= DEDUP_RADIUS:
                parent[find(u)] = find(v)
    n_runs = len({find(u) for u in range(len(runs))})

    counted: list[np.ndarray] = []
    for hit in sorted(points, key=lambda h: (h[0], h[1])):
        p = np.array(hit[2:])
        if any(_point_segment_distance(p, s0, s1) <= DEDUP_RADIUS for _, _, s0, s1 in runs):
            continue
        if any(np.linalg.norm(p - q) <= DEDUP_RADIUS for q in counted):
            continue
        counted.append(p)
    return n_runs + len(counted)


def count_path_crossings(record_or_positions, upto: int | None = None, chunk: int = 64,
                         tol3d: float = 1e-6) -> int:
    """Number of points shared by the paths of two different robots, over all pairs.

    Accepts a :class:`SimulationRecord` or a ``T x N x n`` position array.
    ``upto`` truncates the paths after that many samples.
    """
    pos = record_or_positions.positions if isinstance(record_or_positions, SimulationRecord) \
        else np.asarray(record_or_positions, dtype=float)
    if upto is not None:
        pos = pos[:max(int(upto), 1)]
    N = pos.shape[1]
    lines = [_clean_polyline(pos[:, i]) for i in range(N)]
    total = 0
    for i in range(N):
        for j in range(i + 1, N):
            total += _count_pair(lines[i], lines[j], chunk, tol3d)
    return total


# ---------------------------------------------------------------------------
# other metrics


def convergence_index(record: SimulationRecord, rho: float | None = None) -> int | None:
    rho = record.rho if rho is None else rho
    if not rho > 0:
        raise ValueError("rho must be positive")
    T, N = record.T, record.N
    goals = record.desired[np.arange(T)[:, None], record.allocation]
    err = np.linalg.norm(record.positions - goals, axis=2)
    ok = np.all(err <= rho, axis=1)
    idx = np.flatnonzero(ok)
    return int(idx[0]) if idx.size else None


def convergence_time(record: SimulationRecord, rho: float | None = None) -> float | None:
    """First time all robots are within ``rho`` of their currently allocated points."""
    k = convergence_index(record, rho)
    return None if k is None else k * record.dt


def trajectory_length(record: SimulationRecord, truncate: bool = True) -> float:
    """Summed path length of all robots, up to the convergence time when there is one."""
    k = convergence_index(record) if truncate else None
    end = record.T if k is None else k + 1
    steps = np.diff(record.positions[:end], axis=0)
    return float(np.sum(np.linalg.norm(steps, axis=2)))


def safety_margins(record: SimulationRecord) -> tuple[float, float]:
    """(minimum robot-robot distance, minimum obstacle clearance beyond ``r + radius``)."""
    pos = record.positions
    N = record.N
    rr = math.inf
    if N > 1:
        iu, ju = np.triu_indices(N, 1)
        rr = float(np.min(np.linalg.norm(pos[:, iu] - pos[:, ju], axis=2)))
    ro = math.inf
    if record.obstacle_radii.size:
        d = np.linalg.norm(pos[:, :, None, :] - record.obstacles[:, None, :, :], axis=3)
        ro = float(np.min(d - (record.r + record.obstacle_radii)[None, None, :]))
    return rr, ro


def allocation_changes(record: SimulationRecord, start: int = 0) -> int:
    a = record.allocation[start:]
    return int(np.sum(np.any(a[1:] != a[:-1], axis=1))) if len(a) > 1 else 0


CSV_COLUMNS = ("controller", "seed", "N", "M", "termination", "success", "convergence_time",
               "crossings", "crossings_to_tr", "trajectory_length", "min_robot_robot",
               "min_robot_obstacle", "allocation_changes_after_tr", "final_is_permutation",
               "fallbacks", "steps")


@dataclass
class MetricsReport:
    controller: str
    seed: int
    N: int
    M: int
    termination: str
    success: bool
    convergence_time: float | None
    crossings: int
    crossings_to_tr: int
    trajectory_length: float
    min_robot_robot: float
    min_robot_obstacle: float
    allocation_changes_after_tr: int
    final_is_permutation: bool
    fallbacks: int
    steps: int

    def __post_init__(self):
        if self.success and self.convergence_time is None:
            raise ValueError("a successful run has a convergence time")

    def csv_row(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in CSV_COLUMNS]

    def to_json(self) -> str:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = "inf" if v > 0 else "-inf"
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_csv_row(cls, row: dict) -> "MetricsReport":
        def num(v, kind):
            if v in ("", "None"):
                return None
            return kind(float(v)) if kind is int else kind(v)
        return cls(row["controller"], int(row["seed"]), int(row["N"]), int(row["M"]), row["termination"],
                   row["success"] == "1", num(row["convergence_time"], float), int(row["crossings"]),
                   int(row["crossings_to_tr"]), float(row["trajectory_length"]),
                   float(row["min_robot_robot"]), float(row["min_robot_obstacle"]),
                   int(row["allocation_changes_after_tr"]), row["final_is_permutation"] == "1",
                   int(row["fallbacks"]), int(row["steps"]))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return "%.6g" % v
    return str(v)


def compute_metrics(record: SimulationRecord) -> MetricsReport:
    k = convergence_index(record)
    success = record.termination == "converged" and k is not None
    rr, ro = safety_margins(record)
    final = record.allocation[-1]
    return MetricsReport(
        controller=record.controller,
        seed=int(record.seed),
        N=record.N,
        M=int(record.obstacle_radii.size),
        termination=record.termination,
        success=success,
        convergence_time=None if k is None else k * record.dt,
        crossings=count_path_crossings(record),
        crossings_to_tr=count_path_crossings(record, upto=None if k is None else k + 1),
        trajectory_length=trajectory_length(record),
        min_robot_robot=rr,
        min_robot_obstacle=ro,
        allocation_changes_after_tr=allocation_changes(record, k) if k is not None else 0,
        final_is_permutation=bool(np.all(np.bincount(final, minlength=record.N) == 1)),
        fallbacks=int(record.fallbacks),
        steps=record.T,
    )
