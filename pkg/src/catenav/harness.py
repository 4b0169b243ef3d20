"""Scenario generation, the simulation loop, batch experiments and record files."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .barriers import SingularGradientError, WorldSnapshot
from .baselines import assignment_for, fixed_step
from .cate import WarmStart, allocation_sweep
from .dynamics import (EstimatorState, InputLimitError, estimator_step, head_point,
                       integrate_robot, integrate_unicycle, propagate_formation, unicycle_transform)
from .geometry import (Allocation, ConstantVelocity, DesiredFormation, Obstacle, Params,
                       ScenarioError, ScenarioSpec, validate_scenario)
from .metrics import SAFETY_TOL, MetricsReport, SimulationRecord, compute_metrics

AREA = ((-5.0, 35.0), (0.0, 25.0))
EXCLUSION = ((10.0, 25.0), (7.0, 18.0))
OBSTACLE_RADIUS = (1.7, 4.0)
MAX_REJECTIONS = 10_000

log = logging.getLogger(__name__)


class GenerationError(RuntimeError):
    """Random placement failed too many times in a row."""


# ---------------------------------------------------------------------------
# seeds and formation patterns


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_seed(base: int, *keys: int) -> int:
    s = splitmix64(int(base) & 0xFFFFFFFFFFFFFFFF)
    for k in keys:
        s = splitmix64(s ^ (int(k) & 0xFFFFFFFFFFFFFFFF))
    return s


def formation_pattern(name: str, N: int, spacing: float, center=(17.5, 12.5)) -> np.ndarray:
    """Point sets centered on ``center``: ``arrow`` (a chevron), ``column`` (vertical), ``platoon``."""
    c = np.asarray(center, dtype=float)
    if name == "column":
        pts = np.column_stack([np.zeros(N), (np.arange(N) - (N - 1) / 2) * spacing])
    elif name == "platoon":
        pts = np.column_stack([(np.arange(N) - (N - 1) / 2) * spacing, np.zeros(N)])
    elif name == "arrow":
        # apex first, then alternating upper and lower arms trailing back at 45 degrees
        pts = [np.zeros(2)]
        for j in range(1, N):
            step = (j + 1) // 2
            sign = 1.0 if j % 2 else -1.0
            pts.append(step * spacing * np.array([-math.sqrt(0.5), sign * math.sqrt(0.5)]))
        pts = np.array(pts)
        pts -= pts.mean(axis=0)
    else:
        raise ValueError(f"unknown formation pattern {name!r}")
    if c.size == 3:
        pts = np.column_stack([pts, np.zeros(N)])
    return pts + c


def _rect_distance(p, rect) -> float:
    (x0, x1), (y0, y1) = rect
    dx = max(x0 - p[0], 0.0, p[0] - x1)
    dy = max(y0 - p[1], 0.0, p[1] - y1)
    return math.hypot(dx, dy)


def generate_random_scenario(N: int, M: int, seed: int, params: Params | None = None,
                             pattern: str = "arrow", controller: str = "CATE",
                             margin: float = 0.3) -> ScenarioSpec:
    """Random robots and disk obstacles in the arena, formation in the central free zone."""
    if N < 1 or M < 0:
        raise ValueError("need N >= 1 and M >= 0")
    params = params or Params()
    r = params.r
    rng = np.random.default_rng(seed)
    lo = np.array([AREA[0][0], AREA[1][0]])
    hi = np.array([AREA[0][1], AREA[1][1]])

    def sample(accept):
        for _ in range(MAX_REJECTIONS):
            cand = accept()
            if cand is not None:
                return cand
        raise GenerationError("placement failed after 10000 consecutive rejections")

    obstacles: list[tuple[np.ndarray, float]] = []
    for _ in range(M):
        def try_obstacle():
            c = rng.uniform(lo, hi)
            rad = rng.uniform(*OBSTACLE_RADIUS)
            if _rect_distance(c, EXCLUSION) <= rad + r:
                return None
            for oc, orad in obstacles:
                if np.linalg.norm(c - oc) <= rad + orad + 2 * r + 0.5:
                    return None
            return c, rad
        obstacles.append(sample(try_obstacle))

    robots: list[np.ndarray] = []
    for _ in range(N):
        def try_robot():
            x = rng.uniform(lo, hi)
            if _rect_distance(x, EXCLUSION) <= r:
                return None
            if any(np.linalg.norm(x - y) <= r + 0.2 for y in robots):
                return None
            if any(np.linalg.norm(x - oc) <= r + orad + margin for oc, orad in obstacles):
                return None
            return x
        robots.append(sample(try_robot))

    spec = ScenarioSpec(
        robots=np.array(robots),
        formation=DesiredFormation(formation_pattern(pattern, N, 1.5 * r), ConstantVelocity((0.0, 0.0))),
        obstacles=tuple(Obstacle(tuple(c.tolist()), float(rad)) for c, rad in obstacles),
        params=params, seed=int(seed), controller=controller)
    report = validate_scenario(spec)
    if not report.ok:
        raise GenerationError(f"generated scenario violates assumptions: {report}")
    return spec


# ---------------------------------------------------------------------------
# named scenarios


def _column_2obs() -> ScenarioSpec:
    robots = [(x, y) for y in (0.0, 4.0, 8.0, 12.0, 16.0) for x in (-8.0, -5.0)]
    points = [(14.0, 1.5 * k + 3.25) for k in range(10)]
    return ScenarioSpec(np.array(robots), DesiredFormation(np.array(points)),
                        (Obstacle((5.0, 0.0), 4.5), Obstacle((3.0, 17.0), 3.0)))


def _narrow_gap_8() -> ScenarioSpec:
    # the gap between the disks is 12 - 11 = 1 m wide, so the safety radius is reduced
    params = Params(r=0.4)
    robots = [(-2.0, 8.3), (-3.2, 10.4), (-3.0, 5.6), (-4.6, 7.9),
              (-5.6, 10.9), (-5.9, 5.2), (-7.2, 8.6), (-8.3, 11.0)]
    points = [(7.5 + k, 8.0) for k in range(8)]
    return ScenarioSpec(np.array(robots), DesiredFormation(np.array(points)),
                        (Obstacle((6.0, 2.0), 5.5), Obstacle((6.0, 14.0), 5.5)), params)


def _moving_obs_11() -> ScenarioSpec:
    base = generate_random_scenario(11, 7, 7, Params(), pattern="arrow")
    center = np.array([17.5, 12.5])
    moving = []
    for ob in base.obstacles:
        radial = np.asarray(ob.center) - center
        tangent = np.array([-radial[1], radial[0]]) / np.linalg.norm(radial)
        moving.append(Obstacle(ob.center, ob.radius, tuple((0.3 * tangent).tolist())))
    return base.replace(obstacles=tuple(moving))


def _amr_gap_2() -> ScenarioSpec:
    params = Params(u_max=0.2, R=1.5, r=1.0, b=1e4, c=1e2, varpi=1000.0, unicycle=True,
                    head_offset=0.5, timeout=120.0, obstacle_world_frame=True)
    return ScenarioSpec(np.array([(-1.2, 2.0), (-1.2, -2.0)]),
                        DesiredFormation(np.array([(5.0, 0.0), (8.0, 0.0)]), ConstantVelocity((0.1, 0.0))),
                        (Obstacle((2.0, -3.0), 2.25), Obstacle((2.0, 3.0), 2.25)), params,
                        headings=np.array([-math.pi / 2, math.pi / 2]))


def _platoon_3d_8() -> ScenarioSpec:
    robots = [(-4.0, y, z) for y in (-3.0, 3.0) for z in (0.0, 2.0)] + \
             [(-7.0, y, z) for y in (-3.0, 3.0) for z in (0.0, 2.0)]
    points = [(10.0 + 1.5 * k, 1.0, 1.5) for k in range(8)]
    return ScenarioSpec(np.array(robots), DesiredFormation(np.array(points)),
                        (Obstacle((4.0, -1.0, 1.0), 2.0), Obstacle((4.0, 4.5, 2.5), 2.0)))


NAMED_SCENARIOS = {
    "column-2obs": _column_2obs,
    "narrow-gap-8": _narrow_gap_8,
    "moving-obs-11": _moving_obs_11,
    "amr-gap-2": _amr_gap_2,
    "platoon-3d-8": _platoon_3d_8,
}


def named_scenario(name: str) -> ScenarioSpec:
    try:
        return NAMED_SCENARIOS[name]()
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {', '.join(NAMED_SCENARIOS)}") from None


# ---------------------------------------------------------------------------
# simulation loop


def run_simulation(spec: ScenarioSpec, schedule: str | None = None) -> SimulationRecord:
    """Simulate until every robot settles at its allocated point, a timeout, or a failure."""
    p = spec.params if schedule is None else spec.params.replace(schedule=schedule)
    N, n, dt = spec.N, spec.n, p.dt
    unicycle = p.unicycle
    body = spec.robots.copy()
    heading = np.zeros(N) if spec.headings is None else spec.headings.astype(float).copy()
    pos = np.array([head_point(body[i], heading[i], p.head_offset) for i in range(N)]) if unicycle \
        else body.copy()
    desired = spec.formation.points.copy()
    velocity = spec.formation.velocity
    radii = np.array([ob.radius for ob in spec.obstacles]).reshape(-1)
    obs_vel = np.array([ob.velocity for ob in spec.obstacles], dtype=float).reshape(-1, n)
    est = EstimatorState.zeros(N, n, leaders=p.leaders, gain=p.estimator_gain, u_max=p.u_max)

    if spec.controller == "CATE":
        alloc = Allocation.identity(N)
    else:
        alloc = assignment_for(spec.controller, pos, desired)
    warm = WarmStart()
    steps = int(round(p.timeout / dt))
    reassign_every = None if p.reassign_period is None else max(1, int(round(p.reassign_period / dt)))

    rec_pos, rec_alloc, rec_des, rec_obs, rec_head = [], [], [], [], []
    rec_u = []
    termination = "timeout"
    fallbacks = 0
    settle_start = None
    settle_steps = int(round(p.settle_time / dt))

    for s in range(steps + 1):
        t = s * dt
        centers = np.array([ob.position(t) for ob in spec.obstacles]).reshape(-1, n)
        est = estimator_step(est, velocity(t), dt)
        snap = WorldSnapshot(pos.copy(), est.estimates, desired.copy(), centers, radii, obs_vel, t)
        try:
            if spec.controller == "CATE":
                alloc, decisions = allocation_sweep(snap, alloc, p, warm)
            else:
                if reassign_every and s > 0 and s % reassign_every == 0:
                    alloc = assignment_for(spec.controller, pos, desired)
                decisions = [fixed_step(i, alloc[i], snap, p) for i in range(N)]
        except SingularGradientError:
            termination = "solver-failure"
            _append(rec_pos, rec_alloc, rec_des, rec_obs, rec_head, pos, alloc, desired, centers, heading)
            break
        fallbacks += sum(d.fallback_used for d in decisions)
        _append(rec_pos, rec_alloc, rec_des, rec_obs, rec_head, pos, alloc, desired, centers, heading)

        goals = desired[alloc.assign]
        settled = np.all(np.linalg.norm(pos - goals, axis=1) <= p.rho)
        if settled and (settle_start is None or not np.array_equal(rec_alloc[settle_start], alloc.assign)):
            settle_start = s
        elif not settled:
            settle_start = None
        if settle_start is not None and s - settle_start >= settle_steps:
            termination = "converged"
            break
        if s == steps:
            break

        u = np.array([d.u_star for d in decisions])
        rec_u.append(u)
        try:
            if unicycle:
                for i in range(N):
                    if np.linalg.norm(u[i]) > p.u_max + 1e-9:
                        raise InputLimitError("head-point input above the limit")
                    cmd = unicycle_transform(u[i], heading[i], p.head_offset)
                    climb = cmd[2] if n == 3 else None
                    body[i], heading[i] = integrate_unicycle(body[i], heading[i], cmd[0], cmd[1], climb, dt)
                pos = np.array([head_point(body[i], heading[i], p.head_offset) for i in range(N)])
            else:
                pos = np.array([integrate_robot(pos[i], u[i], dt, p.u_max) for i in range(N)])
        except InputLimitError:
            termination = "solver-failure"
            break
        desired = propagate_formation(desired, velocity, t, dt)

        if _breached(pos, np.array([ob.position(t + dt) for ob in spec.obstacles]).reshape(-1, n), radii, p.r):
            centers = np.array([ob.position(t + dt) for ob in spec.obstacles]).reshape(-1, n)
            _append(rec_pos, rec_alloc, rec_des, rec_obs, rec_head, pos, alloc, desired, centers, heading)
            termination = "safety-breach"
            break

    return SimulationRecord(
        dt=dt, positions=np.array(rec_pos), allocation=np.array(rec_alloc), desired=np.array(rec_des),
        obstacles=np.array(rec_obs).reshape(len(rec_pos), len(radii), n), obstacle_radii=radii,
        r=p.r, rho=p.rho, controller=spec.controller, seed=spec.seed, termination=termination,
        headings=np.array(rec_head) if unicycle else None, fallbacks=fallbacks,
        inputs=np.array(rec_u).reshape(len(rec_u), N, n))


def _append(rp, ra, rd, ro, rh, pos, alloc, desired, centers, heading):
    rp.append(pos.copy())
    ra.append(alloc.assign.copy())
    rd.append(desired.copy())
    ro.append(centers.copy())
    rh.append(heading.copy())


def _breached(pos, centers, radii, r) -> bool:
    N = len(pos)
    if N > 1:
        iu, ju = np.triu_indices(N, 1)
        if np.min(np.linalg.norm(pos[iu] - pos[ju], axis=1)) < r - SAFETY_TOL:
            return True
    if len(radii):
        d = np.linalg.norm(pos[:, None, :] - centers[None], axis=2) - (r + radii)[None]
        if np.min(d) < -SAFETY_TOL:
            return True
    return False


# ---------------------------------------------------------------------------
# batch experiments

SUMMARY_COLUMNS = ("controller", "N", "M", "trials", "success_rate", "tr_mean", "tr_sd",
                   "crossings_mean", "crossings_sd", "length_mean", "length_sd")


@dataclass(frozen=True)
class BatchSpec:
    cells: tuple[tuple[int, int], ...] = tuple((N, M) for N in (5, 7, 9, 11) for M in (4, 5, 6, 7))
    trials: int = 10
    base_seed: int = 2024
    controllers: tuple[str, ...] = ("CATE", "FOTE")
    timeout: float = 60.0
    out_dir: str | None = None
    pattern: str = "arrow"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        object.__setattr__(self, "cells", tuple((int(a), int(b)) for a, b in self.cells))
        object.__setattr__(self, "controllers", tuple(self.controllers))

    @classmethod
    def from_dict(cls, d: dict) -> "BatchSpec":
        allowed = {"cells", "trials", "base_seed", "controllers", "timeout", "out_dir", "pattern", "params"}
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ScenarioError(f"unknown field(s) in batch spec: {', '.join(unknown)}")
        d = dict(d)
        if "cells" in d:
            d["cells"] = tuple(tuple(c) for c in d["cells"])
        return cls(**d)

    def jobs(self):
        params = Params(**{**self.params, "timeout": self.timeout})
        for N, M in self.cells:
            for trial in range(self.trials):
                seed = derive_seed(self.base_seed, N, M, trial)
                for ctrl in self.controllers:
                    yield (N, M, trial, seed, ctrl, params, self.pattern)


def _run_job(job) -> MetricsReport:
    N, M, trial, seed, ctrl, params, pattern = job
    spec = generate_random_scenario(N, M, seed, params, pattern=pattern, controller=ctrl)
    return compute_metrics(run_simulation(spec))


def _workers() -> int:
    env = os.environ.get("CATE_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), 64))
        except ValueError:
            raise ScenarioError(f"CATE_THREADS must be an integer, got {env!r}") from None
    return cap


def run_batch(batch: BatchSpec, workers: int | None = None, progress=None):
    """Run every (cell, trial, controller); returns ``(per-run reports, summary rows)``.

    Per-run failures are recorded, never fatal.  With ``out_dir`` set, writes
    ``runs.csv`` and ``summary.csv`` there.
    """
    jobs = list(batch.jobs())
    workers = workers or _workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = []
            for k, rep in enumerate(pool.map(_safe_job, jobs, chunksize=1)):
                reports.append(rep)
                if progress:
                    progress(k + 1, len(jobs), rep)
    else:
        reports = []
        for k, job in enumerate(jobs):
            reports.append(_safe_job(job))
            if progress:
                progress(k + 1, len(jobs), reports[-1])
    summary = summarize(reports, batch.trials)
    if batch.out_dir:
        out = Path(batch.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "runs.csv").write_text(runs_csv(reports))
        (out / "summary.csv").write_text(summary_csv(summary))
    return reports, summary


def _safe_job(job) -> MetricsReport:
    try:
        return _run_job(job)
    except Exception as exc:  # a single failed run must not abort the batch
        N, M, trial, seed, ctrl, params, pattern = job
        log.warning("run %s N=%d M=%d seed=%d failed: %r", ctrl, N, M, seed, exc)
        return MetricsReport(ctrl, seed, N, M, "solver-failure", False, None, 0, 0, 0.0,
                             math.nan, math.nan, 0, False, 0, 0)


def summarize(reports, trials: int | None = None) -> list[dict]:
    groups: dict = {}
    for rep in reports:
        groups.setdefault((rep.controller, rep.N, rep.M), []).append(rep)
    rows = []
    for (ctrl, N, M), reps in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][2], kv[0][0])):
        ok = [r for r in reps if r.success]
        tr = [r.convergence_time for r in ok]
        cr = [r.crossings_to_tr for r in ok]
        ln = [r.trajectory_length for r in ok]
        rows.append({
            "controller": ctrl, "N": N, "M": M, "trials": len(reps),
            "success_rate": 100.0 * len(ok) / len(reps),
            "tr_mean": _mean(tr), "tr_sd": _sd(tr),
            "crossings_mean": _mean(cr), "crossings_sd": _sd(cr),
            "length_mean": _mean(ln), "length_sd": _sd(ln),
        })
    return rows


def _mean(v):
    return float(np.mean(v)) if v else None


def _sd(v):
    return float(np.std(v, ddof=1)) if len(v) > 1 else (0.0 if v else None)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.6g" % v
    return str(v)


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def runs_csv(reports) -> str:
    from .metrics import CSV_COLUMNS
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rep in reports:
        w.writerow(rep.csv_row())
    return buf.getvalue()


def read_runs_csv(text: str) -> list[MetricsReport]:
    return [MetricsReport.from_csv_row(row) for row in csv.DictReader(io.StringIO(text))]


# ---------------------------------------------------------------------------
# record files


def write_record_csv(record: SimulationRecord, path) -> None:
    Path(path).write_text(record_to_csv(record))


def record_to_csv(record: SimulationRecord) -> str:
    """CSV with a leading ``#`` metadata line followed by one row per sample."""
    N, n, M = record.N, record.n, record.obstacle_radii.size
    axes = "xyz"[:n]
    meta = {"dt": record.dt, "r": record.r, "rho": record.rho, "controller": record.controller,
            "seed": int(record.seed), "termination": record.termination,
            "obstacle_radii": record.obstacle_radii.tolist(), "fallbacks": int(record.fallbacks),
            "N": N, "M": M, "dimension": n}
    header = ["t"]
    header += [f"{a}{i}" for i in range(N) for a in axes]
    header += [f"k{i}" for i in range(N)]
    if record.headings is not None:
        header += [f"theta{i}" for i in range(N)]
    header += [f"d{a}{k}" for k in range(N) for a in axes]
    header += [f"o{a}{l}" for l in range(M) for a in axes]
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for s in range(record.T):
        row = ["%.6f" % (s * record.dt)]
        row += [repr(float(v)) for v in record.positions[s].reshape(-1)]
        row += [str(int(k)) for k in record.allocation[s]]
        if record.headings is not None:
            row += [repr(float(v)) for v in record.headings[s]]
        row += [repr(float(v)) for v in record.desired[s].reshape(-1)]
        row += [repr(float(v)) for v in record.obstacles[s].reshape(-1)]
        w.writerow(row)
    return buf.getvalue()


def read_record_csv(path) -> SimulationRecord:
    return record_from_csv(Path(path).read_text())


def record_from_csv(text: str) -> SimulationRecord:
    first, _, rest = text.partition("\n")
    if not first.startswith("# "):
        raise ValueError("record file lacks its metadata line")
    meta = json.loads(first[2:])
    rows = list(csv.reader(io.StringIO(rest)))
    header, data = rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    N, n, M = meta["N"], meta["dimension"], meta["M"]
    col = {h: j for j, h in enumerate(header)}
    axes = "xyz"[:n]
    T = data.shape[0]

    def block(names, shape):
        return data[:, [col[h] for h in names]].reshape(shape) if names else np.zeros(shape)

    positions = block([f"{a}{i}" for i in range(N) for a in axes], (T, N, n))
    alloc = block([f"k{i}" for i in range(N)], (T, N)).astype(np.int64)
    desired = block([f"d{a}{k}" for k in range(N) for a in axes], (T, N, n))
    obstacles = block([f"o{a}{l}" for l in range(M) for a in axes], (T, M, n))
    headings = block([f"theta{i}" for i in range(N)], (T, N)) if "theta0" in col else None
    return SimulationRecord(dt=meta["dt"], positions=positions, allocation=alloc, desired=desired,
                            obstacles=obstacles, obstacle_radii=np.array(meta["obstacle_radii"]),
                            r=meta["r"], rho=meta["rho"], controller=meta["controller"],
                            seed=meta["seed"], termination=meta["termination"], headings=headings,
                            fallbacks=meta.get("fallbacks", 0))


def write_run_outputs(spec: ScenarioSpec, record: SimulationRecord, out_dir) -> MetricsReport:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_record_csv(record, out / "record.csv")
    report = compute_metrics(record)
    (out / "metrics.json").write_text(report.to_json() + "\n")
    (out / "scenario.json").write_text(spec.to_json() + "\n")
    return report
