"""Domain types: robots, desired formation, obstacles, allocation and scenarios.

Robot and point indices are 0-based throughout the package.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

CONTROLLERS = ("CATE", "FOTE", "CAPT_ASSIGN", "GREEDY")
SCHEDULES = ("joint", "gauss-seidel", "parallel-snapshot")


class ScenarioError(ValueError):
    """Structurally malformed scenario (distinct from an assumption violation)."""


def as_point(coords, n: int | None = None) -> np.ndarray:
    p = np.asarray(coords, dtype=float).reshape(-1)
    if p.size not in (2, 3):
        raise ScenarioError(f"point must have 2 or 3 coordinates, got {p.size}")
    if n is not None and p.size != n:
        raise ScenarioError(f"expected a {n}-D point, got {p.size}-D")
    if not np.all(np.isfinite(p)):
        raise ScenarioError(f"non-finite coordinate in {p.tolist()}")
    return p


def as_points(rows, n: int | None = None) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2:
        raise ScenarioError(f"expected a list of points, got shape {arr.shape}")
    if arr.shape[1] not in (2, 3):
        raise ScenarioError(f"points must be 2-D or 3-D, got {arr.shape[1]}-D")
    if n is not None and arr.shape[1] != n:
        raise ScenarioError(f"expected {n}-D points, got {arr.shape[1]}-D")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError("non-finite coordinate in point list")
    return arr


# ---------------------------------------------------------------------------
# velocity profiles for the desired formation


@dataclass(frozen=True)
class ConstantVelocity:
    vector: tuple[float, ...]

    def __call__(self, t: float) -> np.ndarray:
        return np.asarray(self.vector, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": "constant", "vector": list(self.vector)}


@dataclass(frozen=True)
class SinusoidalVelocity:
    """``offset + amplitude * sin(omega * t + phase)`` per axis."""

    offset: tuple[float, ...]
    amplitude: tuple[float, ...]
    omega: float
    phase: float = 0.0

    def __call__(self, t: float) -> np.ndarray:
        return np.asarray(self.offset) + np.asarray(self.amplitude) * math.sin(self.omega * t + self.phase)

    def to_dict(self) -> dict:
        return {"kind": "sinusoidal", "offset": list(self.offset), "amplitude": list(self.amplitude),
                "omega": self.omega, "phase": self.phase}


@dataclass(frozen=True)
class PiecewiseConstantVelocity:
    """Velocity ``vectors[j]`` holds on ``[times[j], times[j+1])``; ``times[0]`` must be 0."""

    times: tuple[float, ...]
    vectors: tuple[tuple[float, ...], ...]

    def __call__(self, t: float) -> np.ndarray:
        j = int(np.searchsorted(np.asarray(self.times), t, side="right")) - 1
        return np.asarray(self.vectors[max(j, 0)], dtype=float)

    def to_dict(self) -> dict:
        return {"kind": "piecewise", "times": list(self.times), "vectors": [list(v) for v in self.vectors]}


_PROFILE_KEYS = {
    "constant": {"kind", "vector"},
    "sinusoidal": {"kind", "offset", "amplitude", "omega", "phase"},
    "piecewise": {"kind", "times", "vectors"},
}


def velocity_profile_from_dict(d: Mapping[str, Any], n: int):
    kind = d.get("kind")
    if kind not in _PROFILE_KEYS:
        raise ScenarioError(f"unknown velocity profile kind {kind!r}")
    _reject_unknown(d, _PROFILE_KEYS[kind], f"velocity profile ({kind})")
    if kind == "constant":
        return ConstantVelocity(tuple(as_point(d["vector"], n).tolist()))
    if kind == "sinusoidal":
        return SinusoidalVelocity(tuple(as_point(d["offset"], n).tolist()),
                                  tuple(as_point(d["amplitude"], n).tolist()),
                                  float(d["omega"]), float(d.get("phase", 0.0)))
    times = tuple(float(t) for t in d["times"])
    vectors = tuple(tuple(as_point(v, n).tolist()) for v in d["vectors"])
    if not times or times[0] != 0.0 or len(times) != len(vectors) or list(times) != sorted(times):
        raise ScenarioError("piecewise profile needs increasing times starting at 0, one vector each")
    return PiecewiseConstantVelocity(times, vectors)


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class Obstacle:
    """Disk (2-D) or ball (3-D) enclosing an obstacle, translating at constant velocity."""

    center: tuple[float, ...]
    radius: float
    velocity: tuple[float, ...] | None = None

    def __post_init__(self):
        c = as_point(self.center)
        object.__setattr__(self, "center", tuple(c.tolist()))
        v = np.zeros_like(c) if self.velocity is None else as_point(self.velocity, c.size)
        object.__setattr__(self, "velocity", tuple(v.tolist()))
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ScenarioError(f"obstacle radius must be positive, got {self.radius}")

    def position(self, t: float = 0.0) -> np.ndarray:
        return np.asarray(self.center) + t * np.asarray(self.velocity)

    @property
    def is_static(self) -> bool:
        return not any(self.velocity)


@dataclass(frozen=True)
class RobotState:
    id: int
    position: np.ndarray
    velocity_estimate: np.ndarray | None = None
    heading: float | None = None

    def __post_init__(self):
        p = as_point(self.position)
        object.__setattr__(self, "position", p)
        v = np.zeros_like(p) if self.velocity_estimate is None else as_point(self.velocity_estimate, p.size)
        object.__setattr__(self, "velocity_estimate", v)


@dataclass(frozen=True)
class DesiredFormation:
    points: np.ndarray
    velocity: Any = None

    def __post_init__(self):
        pts = as_points(self.points)
        object.__setattr__(self, "points", pts)
        if self.velocity is None:
            object.__setattr__(self, "velocity", ConstantVelocity((0.0,) * pts.shape[1]))

    @property
    def n(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class Params:
    """Scenario parameters.  Defaults follow the published simulation setup.

    ``obstacle_world_frame`` drops the velocity estimate from the obstacle rows,
    so they bound ``u - v_obstacle`` instead of ``u - v_hat - v_obstacle``.  The
    default form is only forward invariant when the formation velocity is zero.
    """

    u_max: float = 3.0
    R: float = 4.0
    r: float = 1.0
    b: float = 1e5
    c: float = 1e2
    varpi: float = 1000.0
    kappa: float = 1.0
    dt: float = 0.02
    timeout: float = 60.0
    rho: float = 0.2
    hysteresis: float = 1e-6
    schedule: str = "joint"
    unicycle: bool = False
    head_offset: float = 0.5
    estimator_gain: float = 5.0
    leaders: tuple[int, ...] = (0,)
    facets: int = 16
    qp_tol: float = 1e-8
    qp_max_iter: int = 200
    reassign_period: float | None = None
    prune_relaxed_rows: bool = False
    settle_time: float = 1.0
    obstacle_world_frame: bool = False

    def __post_init__(self):
        object.__setattr__(self, "leaders", tuple(int(i) for i in self.leaders))
        for name in ("u_max", "R", "r", "b", "c", "varpi", "kappa", "dt", "timeout", "rho",
                     "head_offset", "estimator_gain", "qp_tol"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ScenarioError(f"parameter {name} must be a positive finite number, got {v!r}")
        if self.hysteresis < 0 or self.settle_time < 0:
            raise ScenarioError("hysteresis and settle_time must be nonnegative")
        if self.schedule not in SCHEDULES:
            raise ScenarioError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.facets < 3:
            raise ScenarioError("need at least 3 input facets")

    def replace(self, **changes) -> "Params":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ScenarioSpec:
    robots: np.ndarray
    formation: DesiredFormation
    obstacles: tuple[Obstacle, ...] = ()
    params: Params = field(default_factory=Params)
    seed: int = 0
    controller: str = "CATE"
    headings: np.ndarray | None = None

    def __post_init__(self):
        robots = as_points(self.robots)
        if robots.shape[0] == 0:
            raise ScenarioError("scenario needs at least one robot")
        n = robots.shape[1]
        object.__setattr__(self, "robots", robots)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.formation.points.shape != robots.shape:
            raise ScenarioError(
                f"formation has {self.formation.points.shape} points, robots {robots.shape}")
        v0 = np.asarray(self.formation.velocity(0.0))
        if v0.shape != (n,):
            raise ScenarioError("formation velocity dimension differs from the scenario dimension")
        for ob in self.obstacles:
            if len(ob.center) != n:
                raise ScenarioError("obstacle dimension differs from the scenario dimension")
        if self.controller not in CONTROLLERS:
            raise ScenarioError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.headings is not None:
            h = np.asarray(self.headings, dtype=float).reshape(-1)
            if h.size != robots.shape[0] or not np.all(np.isfinite(h)):
                raise ScenarioError("one finite heading per robot required")
            object.__setattr__(self, "headings", h)
        if not 0 <= int(self.seed) < 2**64:
            raise ScenarioError("seed must be a 64-bit unsigned integer")
        for i in self.params.leaders:
            if not 0 <= i < robots.shape[0]:
                raise ScenarioError(f"leader index {i} out of range")

    @property
    def n(self) -> int:
        return self.robots.shape[1]

    @property
    def N(self) -> int:
        return self.robots.shape[0]

    @property
    def M(self) -> int:
        return len(self.obstacles)

    def replace(self, **changes) -> "ScenarioSpec":
        return dataclasses.replace(self, **changes)

    def with_params(self, **changes) -> "ScenarioSpec":
        return dataclasses.replace(self, params=self.params.replace(**changes))

    def obstacle_arrays(self, t: float = 0.0):
        """Centers at time ``t``, radii and velocities as arrays (M x n, M, M x n)."""
        n = self.n
        if not self.obstacles:
            return np.zeros((0, n)), np.zeros(0), np.zeros((0, n))
        centers = np.array([ob.position(t) for ob in self.obstacles])
        radii = np.array([ob.radius for ob in self.obstacles])
        vel = np.array([ob.velocity for ob in self.obstacles], dtype=float)
        return centers, radii, vel

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dimension": self.n,
            "robots": {
                "positions": self.robots.tolist(),
                "headings": None if self.headings is None else self.headings.tolist(),
            },
            "formation": {
                "points": self.formation.points.tolist(),
                "velocity": self.formation.velocity.to_dict(),
            },
            "obstacles": [
                {"center": list(ob.center), "radius": ob.radius, "velocity": list(ob.velocity)}
                for ob in self.obstacles
            ],
            "params": _params_to_dict(self.params),
            "seed": int(self.seed),
            "controller": self.controller,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScenarioSpec":
        if not isinstance(d, Mapping):
            raise ScenarioError("scenario document must be a JSON object")
        _reject_unknown(d, {"dimension", "robots", "formation", "obstacles", "params", "seed", "controller"},
                        "scenario")
        for key in ("dimension", "robots", "formation"):
            if key not in d:
                raise ScenarioError(f"scenario is missing {key!r}")
        n = d["dimension"]
        if n not in (2, 3):
            raise ScenarioError(f"dimension must be 2 or 3, got {n!r}")
        robots = d["robots"]
        _reject_unknown(robots, {"positions", "headings"}, "robots")
        formation = d["formation"]
        _reject_unknown(formation, {"points", "velocity"}, "formation")
        velocity = None
        if formation.get("velocity") is not None:
            velocity = velocity_profile_from_dict(formation["velocity"], n)
        obstacles = []
        for ob in d.get("obstacles", []) or []:
            _reject_unknown(ob, {"center", "radius", "velocity"}, "obstacle")
            obstacles.append(Obstacle(tuple(as_point(ob["center"], n).tolist()), float(ob["radius"]),
                                      None if ob.get("velocity") is None
                                      else tuple(as_point(ob["velocity"], n).tolist())))
        params = _params_from_dict(d.get("params", {}) or {})
        headings = robots.get("headings")
        return cls(
            robots=as_points(robots.get("positions", []) or np.zeros((0, n)), n),
            formation=DesiredFormation(as_points(formation["points"], n), velocity),
            obstacles=tuple(obstacles),
            params=params,
            seed=int(d.get("seed", 0)),
            controller=d.get("controller", "CATE"),
            headings=None if headings is None else np.asarray(headings, dtype=float),
        )

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(d)


def _reject_unknown(d: Mapping, allowed: set, where: str) -> None:
    if not isinstance(d, Mapping):
        raise ScenarioError(f"{where} must be a JSON object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ScenarioError(f"unknown field(s) in {where}: {', '.join(unknown)}")


_PARAM_FIELDS = {f.name for f in dataclasses.fields(Params)}


def _params_to_dict(p: Params) -> dict:
    d = dataclasses.asdict(p)
    d["leaders"] = list(p.leaders)
    return d


def _params_from_dict(d: Mapping[str, Any]) -> Params:
    _reject_unknown(d, _PARAM_FIELDS, "params")
    kwargs = dict(d)
    if "leaders" in kwargs:
        kwargs["leaders"] = tuple(kwargs["leaders"])
    try:
        return Params(**kwargs)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from exc


# ---------------------------------------------------------------------------
# allocation


class Allocation:
    """Allocation matrix with one-hot rows, stored as the point index of each row.

    ``assign[i] = k`` means desired point ``k`` is allocated to robot ``i``.
    Column sums need not be one; a permutation has all column sums equal to one.
    """

    __slots__ = ("_assign",)

    def __init__(self, assign: Sequence[int]):
        a = np.array(assign, dtype=np.int64).reshape(-1)
        if a.size and (a.min() < 0 or a.max() >= a.size):
            raise ValueError(f"allocation entries must lie in 0..{a.size - 1}: {a.tolist()}")
        a.setflags(write=False)
        self._assign = a

    @classmethod
    def identity(cls, N: int) -> "Allocation":
        return cls(np.arange(N))

    @classmethod
    def from_matrix(cls, matrix) -> "Allocation":
        m = np.asarray(matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("allocation matrix must be square")
        if not np.all((m == 0) | (m == 1)) or not np.all(m.sum(axis=1) == 1):
            raise ValueError("every allocation row must be one-hot")
        return cls(np.argmax(m, axis=1))

    @property
    def assign(self) -> np.ndarray:
        return self._assign

    @property
    def N(self) -> int:
        return self._assign.size

    @property
    def matrix(self) -> np.ndarray:
        m = np.zeros((self.N, self.N), dtype=np.int64)
        m[np.arange(self.N), self._assign] = 1
        return m

    def column_sums(self) -> np.ndarray:
        return np.bincount(self._assign, minlength=self.N)

    def allocation_error(self) -> int:
        """Squared norm of the column-sum deviation from all-ones."""
        return int(np.sum((self.column_sums() - 1) ** 2))

    @property
    def is_permutation(self) -> bool:
        return bool(np.all(self.column_sums() == 1))

    def with_row(self, i: int, k: int) -> "Allocation":
        a = self._assign.copy()
        a[i] = k
        return Allocation(a)

    def __getitem__(self, i):
        return int(self._assign[i])

    def __eq__(self, other):
        return isinstance(other, Allocation) and np.array_equal(self._assign, other._assign)

    def __hash__(self):
        return hash(self._assign.tobytes())

    def __repr__(self):
        return f"Allocation({self._assign.tolist()})"


# ---------------------------------------------------------------------------
# neighbors and validation


def neighbor_set(robot: RobotState, robots: Sequence[RobotState], R: float) -> set[int]:
    """Ids of the robots within sensing radius ``R`` of ``robot`` (itself excluded)."""
    if R <= 0:
        raise ValueError("sensing radius must be positive")
    out = set()
    for other in robots:
        if other.id == robot.id:
            continue
        if np.linalg.norm(robot.position - other.position) <= R:
            out.add(other.id)
    return out


def neighbor_indices(positions: np.ndarray, i: int, R: float) -> np.ndarray:
    """Array form of :func:`neighbor_set` on a position matrix."""
    d = np.linalg.norm(positions - positions[i], axis=1)
    d[i] = np.inf
    return np.flatnonzero(d <= R)


@dataclass(frozen=True)
class Violation:
    assumption: str
    indices: tuple
    distance: float
    threshold: float

    def __str__(self):
        return (f"{self.assumption}: {self.indices} at distance {self.distance:.6g} "
                f"(needs > {self.threshold:.6g})")


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def __str__(self):
        return "ok" if self.ok else "\n".join(str(v) for v in self.violations)


def controlled_points(spec: ScenarioSpec) -> np.ndarray:
    """Points the controller acts on: robot positions, or head points in unicycle mode."""
    if not spec.params.unicycle:
        return spec.robots
    theta = np.zeros(spec.N) if spec.headings is None else spec.headings
    pts = spec.robots.copy()
    pts[:, 0] += spec.params.head_offset * np.cos(theta)
    pts[:, 1] += spec.params.head_offset * np.sin(theta)
    return pts


def validate_scenario(spec: ScenarioSpec) -> ValidationReport:
    """Check the initial-configuration assumptions.

    A2: desired points pairwise farther apart than ``r``.
    A3: robots pairwise farther apart than ``r``.
    A4: every robot farther than ``r + r_l`` from every obstacle center.
    A5: ``R > r``.
    In unicycle mode the robot checks apply to the head points.
    """
    p = spec.params
    out: list[Violation] = []
    if not p.R > p.r:
        out.append(Violation("A5", (), p.R, p.r))
    robots = controlled_points(spec)
    for label, pts in (("A2", spec.formation.points), ("A3", robots)):
        N = pts.shape[0]
        for i in range(N):
            for j in range(i + 1, N):
                dist = float(np.linalg.norm(pts[i] - pts[j]))
                if not dist > p.r:
                    out.append(Violation(label, (i, j), dist, p.r))
    for i, x in enumerate(robots):
        for l, ob in enumerate(spec.obstacles):
            dist = float(np.linalg.norm(x - np.asarray(ob.center)))
            if not dist > p.r + ob.radius:
                out.append(Violation("A4", (i, l), dist, p.r + ob.radius))
    return ValidationReport(tuple(out))
