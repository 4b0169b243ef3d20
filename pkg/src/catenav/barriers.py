"""Task functions, their gradients, and the linear constraint rows of one robot's program.

Every row has the form ``coef · u + slack_coef · delta[slack] + constant <= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.spatial import ConvexHull

from .geometry import Obstacle, Params


class SingularGradientError(ValueError):
    """The gradient of a distance-based task is undefined at coincident points."""


@dataclass(frozen=True)
class LinearClassK:
    """Extended class-K function ``gamma(h) = kappa * h``."""

    kappa: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("class-K gain must be positive")

    def __call__(self, h):
        return self.kappa * h


def phi_point(x, xd) -> float:
    x, xd = np.asarray(x, float), np.asarray(xd, float)
    if x.shape != xd.shape:
        raise ValueError("dimension mismatch")
    return float(np.linalg.norm(x - xd))


def phi_robot(xi, xj, r: float) -> float:
    xi, xj = np.asarray(xi, float), np.asarray(xj, float)
    if xi.shape != xj.shape:
        raise ValueError("dimension mismatch")
    return float(r - np.linalg.norm(xi - xj))


def phi_obstacle(x, obs: Obstacle, r: float, t: float = 0.0) -> float:
    x = np.asarray(x, float)
    center = obs.position(t)
    if x.shape != center.shape:
        raise ValueError("dimension mismatch")
    return float(r + obs.radius - np.linalg.norm(x - center))


class RowKind(Enum):
    POINT = "point"
    ROBOT = "robot"
    OBSTACLE = "obstacle"
    FACET = "facet"


def grad_phi(kind: RowKind | str, x, anchor) -> np.ndarray:
    """Unit gradient of a task function with respect to the robot position.

    Points attract (``+``), robots and obstacles repel (``-``).  Raises
    :class:`SingularGradientError` when ``x`` coincides with ``anchor``.
    """
    kind = RowKind(kind)
    diff = np.asarray(x, float) - np.asarray(anchor, float)
    dist = np.linalg.norm(diff)
    if dist == 0.0:
        raise SingularGradientError(f"{kind.value} gradient undefined at coincident points")
    unit = diff / dist
    return unit if kind is RowKind.POINT else -unit


# ---------------------------------------------------------------------------
# input limit polytope


@lru_cache(maxsize=None)
def _unit_facets(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    if n == 2:
        ang = (2 * np.arange(m) + 1) * np.pi / m
        normals = np.column_stack([np.cos(ang), np.sin(ang)])
        offsets = np.full(m, np.cos(np.pi / m))
    elif n == 3:
        normals, offsets = _subdivided_octahedron()
    else:
        raise ValueError("input dimension must be 2 or 3")
    normals.setflags(write=False)
    offsets.setflags(write=False)
    return normals, offsets


def _subdivided_octahedron() -> tuple[np.ndarray, np.ndarray]:
    # 6 octahedron vertices plus 12 edge midpoints, all pushed onto the unit sphere
    axes = np.vstack([np.eye(3), -np.eye(3)])
    mids = []
    for a in range(6):
        for b in range(a + 1, 6):
            if abs(axes[a] @ axes[b]) < 0.5:
                mids.append(axes[a] + axes[b])
    pts = np.vstack([axes, np.array(mids)])
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    hull = ConvexHull(pts)
    if len(hull.equations) != 32:
        raise RuntimeError("subdivided octahedron should have 32 facets")
    # hull.equations: normal . p + offset <= 0 with unit outward normals
    order = np.lexsort(np.round(hull.equations[:, :3], 12).T[::-1])
    eq = hull.equations[order]
    return eq[:, :3].copy(), -eq[:, 3].copy()


def input_facets(n: int, u_max: float, m: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Polytope ``normals @ u <= offsets`` inscribed in the ball ``||u|| <= u_max``.

    2-D uses a regular ``m``-gon with vertices on the circle; 3-D uses the
    32-facet polyhedron obtained by subdividing an octahedron.
    """
    normals, offsets = _unit_facets(n, m if n == 2 else 32)
    return normals, offsets * u_max


# ---------------------------------------------------------------------------
# constraint assembly


@dataclass(frozen=True)
class WorldSnapshot:
    """Frozen world state at one instant, shared by every robot's decision."""

    positions: np.ndarray            # N x n
    v_hat: np.ndarray                # N x n velocity estimates
    desired: np.ndarray              # N x n desired points
    obstacle_centers: np.ndarray     # M x n
    obstacle_radii: np.ndarray       # M
    obstacle_velocities: np.ndarray  # M x n
    t: float = 0.0

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def n(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class ConstraintRow:
    coef: np.ndarray
    slack: int | None
    slack_coef: float
    constant: float
    kind: RowKind
    index: int

    def lhs(self, u, delta) -> float:
        s = 0.0 if self.slack is None else self.slack_coef * delta[self.slack]
        return float(self.coef @ np.asarray(u) + s + self.constant)


@dataclass(frozen=True)
class ConstraintSet:
    """Array-backed rows for robot ``robot`` evaluating candidate ``k``.

    Rows ``0..N-1`` are the point-convergence rows (row ``q`` carries slack
    ``delta[q]``), followed by neighbor rows, obstacle rows and input facets.
    ``k is None`` marks a base set without any relief; :meth:`for_candidate`
    subtracts ``varpi`` from every point row other than the candidate's.
    """

    robot: int
    k: int | None
    coef: np.ndarray      # rows x n
    slack: np.ndarray     # rows, -1 for none
    constant: np.ndarray  # rows
    kinds: tuple[RowKind, ...]
    indices: np.ndarray   # point / neighbor / obstacle / facet index of each row
    varpi: float

    @property
    def n(self) -> int:
        return self.coef.shape[1]

    @property
    def N(self) -> int:
        return int(np.sum(self.slack >= 0))

    def __len__(self):
        return self.coef.shape[0]

    @property
    def rows(self) -> list[ConstraintRow]:
        return [ConstraintRow(self.coef[j], None if self.slack[j] < 0 else int(self.slack[j]),
                              -1.0 if self.slack[j] >= 0 else 0.0, float(self.constant[j]),
                              self.kinds[j], int(self.indices[j]))
                for j in range(len(self))]

    def count(self, kind: RowKind) -> int:
        return sum(1 for kd in self.kinds if kd is kind)

    def lhs(self, u, delta) -> np.ndarray:
        u = np.asarray(u, float)
        delta = np.asarray(delta, float)
        s = np.where(self.slack >= 0, -delta[np.maximum(self.slack, 0)], 0.0)
        return self.coef @ u + s + self.constant

    def for_candidate(self, k: int) -> "ConstraintSet":
        """Same rows with the relief moved onto every point row except ``k``.

        Only valid on a set built without relief (``self.k is None``).
        """
        if self.k is not None:
            raise ValueError("set already targets a candidate")
        N = self.N
        if not 0 <= k < N:
            raise ValueError(f"candidate index {k} out of range 0..{N - 1}")
        constant = self.constant.copy()
        constant[:N] -= np.where(np.arange(N) != k, self.varpi, 0.0)
        return ConstraintSet(self.robot, k, self.coef, self.slack, constant, self.kinds,
                             self.indices, self.varpi)


def build_constraints(i: int, snap: WorldSnapshot, params: Params, candidate_k: int,
                      neighbors=None) -> ConstraintSet:
    """Assemble robot ``i``'s rows when desired point ``candidate_k`` is the one it executes."""
    return base_constraints(i, snap, params, neighbors).for_candidate(candidate_k)


def base_constraints(i: int, snap: WorldSnapshot, params: Params, neighbors=None) -> ConstraintSet:
    """Robot ``i``'s rows with no relief on any point row (``k is None``)."""
    N, n = snap.N, snap.n
    gamma = LinearClassK(params.kappa)
    x = snap.positions[i]
    vh = snap.v_hat[i]

    # point convergence
    diff = x - snap.desired
    dist = np.linalg.norm(diff, axis=1)
    g_pt = np.divide(diff, dist[:, None], out=np.zeros_like(diff), where=dist[:, None] > 0)
    c_pt = -(g_pt @ vh) + gamma(dist)

    # neighbors
    if neighbors is None:
        d_all = np.linalg.norm(snap.positions - x, axis=1)
        d_all[i] = np.inf
        neighbors = np.flatnonzero(d_all <= params.R)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    diff = x - snap.positions[neighbors]
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist == 0):
        raise SingularGradientError(f"robot {i} coincides with a neighbor")
    g_nb = -diff / dist[:, None] if len(neighbors) else np.zeros((0, n))
    c_nb = -(g_nb @ vh) + gamma(params.r - dist)

    # obstacles
    diff = x - snap.obstacle_centers
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist == 0):
        raise SingularGradientError(f"robot {i} coincides with an obstacle center")
    M = len(dist)
    g_ob = -diff / dist[:, None] if M else np.zeros((0, n))
    carried = snap.obstacle_velocities if params.obstacle_world_frame else vh + snap.obstacle_velocities
    c_ob = -np.einsum("ij,ij->i", g_ob, carried) + gamma(
        params.r + snap.obstacle_radii - dist)

    normals, offsets = input_facets(n, params.u_max, params.facets)

    coef = np.vstack([g_pt, g_nb, g_ob, normals])
    constant = np.concatenate([c_pt, c_nb, c_ob, -offsets])
    slack = np.concatenate([np.arange(N), np.full(len(coef) - N, -1)]).astype(np.int64)
    kinds = ((RowKind.POINT,) * N + (RowKind.ROBOT,) * len(neighbors)
             + (RowKind.OBSTACLE,) * M + (RowKind.FACET,) * len(offsets))
    indices = np.concatenate([np.arange(N), neighbors, np.arange(M), np.arange(len(offsets))])
    return ConstraintSet(i, None, coef, slack, constant, kinds, indices.astype(np.int64),
                         float(params.varpi))
