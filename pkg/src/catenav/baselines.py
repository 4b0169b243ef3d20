"""Comparison controllers sharing the CBF execution layer.

FOTE keeps a fixed allocation, the CAPT-style variant executes a minimal
squared-distance assignment, and the greedy variant assigns nearest-first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .barriers import WorldSnapshot, base_constraints
from .cate import CateDecision, fallback_decision
from .geometry import Allocation, Params
from .qp import QpProblem, solve_qp


@dataclass(frozen=True)
class AssignmentResult:
    permutation: np.ndarray
    cost: float


def squared_distances(robots, points) -> np.ndarray:
    robots = np.asarray(robots, dtype=float)
    points = np.asarray(points, dtype=float)
    return np.sum((robots[:, None, :] - points[None, :, :]) ** 2, axis=2)


def hungarian_assign(robots, points, atol: float = 1e-9) -> AssignmentResult:
    """Minimal total squared-distance bijection; ties go to the lexicographically smallest.

    The tie-break fixes robots in order: robot ``i`` takes the smallest point that
    still admits an optimal completion of the remaining robots.
    """
    D = squared_distances(robots, points)
    N = D.shape[0]
    if D.shape != (N, N):
        raise ValueError("need as many points as robots")
    if N == 0:
        return AssignmentResult(np.zeros(0, np.int64), 0.0)
    r, c = linear_sum_assignment(D)
    best = float(D[r, c].sum())
    tol = atol * (1.0 + abs(best))
    perm = np.empty(N, np.int64)
    fixed_cost = 0.0
    free_rows = list(range(N))
    free_cols = list(range(N))
    for i in range(N):
        free_rows.remove(i)
        for k in sorted(free_cols):
            rest_cols = [q for q in free_cols if q != k]
            rest = 0.0
            if free_rows:
                sub = D[np.ix_(free_rows, rest_cols)]
                rr, cc = linear_sum_assignment(sub)
                rest = float(sub[rr, cc].sum())
            if fixed_cost + D[i, k] + rest <= best + tol:
                perm[i] = k
                fixed_cost += D[i, k]
                free_cols.remove(k)
                break
    return AssignmentResult(perm, float(D[np.arange(N), perm].sum()))


def greedy_assign(robots, points) -> AssignmentResult:
    """Repeatedly pair the globally closest free robot and point (lowest indices on ties)."""
    D = squared_distances(robots, points)
    N = D.shape[0]
    perm = np.full(N, -1, np.int64)
    work = D.copy()
    for _ in range(N):
        i, k = np.unravel_index(np.argmin(work), work.shape)
        perm[i] = k
        work[i, :] = np.inf
        work[:, k] = np.inf
    return AssignmentResult(perm, float(D[np.arange(N), perm].sum()))


def fixed_step(i: int, k: int, snap: WorldSnapshot, params: Params) -> CateDecision:
    """Single-candidate program for robot ``i`` executing point ``k``."""
    cs = base_constraints(i, snap, params).for_candidate(k)
    relaxed = None
    if params.prune_relaxed_rows:
        relaxed = np.zeros(len(cs), bool)
        relaxed[:cs.N] = np.arange(cs.N) != k
    p = QpProblem.from_constraints(cs, snap.v_hat[i], params.c, relaxed)
    sol = solve_qp(p, params.qp_tol, params.qp_max_iter, residual=False)
    if not sol.optimal:
        return fallback_decision(i, snap, params)
    N = snap.N
    table = np.full(N, np.inf)
    table[k] = sol.objective
    return CateDecision(i, k, sol.u_star.copy(), sol.delta_star.copy(), table, table.copy())


def fote_step(i: int, snap: WorldSnapshot, fixed: Allocation, params: Params) -> CateDecision:
    return fixed_step(i, fixed[i], snap, params)


def capt_assign_step(i: int, snap: WorldSnapshot, assignment: Allocation, params: Params) -> CateDecision:
    """Execute the precomputed minimal squared-distance assignment for robot ``i``."""
    return fixed_step(i, assignment[i], snap, params)


def assignment_for(controller: str, positions, desired) -> Allocation:
    N = len(positions)
    if controller == "FOTE":
        return Allocation.identity(N)
    if controller == "CAPT_ASSIGN":
        return Allocation(hungarian_assign(positions, desired).permutation)
    if controller == "GREEDY":
        return Allocation(greedy_assign(positions, desired).permutation)
    raise ValueError(f"no fixed assignment for controller {controller!r}")

