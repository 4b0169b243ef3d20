"""The concurrent-allocation controller.

Each robot's program is mixed-integer only through its one-hot allocation row,
so it is solved exactly by enumerating the ``N`` candidate points and solving one
convex QP per candidate.  The coupled allocation cost then picks the candidates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .barriers import WorldSnapshot, base_constraints
from .geometry import Allocation, Params
from .qp import OPTIMAL, QpProblem, _gi_candidates

SCHEDULE_ALIASES = {"parallel": "parallel-snapshot"}


@dataclass(frozen=True)
class CateParams:
    b: float = 1e5
    c: float = 1e2
    varpi: float = 1000.0
    hysteresis: float = 1e-6
    schedule: str = "joint"

    def __post_init__(self):
        object.__setattr__(self, "schedule", SCHEDULE_ALIASES.get(self.schedule, self.schedule))
        if min(self.b, self.c, self.varpi) <= 0 or self.hysteresis < 0:
            raise ValueError("b, c, varpi must be positive and the hysteresis nonnegative")
        if self.schedule not in ("joint", "gauss-seidel", "parallel-snapshot"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not self.b > self.c > 1:
            warnings.warn("expected b >> c >> 1 for the allocation cost to dominate", stacklevel=2)

    @classmethod
    def from_params(cls, p: Params) -> "CateParams":
        return cls(p.b, p.c, p.varpi, p.hysteresis, p.schedule)


@dataclass(frozen=True)
class CandidateTable:
    """QP results for every candidate point of one robot."""

    objectives: np.ndarray  # N, +inf where the QP did not reach optimality
    x: np.ndarray           # N x (n + N), rows are [u, delta]
    status: np.ndarray      # N status codes
    n: int

    @property
    def feasible(self) -> np.ndarray:
        return self.status == OPTIMAL


@dataclass
class CateDecision:
    robot: int
    k: int
    u_star: np.ndarray
    delta_star: np.ndarray
    table: np.ndarray           # total cost per candidate
    qp_objectives: np.ndarray   # QP part per candidate
    fallback_used: bool = False


@dataclass
class WarmStart:
    """Per-robot cache of the last active sets, one row per candidate."""

    entries: dict = field(default_factory=dict)

    def get(self, robot: int, n_rows: int, N: int, n_var: int):
        hit = self.entries.get(robot)
        if hit is None or hit[0] != n_rows or hit[1].shape != (N, n_var):
            return np.full((N, n_var), -1, np.int64), np.zeros(N, np.int64)
        act = hit[1]
        return act, np.sum(act >= 0, axis=1).astype(np.int64)

    def put(self, robot: int, n_rows: int, active: np.ndarray) -> None:
        self.entries[robot] = (n_rows, active)


def qp_arrays(cs, v_hat, c: float):
    """Dense arrays of the candidate QPs for a relief-free constraint set."""
    p = QpProblem.from_constraints(cs, v_hat, c)
    return p.weights, p.target, p.C, p.d


def candidate_table(i: int, snap: WorldSnapshot, params: Params, warm: WarmStart | None = None,
                    order=None) -> CandidateTable:
    """Solve robot ``i``'s QP for every candidate point.

    ``order`` permutes the evaluation order of candidates (results are reported in
    index order regardless).
    """
    cs = base_constraints(i, snap, params)
    w, target, C, d = qp_arrays(cs, snap.v_hat[i], params.c)
    N = snap.N
    if warm is not None:
        prio, nprio = warm.get(i, C.shape[0], N, w.size)
    else:
        prio, nprio = np.full((N, w.size), -1, np.int64), np.zeros(N, np.int64)
    if order is not None:
        # the kernel always runs 0..N-1; relabel point rows so row q is candidate order[q]
        order = np.asarray(order)
        perm_rows = np.concatenate([order, np.arange(N, C.shape[0])])
        perm_var = np.concatenate([np.arange(cs.n), cs.n + order])
        xs, f, st, act = _gi_candidates(w[perm_var], target[perm_var],
                                        np.ascontiguousarray(C[perm_rows][:, perm_var]),
                                        d[perm_rows], N, float(params.varpi),
                                        bool(params.prune_relaxed_rows), params.qp_tol,
                                        params.qp_max_iter, prio, np.zeros(N, np.int64))
        inv = np.argsort(order)
        xs_out = np.empty_like(xs)
        xs_out[:, perm_var] = xs
        xs, f, st = xs_out[inv], f[inv], st[inv]
    else:
        xs, f, st, act = _gi_candidates(w, target, C, d, N, float(params.varpi),
                                        bool(params.prune_relaxed_rows), params.qp_tol,
                                        params.qp_max_iter, prio, nprio)
        if warm is not None:
            warm.put(i, C.shape[0], act)
    f = np.where(st == OPTIMAL, f, np.inf)
    return CandidateTable(f, xs, st, cs.n)


def candidate_cost(allocation: Allocation, i: int, k: int, qp_objective: float, b: float) -> float:
    """Allocation error with row ``i`` set to ``k``, weighted by ``b``, plus the QP objective."""
    return b * allocation.with_row(i, k).allocation_error() + qp_objective


def _allocation_costs(allocation: Allocation, i: int, b: float) -> np.ndarray:
    N = allocation.N
    base = allocation.column_sums().astype(float)
    base[allocation[i]] -= 1
    # error when row i picks k: sum_q (base_q + [q == k] - 1)^2
    e0 = np.sum((base - 1.0) ** 2)
    return b * (e0 - (base - 1.0) ** 2 + base ** 2)


def fallback_decision(i: int, snap: WorldSnapshot, params: Params, table=None) -> CateDecision:
    """Trivial feasible point: ``u = v_hat``, own index, smallest slacks that satisfy the point rows."""
    cs = base_constraints(i, snap, params).for_candidate(i)
    u = snap.v_hat[i].copy()
    N = snap.N
    delta = np.maximum(0.0, cs.coef[:N] @ u + cs.constant[:N])
    tab = np.full(N, np.inf) if table is None else table
    return CateDecision(i, i, u, delta, tab, tab, fallback_used=True)


def _select(costs: np.ndarray, incumbent: int, hysteresis: float) -> int:
    k = int(np.argmin(costs))  # lowest index among exact ties
    if not costs[k] < costs[incumbent] - hysteresis:
        return incumbent
    return k


def _decision(i: int, k: int, tab: CandidateTable, costs: np.ndarray) -> CateDecision:
    x = tab.x[k]
    return CateDecision(i, k, x[:tab.n].copy(), x[tab.n:].copy(), costs, tab.objectives)


def cate_step_robot(i: int, snap: WorldSnapshot, allocation: Allocation, params: Params,
                    warm: WarmStart | None = None, tab: CandidateTable | None = None) -> CateDecision:
    """Enumerate robot ``i``'s candidates and pick the cheapest under the coupled cost."""
    if tab is None:
        tab = candidate_table(i, snap, params, warm)
    if not np.any(tab.feasible):
        return fallback_decision(i, snap, params)
    costs = _allocation_costs(allocation, i, params.b) + tab.objectives
    k = _select(costs, allocation[i], params.hysteresis)
    if not np.isfinite(costs[k]):
        k = int(np.argmin(costs))
    return _decision(i, k, tab, costs)


def joint_assignment(qp_objectives: np.ndarray, b: float) -> np.ndarray:
    """Exact minimizer of ``b * allocation_error + sum_i qp[i, row_i]`` over one-hot rows.

    Column ``q`` with ``s`` robots contributes ``b * (s - 1)**2``; the increments
    ``b * (2s - 3)`` are increasing in ``s``, so the problem is a rectangular
    assignment of robots to (point, slot) pairs.
    """
    N = qp_objectives.shape[0]
    big = 1e3 * (b * N * N + np.max(np.abs(qp_objectives[np.isfinite(qp_objectives)]), initial=1.0))
    qp = np.where(np.isfinite(qp_objectives), qp_objectives, big)
    slots = b * (2.0 * np.arange(1, N + 1) - 3.0)
    cost = (qp[:, :, None] + slots[None, None, :]).reshape(N, N * N)
    rows, cols = linear_sum_assignment(cost)
    assign = np.empty(N, np.int64)
    assign[rows] = cols // N
    return assign


def joint_cost(assign, qp_objectives: np.ndarray, b: float) -> float:
    a = Allocation(assign)
    return b * a.allocation_error() + float(np.sum(qp_objectives[np.arange(a.N), a.assign]))


def allocation_sweep(snap: WorldSnapshot, allocation: Allocation, params: Params,
                     warm: WarmStart | None = None, schedule: str | None = None):
    """One allocation update for all robots; returns ``(new allocation, decisions)``.

    ``gauss-seidel``: robots decide in ascending order, each seeing its
    predecessors' fresh rows.  ``parallel-snapshot``: everyone reads the same
    allocation.  ``joint``: the allocation minimizing the summed objective of all
    robots is taken, unless it beats the incumbent by no more than the hysteresis.
    """
    schedule = SCHEDULE_ALIASES.get(schedule or params.schedule, schedule or params.schedule)
    N = snap.N
    tabs = [candidate_table(i, snap, params, warm) for i in range(N)]
    decisions: list[CateDecision] = []
    if schedule == "gauss-seidel":
        current = allocation
        for i in range(N):
            dec = cate_step_robot(i, snap, current, params, tab=tabs[i])
            current = current.with_row(i, dec.k)
            decisions.append(dec)
        return current, decisions
    if schedule == "parallel-snapshot":
        decisions = [cate_step_robot(i, snap, allocation, params, tab=tabs[i]) for i in range(N)]
        return Allocation([d.k for d in decisions]), decisions
    if schedule != "joint":
        raise ValueError(f"unknown schedule {schedule!r}")

    qp = np.array([t.objectives for t in tabs])
    if not np.any(np.isfinite(qp)):
        decisions = [fallback_decision(i, snap, params) for i in range(N)]
        return Allocation([d.k for d in decisions]), decisions
    best = joint_assignment(qp, params.b)
    inc = allocation.assign
    if not joint_cost(best, qp, params.b) < joint_cost(inc, qp, params.b) - params.hysteresis:
        best = inc
    new = Allocation(best)
    for i in range(N):
        if not tabs[i].feasible[best[i]]:
            if not np.any(tabs[i].feasible):
                decisions.append(fallback_decision(i, snap, params))
                continue
            # infeasible entry only when the incumbent was kept; fall back to robot-wise choice
            decisions.append(cate_step_robot(i, snap, new, params, tab=tabs[i]))
            continue
        costs = _allocation_costs(new, i, params.b) + tabs[i].objectives
        decisions.append(_decision(i, int(best[i]), tabs[i], costs))
    return Allocation([d.k for d in decisions]), decisions
