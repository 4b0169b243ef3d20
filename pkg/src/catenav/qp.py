"""Dense strictly convex QP with a diagonal Hessian.

Minimizes ``sum(w * (x - target)**2)`` subject to ``C @ x <= d`` with a dual
active-set method (Goldfarb-Idnani).  The dual method needs no feasible starting
point, detects infeasibility as an unbounded dual step, and increases the primal
objective monotonically.  The kernels are compiled with numba.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numba
import numpy as np
from scipy.optimize import nnls

OPTIMAL, MAX_ITER, INFEASIBLE = 0, 1, 2


class QpStatus(Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max-iterations"
    INFEASIBLE = "infeasible-detected"


_STATUS = {OPTIMAL: QpStatus.OPTIMAL, MAX_ITER: QpStatus.MAX_ITERATIONS, INFEASIBLE: QpStatus.INFEASIBLE}


@dataclass(frozen=True)
class QpProblem:
    """``min sum(weights * (x - target)**2)  s.t.  C @ x <= d``.

    For the controller, ``x = [u, delta]``; the first ``n_u`` entries are the input.
    """

    weights: np.ndarray
    target: np.ndarray
    C: np.ndarray
    d: np.ndarray
    n_u: int = 0

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float)
        tgt = np.ascontiguousarray(self.target, dtype=float)
        C = np.ascontiguousarray(np.asarray(self.C, dtype=float).reshape(-1, w.size))
        d = np.ascontiguousarray(self.d, dtype=float).reshape(-1)
        if tgt.shape != w.shape or C.shape[0] != d.size:
            raise ValueError("inconsistent QP dimensions")
        if not np.all(w > 0):
            raise ValueError("all quadratic weights must be positive (strict convexity)")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(d)) and np.all(np.isfinite(tgt))):
            raise ValueError("QP data must be finite")
        for name, val in (("weights", w), ("target", tgt), ("C", C), ("d", d)):
            object.__setattr__(self, name, val)

    @property
    def n_var(self) -> int:
        return self.weights.size

    def objective(self, x) -> float:
        return float(np.sum(self.weights * (np.asarray(x) - self.target) ** 2))

    def gradient(self, x) -> np.ndarray:
        return 2.0 * self.weights * (np.asarray(x) - self.target)

    @classmethod
    def from_constraints(cls, cs, v_hat, c: float, relaxed=None) -> "QpProblem":
        """Program ``c||delta||^2 + ||u - v_hat||^2`` over a constraint set, with ``delta >= 0``.

        ``relaxed`` optionally drops the point rows flagged True (pruning).
        """
        n, N = cs.n, cs.N
        rows = len(cs)
        keep = np.ones(rows, bool) if relaxed is None else ~np.asarray(relaxed, bool)
        C = np.zeros((rows, n + N))
        C[:, :n] = cs.coef
        has = cs.slack >= 0
        C[np.flatnonzero(has), n + cs.slack[has]] = -1.0
        C = np.vstack([C[keep], np.hstack([np.zeros((N, n)), -np.eye(N)])])
        d = np.concatenate([-cs.constant[keep], np.zeros(N)])
        w = np.concatenate([np.ones(n), np.full(N, float(c))])
        target = np.concatenate([np.asarray(v_hat, float), np.zeros(N)])
        return cls(w, target, C, d, n)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    objective: float
    status: QpStatus
    iterations: int
    kkt_residual: float
    active: tuple[int, ...] = ()
    multipliers: np.ndarray | None = None
    trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_u: int = 0

    @property
    def u_star(self) -> np.ndarray:
        return self.x[:self.n_u]

    @property
    def delta_star(self) -> np.ndarray:
        return self.x[self.n_u:]

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


# ---------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _refine_active(w, C, d, x, active, n_act):
    # minimum-norm correction putting the active rows back on their boundaries
    hinv = 0.5 / w
    G = np.empty((n_act, n_act))
    res = np.empty(n_act)
    for a in range(n_act):
        ca = C[active[a]]
        res[a] = np.dot(ca, x) - d[active[a]]
        for b in range(n_act):
            G[a, b] = np.dot(ca * hinv, C[active[b]])
    mu = np.linalg.solve(G, res)
    y = x.copy()
    for a in range(n_act):
        y -= mu[a] * hinv * C[active[a]]
    return y


@numba.njit(cache=True)
def _gi_core(w, target, C, d, enabled, tol, max_iter, priority, n_priority, trace):
    nv = w.size
    m = d.size
    hinv = 0.5 / w
    x = target.copy()
    active = np.empty(nv, np.int64)
    lam = np.empty(nv)
    n_act = 0
    iters = 0
    n_trace = 0
    trace[0] = 0.0
    n_trace = 1
    is_active = np.zeros(m, np.bool_)
    # a dual step this long means the primal is infeasible up to roundoff
    lam_cap = 1e12 * (1.0 + np.max(np.abs(2.0 * w * target)) + np.max(np.abs(d)) if m > 0 else np.inf)

    while True:
        # most violated constraint, previously active rows first
        p = -1
        worst = -tol
        for a in range(n_priority):
            j = priority[a]
            if j < 0 or j >= m or not enabled[j] or is_active[j]:
                continue
            s = d[j] - np.dot(C[j], x)
            if s < worst:
                worst = s
                p = j
        if p < 0:
            for j in range(m):
                if not enabled[j] or is_active[j]:
                    continue
                s = d[j] - np.dot(C[j], x)
                if s < worst:
                    worst = s
                    p = j
        if p < 0:
            if n_act > 0:
                y = _refine_active(w, C, d, x, active, n_act)
                ok = True
                for j in range(m):
                    if enabled[j] and np.dot(C[j], y) - d[j] > tol:
                        ok = False
                        break
                if ok:
                    x = y
            return x, active, lam, n_act, OPTIMAL, iters, n_trace

        # constraint in n.x >= e form: n = -C[p], e = -d[p]
        npv = -C[p]
        lam_p = 0.0
        while True:
            iters += 1
            if iters > max_iter:
                return x, active, lam, n_act, MAX_ITER, iters - 1, n_trace
            hn = hinv * npv
            r = np.zeros(n_act)
            if n_act > 0:
                G = np.empty((n_act, n_act))
                rhs = np.empty(n_act)
                for a in range(n_act):
                    ca = -C[active[a]]
                    rhs[a] = np.dot(ca, hn)
                    for b in range(n_act):
                        G[a, b] = np.dot(ca * hinv, -C[active[b]])
                r = np.linalg.solve(G, rhs)
            z = hn.copy()
            for a in range(n_act):
                z += r[a] * hinv * C[active[a]]
            # partial step length
            t1 = np.inf
            drop = -1
            for a in range(n_act):
                if r[a] > 0.0:
                    ratio = lam[a] / r[a]
                    if ratio < t1:
                        t1 = ratio
                        drop = a
            zn = np.dot(z, npv)
            s_p = np.dot(npv, x) + d[p]
            t2 = np.inf
            if zn > 1e-12 * np.dot(npv, hn):
                t2 = -s_p / zn
                if t2 < 0.0:
                    t2 = 0.0
            t = min(t1, t2)
            if t == np.inf or lam_p + t > lam_cap:
                return x, active, lam, n_act, INFEASIBLE, iters, n_trace
            if t2 == np.inf:
                # dual step only
                for a in range(n_act):
                    lam[a] -= t * r[a]
                lam_p += t
            else:
                x = x + t * z
                for a in range(n_act):
                    lam[a] -= t * r[a]
                lam_p += t
                f = 0.0
                for v in range(nv):
                    f += w[v] * (x[v] - target[v]) ** 2
                if n_trace < trace.size:
                    trace[n_trace] = f
                    n_trace += 1
                if t == t2:
                    active[n_act] = p
                    lam[n_act] = lam_p
                    n_act += 1
                    is_active[p] = True
                    break
            # drop the blocking constraint and keep working on p
            is_active[active[drop]] = False
            for a in range(drop, n_act - 1):
                active[a] = active[a + 1]
                lam[a] = lam[a + 1]
            n_act -= 1


@numba.njit(cache=True)
def _gi_candidates(w, target, C, d_base, n_point, varpi, prune, tol, max_iter,
                   priority, n_priority):
    """Solve one QP per candidate; rows ``0..n_point-1`` are the point rows."""
    nv = w.size
    m = d_base.size
    out_x = np.empty((n_point, nv))
    out_f = np.empty(n_point)
    out_status = np.empty(n_point, np.int64)
    out_active = np.full((n_point, nv), -1, np.int64)
    trace = np.empty(1)
    enabled = np.ones(m, np.bool_)
    d = d_base.copy()
    for k in range(n_point):
        for q in range(n_point):
            if q == k:
                d[q] = d_base[q]
                enabled[q] = True
            else:
                d[q] = d_base[q] + varpi
                enabled[q] = not prune
        x, active, lam, n_act, status, iters, nt = _gi_core(
            w, target, C, d, enabled, tol, max_iter, priority[k], n_priority[k], trace)
        out_x[k] = x
        f = 0.0
        for v in range(nv):
            f += w[v] * (x[v] - target[v]) ** 2
        out_f[k] = f
        out_status[k] = status
        for a in range(n_act):
            out_active[k, a] = active[a]
    return out_x, out_f, out_status, out_active


# ---------------------------------------------------------------------------
# python front end


def solve_qp(p: QpProblem, tol: float = 1e-8, max_iter: int = 200, warm_active=None,
             enabled=None, residual: bool = True) -> QpSolution:
    """Solve ``p``; ``warm_active`` lists rows to try first (e.g. last step's active set).

    ``residual=False`` skips the KKT residual evaluation (reported as NaN).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    prio = np.asarray(warm_active if warm_active is not None else [], dtype=np.int64)
    en = np.ones(p.d.size, bool) if enabled is None else np.asarray(enabled, bool)
    trace = np.empty(max_iter + 2)
    x, active, lam, n_act, status, iters, nt = _gi_core(
        p.weights, p.target, p.C, p.d, en, tol, max_iter, prio, prio.size, trace)
    act = tuple(int(a) for a in active[:n_act])
    mult = np.zeros(p.d.size)
    mult[list(act)] = lam[:n_act]
    sol = QpSolution(x=x, objective=p.objective(x), status=_STATUS[status], iterations=iters,
                     kkt_residual=0.0, active=act, multipliers=mult, trace=trace[:nt].copy(),
                     n_u=p.n_u)
    if not residual:
        return _with_residual(sol, float("nan"))
    if enabled is not None:
        p = QpProblem(p.weights, p.target, p.C[en], p.d[en], p.n_u)
    return _with_residual(sol, kkt_residual(p, sol))


def _with_residual(sol: QpSolution, res: float) -> QpSolution:
    return QpSolution(sol.x, sol.objective, sol.status, sol.iterations, res, sol.active,
                      sol.multipliers, sol.trace, sol.n_u)


def kkt_residual(p: QpProblem, candidate, active_tol: float = 1e-9) -> float:
    """Max of primal violation, stationarity and complementarity at ``candidate``.

    Multipliers are the nonnegative least-squares fit on rows active within
    ``active_tol`` (scaled by the row magnitude), so dual feasibility holds by construction.
    """
    x = np.asarray(getattr(candidate, "x", candidate), dtype=float)
    if x.shape != p.weights.shape:
        raise ValueError("candidate dimension mismatch")
    grad = p.gradient(x)
    if p.d.size == 0:
        return float(np.max(np.abs(grad), initial=0.0))
    viol = p.C @ x - p.d
    primal = float(max(0.0, viol.max()))
    scale = 1.0 + np.abs(p.d) + np.abs(p.C) @ np.abs(x)
    act = np.flatnonzero(np.abs(viol) <= active_tol * scale)
    if act.size:
        lam, _ = nnls(p.C[act].T, -grad)
        stat = grad + p.C[act].T @ lam
        comp = float(np.max(np.abs(lam * viol[act])))
    else:
        stat = grad
        comp = 0.0
    return max(primal, float(np.max(np.abs(stat))), comp)
