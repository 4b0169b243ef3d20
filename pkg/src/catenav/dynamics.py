"""Velocity consensus estimator, formation propagation and robot integration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InputLimitError(ValueError):
    """A controller produced an input above the speed limit."""


@dataclass(frozen=True)
class EstimatorState:
    """Leader-follower consensus on a ring; leaders see the true desired velocity."""

    estimates: np.ndarray
    leaders: tuple[int, ...] = (0,)
    gain: float = 5.0
    u_max: float = np.inf

    def __post_init__(self):
        est = np.array(self.estimates, dtype=float)
        if est.ndim != 2:
            raise ValueError("estimates must be an N x n array")
        object.__setattr__(self, "estimates", est)
        if not self.leaders:
            raise ValueError("the estimator needs at least one leader")
        if any(not 0 <= i < est.shape[0] for i in self.leaders):
            raise ValueError("leader index out of range")
        if not self.gain > 0:
            raise ValueError("estimator gain must be positive")

    @classmethod
    def zeros(cls, N: int, n: int, **kw) -> "EstimatorState":
        return cls(np.zeros((N, n)), **kw)

    def ring_neighbors(self, i: int) -> list[int]:
        N = self.estimates.shape[0]
        return sorted({(i - 1) % N, (i + 1) % N} - {i})


def estimator_step(est: EstimatorState, v_d, dt: float) -> EstimatorState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = est.estimates
    N = v.shape[0]
    v_d = np.asarray(v_d, dtype=float)
    drift = np.zeros_like(v)
    for i in range(N):
        for j in est.ring_neighbors(i):
            drift[i] -= v[i] - v[j]
    pinned = np.zeros(N)
    pinned[list(est.leaders)] = 1.0
    drift -= pinned[:, None] * (v - v_d)
    new = v + dt * est.gain * drift
    norms = np.linalg.norm(new, axis=1)
    over = norms > est.u_max
    new[over] *= (est.u_max / norms[over])[:, None]
    return EstimatorState(new, est.leaders, est.gain, est.u_max)


def propagate_formation(points: np.ndarray, velocity, t: float, dt: float) -> np.ndarray:
    """Rigid translation of the desired points by ``dt * v_d(t)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = velocity(t) if callable(velocity) else np.asarray(velocity, dtype=float)
    return np.asarray(points, dtype=float) + dt * np.asarray(v, dtype=float)


def integrate_robot(position, u, dt: float, u_max: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    speed = float(np.linalg.norm(u))
    if speed > u_max + 1e-9:
        raise InputLimitError(f"input norm {speed:.9g} exceeds limit {u_max}")
    return np.asarray(position, dtype=float) + dt * u


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    w = math.fmod(theta + math.pi, 2 * math.pi)
    if w <= 0:
        w += 2 * math.pi
    return w - math.pi


def unicycle_transform(u_star, theta: float, l: float):
    """Unicycle inputs ``(v, omega[, climb])`` that move the head point with velocity ``u_star``."""
    if not l > 0:
        raise ValueError("head offset must be positive")
    u = np.asarray(u_star, dtype=float)
    c, s = math.cos(theta), math.sin(theta)
    v = u[0] * c + u[1] * s
    omega = (-u[0] * s + u[1] * c) / l
    if u.size == 3:
        return v, omega, float(u[2])
    return v, omega


def integrate_unicycle(position, theta: float, v: float, omega: float, climb: float | None,
                       dt: float):
    if not dt > 0:
        raise ValueError("dt must be positive")
    p = np.array(position, dtype=float)
    p[0] += dt * v * math.cos(theta)
    p[1] += dt * v * math.sin(theta)
    if p.size == 3 and climb is not None:
        p[2] += dt * climb
    return p, wrap_angle(theta + dt * omega)


def head_point(position, theta: float, l: float) -> np.ndarray:
    p = np.array(position, dtype=float)
    p[0] += l * math.cos(theta)
    p[1] += l * math.sin(theta)
    return p
