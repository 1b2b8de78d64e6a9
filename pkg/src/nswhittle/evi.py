"""Extended value iteration over L1 confidence sets.

Each arm is solved independently. The transition row is treated as an extra
decision variable chosen inside its confidence set to maximize the expected
continuation value, so the converged Q-values are optimistic.

The sweep loop is compiled with numba; the public functions validate inputs
and delegate to the compiled kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RmabError
from ._kernels import _evi_arms, _inner_max, _optimistic_mean, _order_desc
from .estimator import ConfidenceArrays


class InvalidRadius(RmabError):
    pass


@dataclass(frozen=True)
class EviStop:
    """Stop when the sup-norm change of a sweep is at most ``tol`` or after ``max_iters`` sweeps."""

    tol: float
    max_iters: int

    @classmethod
    def default(cls, discount: float) -> "EviStop":
        tol = 1e-6 * (1.0 - discount)
        return cls(tol=tol, max_iters=10 * math.ceil(math.log(1.0 / tol) / (1.0 - discount)))


@dataclass
class EviResult:
    """Converged Q-values ``q`` (N, S, 2), the optimistic kernel (N, S, 2, S),
    sweep counts per arm and the per-sweep sup-norm changes (N, max_iters)."""

    q: np.ndarray
    kernel: np.ndarray
    sweeps: np.ndarray
    deltas: np.ndarray | None = None

    def greedy(self) -> np.ndarray:
        """Per-arm greedy policy: activate iff Q(s, 1) >= Q(s, 0)."""
        return (self.q[..., 1] >= self.q[..., 0]).astype(np.int64)


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma < 1.0:
        raise RmabError(f"extended value iteration needs a discount in [0, 1), got {gamma}")


def inner_maximize(center, total_radius: float, values) -> np.ndarray:
    """Maximize ``sum P(s') values(s')`` over the simplex intersected with an L1 ball.

    Mass ``min(r/2, 1 - center(best))`` moves onto the highest-value state and is
    taken from the lowest-value states first. Equal values leave the center
    unchanged since moving mass between them cannot change the objective.
    """
    if total_radius < 0:
        raise InvalidRadius(f"radius must be nonnegative, got {total_radius}")
    center = np.ascontiguousarray(center, dtype=float)
    values = np.ascontiguousarray(values, dtype=float)
    if center.shape != values.shape:
        raise RmabError("center and values must have equal length")
    order = np.zeros(center.shape[0], dtype=np.int64)
    out = np.empty_like(center)
    _order_desc(values, order)
    _inner_max(center, float(total_radius), values, order, out)
    return out


def _arrays(sets):
    if isinstance(sets, ConfidenceArrays):
        return sets.centers, sets.total_radius
    raise TypeError("sets must be ConfidenceArrays")


def evi_sweep(q: np.ndarray, sets: ConfidenceArrays, rewards: np.ndarray, lam: float,
              gamma: float) -> np.ndarray:
    """One synchronous extended Bellman update applied to ``q`` (N, S, 2).

    ``Q'(s, a) = -lam*a + R(s, a) + gamma * max_{P in H(s, a)} sum P(s') max_a' Q(s', a')``
    """
    _check_gamma(gamma)
    if lam < 0:
        raise RmabError("lambda must be nonnegative")
    centers, radii = _arrays(sets)
    q = np.asarray(q, dtype=float)
    values = q.max(axis=-1)
    out = np.empty_like(q)
    order = np.zeros(q.shape[1], dtype=np.int64)
    for i in range(q.shape[0]):
        _order_desc(values[i], order)
        for s in range(q.shape[1]):
            for a in range(2):
                out[i, s, a] = -lam * a + rewards[i, s, a] + gamma * _optimistic_mean(
                    centers[i, s, a], float(radii[i, s, a]), values[i], order)
    return out


def run_evi(sets: ConfidenceArrays, rewards: np.ndarray, lam: float, gamma: float,
            stop: EviStop | None = None) -> EviResult:
    """Iterate extended Bellman sweeps from ``Q = 0`` until ``stop`` triggers, per arm.

    The optimistic kernel is extracted once, from the final Q-values.
    """
    _check_gamma(gamma)
    if lam < 0:
        raise RmabError("lambda must be nonnegative")
    stop = stop or EviStop.default(gamma)
    if stop.max_iters < 1:
        raise RmabError("EVI needs at least one sweep")
    centers, radii = _arrays(sets)
    rewards = np.ascontiguousarray(rewards, dtype=float)
    n, n_s = centers.shape[0], centers.shape[1]
    q = np.zeros((n, n_s, 2))
    kernel = np.zeros((n, n_s, 2, n_s))
    deltas = np.zeros((n, stop.max_iters))
    sweeps = np.zeros(n, dtype=np.int64)
    _evi_arms(np.ascontiguousarray(centers), np.ascontiguousarray(radii), rewards, float(lam),
              float(gamma), float(stop.tol), int(stop.max_iters), q, kernel, deltas, sweeps)
    return EviResult(q=q, kernel=kernel, sweeps=sweeps, deltas=deltas)
