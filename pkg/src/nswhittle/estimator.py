"""Sliding-window transition statistics and L1 confidence sets.

A record ``(q, s, a, s')`` stored at time ``q`` describes the transition out
of step ``q``. Estimates queried at time ``t`` use the ``W`` most recent steps,
``q`` in ``[max(t - W, 1), t - 1]``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import NUM_ACTIONS, RmabError, l1_distance


class NonMonotoneTime(RmabError):
    pass


class InvalidDelta(RmabError):
    pass


class SlidingWindowStats:
    """Windowed transition counts for a single arm.

    ``counts[s, a, s']`` tracks the records inside the window that ends at the
    next query time ``last_time + 1``. Passing ``true_row`` to
    :meth:`record` also accumulates the true kernel rows of in-window records,
    which yields the window-averaged true transition used by the good-event
    audit.
    """

    def __init__(self, num_states: int, window: int):
        if window < 1:
            raise RmabError(f"window must be a positive integer, got {window}")
        self.num_states = num_states
        self.window = int(window)
        self.history: deque = deque()
        self.counts = np.zeros((num_states, NUM_ACTIONS, num_states), dtype=np.int64)
        self.true_sums = np.zeros((num_states, NUM_ACTIONS, num_states))
        self.last_time = 0

    def record(self, t: int, s: int, a: int, s_next: int, true_row=None) -> None:
        if t <= self.last_time:
            raise NonMonotoneTime(f"record at t={t} after t={self.last_time}")
        self.last_time = t
        self.history.append((t, s, a, s_next, true_row))
        self.counts[s, a, s_next] += 1
        if true_row is not None:
            self.true_sums[s, a] += true_row
        self._evict(t + 1 - self.window)

    def _evict(self, oldest: int) -> None:
        while self.history and self.history[0][0] < oldest:
            _, s, a, s_next, row = self.history.popleft()
            self.counts[s, a, s_next] -= 1
            if row is not None:
                self.true_sums[s, a] -= row

    def window_counts(self, t: int | None = None) -> np.ndarray:
        """Joint counts ``M[s, a, s']`` of records in the window for query time ``t``."""
        if t is None or t == self.last_time + 1:
            return self.counts
        if t <= self.last_time:
            raise NonMonotoneTime(f"query at t={t} precedes recorded history (last t={self.last_time})")
        counts = np.zeros_like(self.counts)
        lo = max(t - self.window, 1)
        for q, s, a, s_next, _ in self.history:
            if lo <= q <= t - 1:
                counts[s, a, s_next] += 1
        return counts

    def recount(self) -> np.ndarray:
        """Counts rebuilt from the raw history; used to cross-check the incremental path."""
        counts = np.zeros_like(self.counts)
        for _, s, a, s_next, _ in self.history:
            counts[s, a, s_next] += 1
        return counts


def record_transition(stats: list[SlidingWindowStats], arm: int, t: int, s: int, a: int,
                      s_next: int) -> None:
    stats[arm].record(t, s, a, s_next)


def window_count(stats: list[SlidingWindowStats], arm: int, t: int, s: int, a: int) -> int:
    """In-window visit count of ``(s, a)`` with the ``max{x, 1}`` guard applied."""
    return max(int(stats[arm].window_counts(t)[s, a].sum()), 1)


def _centers(counts: np.ndarray) -> np.ndarray:
    visits = counts.sum(axis=-1, keepdims=True)
    uniform = np.full(counts.shape, 1.0 / counts.shape[-1])
    return np.divide(counts, np.maximum(visits, 1), out=uniform, where=visits > 0)


def empirical_transition(stats: list[SlidingWindowStats], arm: int, t: int, s: int,
                         a: int) -> np.ndarray:
    """Windowed empirical next-state distribution; uniform when ``(s, a)`` is unseen."""
    return _centers(stats[arm].window_counts(t)[s, a])


def confidence_radius(count, num_states: int, num_actions: int, horizon: int,
                      delta: float):
    """``sqrt(2|S| log(|S||A|T/delta) / N+)``; works elementwise on arrays of counts."""
    if not 0.0 < delta < 1.0:
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")
    log_term = math.log(num_states * num_actions * horizon / delta)
    return np.sqrt(2.0 * num_states * log_term / np.maximum(count, 1))


@dataclass(frozen=True)
class ConfidenceSet:
    """L1 ball of radius ``radius + eta`` around ``center``, intersected with the simplex."""

    center: np.ndarray
    radius: float
    eta: float = 0.0

    @property
    def total_radius(self) -> float:
        return self.radius + self.eta


def build_confidence_set(stats: list[SlidingWindowStats], arm: int, t: int, s: int, a: int,
                         eta: float, config) -> ConfidenceSet:
    if eta < 0:
        raise RmabError("exploration bonus eta must be nonnegative")
    counts = stats[arm].window_counts(t)[s, a]
    radius = confidence_radius(counts.sum(), config.num_states, config.num_actions,
                               config.horizon, config.failure_prob)
    return ConfidenceSet(center=_centers(counts), radius=float(radius), eta=float(eta))


def contains(cset: ConfidenceSet, p) -> bool:
    return l1_distance(p, cset.center) <= cset.total_radius


@dataclass
class ConfidenceArrays:
    """Confidence sets of all arms stacked for the vectorized solvers.

    ``centers`` has shape (N, S, 2, S); ``radius``, ``eta`` and ``visits``
    have shape (N, S, 2).
    """

    centers: np.ndarray
    radius: np.ndarray
    eta: np.ndarray
    visits: np.ndarray

    @property
    def total_radius(self) -> np.ndarray:
        return self.radius + self.eta

    def as_set(self, arm: int, s: int, a: int) -> ConfidenceSet:
        return ConfidenceSet(self.centers[arm, s, a].copy(), float(self.radius[arm, s, a]),
                             float(self.eta[arm, s, a]))

    def contains_all(self, kernels: np.ndarray, slack: float = 0.0) -> np.ndarray:
        """Elementwise membership of true rows ``kernels`` (N, S, 2, S) in the sets."""
        dist = np.abs(kernels - self.centers).sum(axis=-1)
        return dist <= self.total_radius + slack


def build_confidence_arrays(stats: list[SlidingWindowStats], t: int, etas, config) -> ConfidenceArrays:
    counts = np.stack([st.window_counts(t) for st in stats])
    visits = counts.sum(axis=-1)
    radius = confidence_radius(visits, config.num_states, config.num_actions, config.horizon,
                               config.failure_prob)
    eta = np.empty(visits.shape)
    eta[...] = np.asarray(etas, dtype=float)[:, None, None]
    return ConfidenceArrays(centers=_centers(counts), radius=radius, eta=eta, visits=visits)


def point_mass_sets(kernels: np.ndarray) -> ConfidenceArrays:
    """Degenerate sets collapsed onto known kernels (radius 0, eta 0)."""
    shape = kernels.shape[:-1]
    return ConfidenceArrays(centers=np.ascontiguousarray(kernels, dtype=float),
                            radius=np.zeros(shape), eta=np.zeros(shape),
                            visits=np.zeros(shape, dtype=np.int64))


def window_average_truth(stats: SlidingWindowStats) -> tuple[np.ndarray, np.ndarray]:
    """Window-averaged true rows of the recorded transitions and the visit mask."""
    visits = stats.counts.sum(axis=-1)
    avg = stats.true_sums / np.maximum(visits, 1)[..., None]
    return avg, visits > 0
