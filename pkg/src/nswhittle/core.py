"""Shared domain types and budget arithmetic for non-stationary RMAB instances.

Kernels are numpy arrays indexed ``[s, a, s']`` with shape ``(S, 2, S)``.
A schedule for ``N`` arms over ``T`` steps is an array of shape
``(N, T, S, 2, S)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

NUM_ACTIONS = 2
PASSIVE, ACTIVE = 0, 1
ROW_SUM_TOL = 1e-12


class RmabError(ValueError):
    """Base class for invalid inputs to the RMAB library."""


class DimensionMismatch(RmabError):
    pass


class NonStochasticRow(RmabError):
    def __init__(self, s: int, a: int, total: float):
        super().__init__(f"row (s={s}, a={a}) sums to {total!r}, not 1")
        self.s, self.a, self.total = s, a, total


class EntryOutOfRange(RmabError):
    def __init__(self, index: tuple, value: float):
        super().__init__(f"entry {index} = {value!r} outside [0, 1]")
        self.index, self.value = index, value


class BelowPMinFloor(RmabError):
    def __init__(self, s: int, a: int, s_next: int, value: float, p_min: float):
        super().__init__(
            f"P({s_next}|s={s}, a={a}) = {value!r} is nonzero but below p_min={p_min!r}"
        )
        self.s, self.a, self.s_next, self.value = s, a, s_next, value


@dataclass(frozen=True)
class RmabConfig:
    """Static description of an RMAB instance.

    ``num_actions`` is fixed at 2 (passive=0, active=1).
    """

    num_arms: int
    num_states: int
    budget: int
    discount: float
    horizon: int
    failure_prob: float = 0.1
    lambda_cap: float | None = None
    p_min_floor: float = 0.05
    num_actions: int = NUM_ACTIONS

    def __post_init__(self):
        if self.num_arms < 1 or self.num_states < 1 or self.horizon < 1:
            raise RmabError("num_arms, num_states and horizon must be positive")
        if self.num_actions != NUM_ACTIONS:
            raise RmabError("only binary actions {0, 1} are supported")
        if not 0 <= self.budget <= self.num_arms:
            raise RmabError(f"budget K={self.budget} must lie in [0, N={self.num_arms}]")
        if not 0.0 <= self.discount < 1.0:
            raise RmabError(f"discount must lie in [0, 1), got {self.discount}")
        if not 0.0 < self.failure_prob < 1.0:
            raise RmabError(f"failure_prob must lie in (0, 1), got {self.failure_prob}")
        if not 0.0 < self.p_min_floor <= 1.0:
            raise RmabError(f"p_min_floor must lie in (0, 1], got {self.p_min_floor}")
        if self.lambda_cap is None:
            # default cap 2/(1-gamma) sits above any useful multiplier when R <= 1
            object.__setattr__(self, "lambda_cap", 2.0 / (1.0 - self.discount))
        if self.lambda_cap < 0:
            raise RmabError("lambda_cap must be nonnegative")

    @property
    def value_bound(self) -> float:
        """Bound N(1 + U_lambda)/(1 - gamma) on any Lagrangian joint value."""
        return self.num_arms * (1.0 + self.lambda_cap) / (1.0 - self.discount)


@dataclass(frozen=True)
class VariationBudget:
    """Per-step, per-arm kernel variation ``per_step[t, i]`` and its total."""

    per_step: np.ndarray
    total: float

    @property
    def per_arm(self) -> np.ndarray:
        return self.per_step.sum(axis=0)


def validate_kernel(kernel: np.ndarray, p_min: float | None = None,
                    num_states: int | None = None) -> np.ndarray:
    """Check that ``kernel`` is a row-stochastic ``(S, 2, S)`` tensor.

    Raises the first violation found; returns the kernel unchanged otherwise.
    """
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim != 3 or kernel.shape[1] != NUM_ACTIONS or kernel.shape[0] != kernel.shape[2]:
        raise DimensionMismatch(f"kernel must have shape (S, 2, S), got {kernel.shape}")
    if num_states is not None and kernel.shape[0] != num_states:
        raise DimensionMismatch(f"kernel has {kernel.shape[0]} states, expected {num_states}")
    bad = np.argwhere((kernel < 0.0) | (kernel > 1.0))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise EntryOutOfRange(idx, float(kernel[idx]))
    sums = kernel.sum(axis=2)
    off = np.argwhere(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if off.size:
        s, a = (int(i) for i in off[0])
        raise NonStochasticRow(s, a, float(sums[s, a]))
    if p_min is not None:
        low = np.argwhere((kernel > 0.0) & (kernel < p_min))
        if low.size:
            s, a, s2 = (int(i) for i in low[0])
            raise BelowPMinFloor(s, a, s2, float(kernel[s, a, s2]), p_min)
    return kernel


def validate_rewards(rewards: np.ndarray, num_states: int | None = None) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim != 2 or rewards.shape[1] != NUM_ACTIONS:
        raise DimensionMismatch(f"reward table must have shape (S, 2), got {rewards.shape}")
    if num_states is not None and rewards.shape[0] != num_states:
        raise DimensionMismatch(f"reward table has {rewards.shape[0]} states, expected {num_states}")
    if np.any(rewards < 0.0) or np.any(rewards > 1.0):
        raise EntryOutOfRange((), float(rewards[(rewards < 0) | (rewards > 1)][0]))
    return rewards


def l1_distance(p: Sequence[float], q: Sequence[float]) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionMismatch(f"shapes differ: {p.shape} vs {q.shape}")
    return float(np.abs(p - q).sum())


def step_variation(schedule: np.ndarray) -> np.ndarray:
    """Max-over-rows L1 change between consecutive kernels.

    ``schedule`` has shape ``(T, S, 2, S)``; the result has shape ``(T-1,)``.
    """
    schedule = np.asarray(schedule, dtype=float)
    if schedule.shape[0] < 2:
        return np.zeros(0)
    diffs = np.abs(np.diff(schedule, axis=0)).sum(axis=-1)
    return diffs.reshape(diffs.shape[0], -1).max(axis=1)


def variation_budget(schedules: Sequence[np.ndarray] | np.ndarray) -> VariationBudget:
    """Per-step variation ``B[t, i]`` of a schedule of kernels for each arm.

    ``schedules`` is indexed ``[arm][t]``. A schedule of length ``T`` has
    ``T - 1`` consecutive pairs; the change after the final step is taken as
    zero since no kernel past the horizon exists.
    """
    arms = [np.asarray(s, dtype=float) for s in schedules]
    if not arms:
        raise DimensionMismatch("need at least one arm")
    horizon = arms[0].shape[0]
    for sched in arms:
        if sched.ndim != 4 or sched.shape[0] != horizon or sched.shape[1:] != arms[0].shape[1:]:
            raise DimensionMismatch("all arms need schedules of identical shape (T, S, 2, S)")
    per_step = np.zeros((horizon, len(arms)))
    for i, sched in enumerate(arms):
        per_step[: horizon - 1, i] = step_variation(sched)
    return VariationBudget(per_step=per_step, total=float(per_step.sum()))
