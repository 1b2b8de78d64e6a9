"""Non-stationary RMAB environments: generation, stepping and serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    NUM_ACTIONS,
    RmabConfig,
    RmabError,
    VariationBudget,
    validate_kernel,
    validate_rewards,
    variation_budget,
)

MODES = ("stationary", "abrupt", "drift")
DRIFT_ANCHOR_DRAWS = 1000

# purpose codes for the per-(purpose, arm) random streams
_STREAMS = {"kernel": 0, "reward": 1, "transition": 2, "init": 3, "policy": 4, "jumps": 5}


class InfeasibleBudget(RmabError):
    pass


class PMinInfeasible(RmabError):
    pass


class HorizonExceeded(RmabError):
    pass


def stream(seed: int, purpose: str, arm: int = 0) -> np.random.Generator:
    """Independent generator for one (purpose, arm) pair of a master seed.

    Streams never share state, so drawing from one (e.g. for instrumentation)
    leaves every other stream untouched.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_STREAMS[purpose], int(arm)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class JointState:
    states: tuple[int, ...]
    time: int = 1


@dataclass(frozen=True)
class StepOutcome:
    next_state: JointState
    per_arm_rewards: np.ndarray
    total_reward: float


@dataclass(frozen=True, eq=False)
class EnvironmentSchedule:
    """Time-indexed kernels ``kernels[arm, t-1]`` and known stationary rewards.

    ``version[arm, t-1]`` increments whenever the arm's kernel changes, so two
    time steps with equal version tuples share identical dynamics.
    """

    kernels: np.ndarray
    rewards: np.ndarray
    mode: str
    seed: int
    target_budget: float = 0.0
    version: np.ndarray = field(default=None)

    def __post_init__(self):
        kernels = np.ascontiguousarray(self.kernels, dtype=float)
        rewards = np.ascontiguousarray(self.rewards, dtype=float)
        if kernels.ndim != 5 or kernels.shape[3] != NUM_ACTIONS:
            raise RmabError(f"kernels must have shape (N, T, S, 2, S), got {kernels.shape}")
        if rewards.shape != (kernels.shape[0], kernels.shape[2], NUM_ACTIONS):
            raise RmabError(f"rewards must have shape (N, S, 2), got {rewards.shape}")
        version = self.version
        if version is None:
            changed = np.any(np.diff(kernels, axis=1) != 0.0, axis=(2, 3, 4))
            version = np.concatenate(
                [np.zeros((kernels.shape[0], 1), dtype=np.int64), np.cumsum(changed, axis=1)], axis=1
            )
        for arr in (kernels, rewards, version):
            arr.setflags(write=False)
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "version", version)

    @property
    def num_arms(self) -> int:
        return self.kernels.shape[0]

    @property
    def horizon(self) -> int:
        return self.kernels.shape[1]

    @property
    def num_states(self) -> int:
        return self.kernels.shape[2]

    def kernels_at(self, t: int) -> np.ndarray:
        """True kernels of every arm at time ``t`` (1-based), shape (N, S, 2, S)."""
        return self.kernels[:, t - 1]

    def version_at(self, t: int) -> tuple[int, ...]:
        return tuple(self.version[:, t - 1].tolist())

    @property
    def budget(self) -> VariationBudget:
        return realized_variation(self)

    def to_json(self) -> dict:
        return {
            "num_arms": self.num_arms,
            "num_states": self.num_states,
            "horizon": self.horizon,
            "mode": self.mode,
            "seed": self.seed,
            "target_budget": self.target_budget,
            "kernels": self.kernels.tolist(),
            "rewards": self.rewards.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "EnvironmentSchedule":
        env = cls(
            kernels=np.array(data["kernels"], dtype=float),
            rewards=np.array(data["rewards"], dtype=float),
            mode=data["mode"],
            seed=int(data["seed"]),
            target_budget=float(data.get("target_budget", 0.0)),
        )
        if (env.num_arms, env.num_states, env.horizon) != (
            data["num_arms"], data["num_states"], data["horizon"]
        ):
            raise RmabError("snapshot header does not match kernel dimensions")
        return env

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "EnvironmentSchedule":
        return cls.from_json(json.loads(Path(path).read_text()))


def _anchor_kernel(rng: np.random.Generator, num_states: int, p_min: float) -> np.ndarray:
    # affine mix with the floor keeps every entry >= p_min after normalization
    raw = rng.dirichlet(np.ones(num_states), size=(num_states, NUM_ACTIONS))
    kernel = p_min + (1.0 - num_states * p_min) * raw
    return kernel / kernel.sum(axis=-1, keepdims=True)


def _toward(kernel: np.ndarray, target: np.ndarray, step: float) -> np.ndarray:
    """Move every row of ``kernel`` toward ``target`` by L1 distance ``min(step, dist)``."""
    diff = target - kernel
    dist = np.abs(diff).sum(axis=-1, keepdims=True)
    scale = np.divide(np.minimum(step, dist), dist, out=np.zeros_like(dist), where=dist > 0)
    moved = kernel + scale * diff
    return moved / moved.sum(axis=-1, keepdims=True)


def _drift_schedule(rng, horizon, num_states, p_min, arm_budget):
    start = _anchor_kernel(rng, num_states, p_min)
    if arm_budget == 0.0:
        return np.broadcast_to(start, (horizon,) + start.shape).copy()
    if horizon < 2:
        raise InfeasibleBudget("drift needs T >= 2")
    # redraw the second anchor until one step can cover the per-step move
    step = arm_budget / (horizon - 1)
    for _ in range(DRIFT_ANCHOR_DRAWS):
        other = _anchor_kernel(rng, num_states, p_min)
        span = float(np.abs(other - start).sum(axis=-1).min())
        if span >= step:
            break
    # shrink every row toward `start` so all rows sit at the same L1 distance
    end = _toward(start, other, span)
    frac = arm_budget / (span * (horizon - 1)) if span > 0.0 else math.inf
    if frac > 1.0:
        raise InfeasibleBudget(
            f"per-arm budget {arm_budget} needs per-step moves beyond the anchor span {span}"
        )
    # triangle wave over whole steps: every step moves exactly `frac` of the span
    half = max(int(np.floor(1.0 / frac)), 1)
    k = np.arange(horizon) % (2 * half)
    pos = frac * np.where(k <= half, k, 2 * half - k)
    sched = start[None] + pos[:, None, None, None] * (end - start)[None]
    return sched / sched.sum(axis=-1, keepdims=True)


def _abrupt_schedule(rng, jump_rng, horizon, num_states, p_min, arm_budget, num_jumps):
    kernel = _anchor_kernel(rng, num_states, p_min)
    sched = np.broadcast_to(kernel, (horizon,) + kernel.shape).copy()
    jumps = min(num_jumps, horizon - 1)
    if arm_budget == 0.0 or jumps <= 0:
        if arm_budget > 0.0:
            raise InfeasibleBudget("abrupt mode needs T >= 2 to spend a positive budget")
        return sched
    size = arm_budget / jumps
    times = np.sort(jump_rng.choice(np.arange(1, horizon), size=jumps, replace=False))
    for tau in times:
        target = _anchor_kernel(rng, num_states, p_min)
        kernel = _toward(kernel, target, size)
        sched[tau:] = kernel
    return sched


def generate_environment(config: RmabConfig, target_budget: float, mode: str, seed: int,
                         num_jumps: int = 2) -> EnvironmentSchedule:
    """Sample a schedule of kernels whose realized variation respects ``target_budget``.

    The budget is split evenly over arms. ``drift`` spends it exactly through a
    piecewise-linear walk between two anchor kernels; ``abrupt`` spends at most
    it through ``num_jumps`` change points per arm.
    """
    if mode not in MODES:
        raise RmabError(f"unknown mode {mode!r}; expected one of {MODES}")
    if target_budget < 0:
        raise InfeasibleBudget("target budget must be nonnegative")
    if mode == "stationary" and target_budget > 0:
        raise InfeasibleBudget("a stationary environment cannot spend a positive budget")
    n, s, horizon, p_min = config.num_arms, config.num_states, config.horizon, config.p_min_floor
    if p_min > 1.0 / s:
        raise PMinInfeasible(f"p_min_floor={p_min} exceeds 1/|S|={1.0 / s}")
    arm_budget = target_budget / n
    kernels = np.empty((n, horizon, s, NUM_ACTIONS, s))
    rewards = np.empty((n, s, NUM_ACTIONS))
    for i in range(n):
        rng = stream(seed, "kernel", i)
        if mode == "drift":
            kernels[i] = _drift_schedule(rng, horizon, s, p_min, arm_budget)
        elif mode == "abrupt":
            kernels[i] = _abrupt_schedule(rng, stream(seed, "jumps", i), horizon, s, p_min,
                                          arm_budget, num_jumps)
        else:
            kernels[i] = _anchor_kernel(rng, s, p_min)[None]
        rewards[i] = stream(seed, "reward", i).uniform(0.0, 1.0, size=(s, NUM_ACTIONS))
    env = EnvironmentSchedule(kernels=kernels, rewards=rewards, mode=mode, seed=int(seed),
                              target_budget=float(target_budget))
    for i in range(n):
        validate_rewards(env.rewards[i], s)
        for v in np.unique(env.version[i], return_index=True)[1]:
            validate_kernel(env.kernels[i, v], p_min, s)
    return env


def realized_variation(env: EnvironmentSchedule) -> VariationBudget:
    return variation_budget(env.kernels)


def transition_streams(seed: int, num_arms: int) -> list[np.random.Generator]:
    return [stream(seed, "transition", i) for i in range(num_arms)]


def initial_state(env: EnvironmentSchedule, seed: int) -> JointState:
    rng = stream(seed, "init")
    return JointState(tuple(int(x) for x in rng.integers(0, env.num_states, size=env.num_arms)), 1)


def step(env: EnvironmentSchedule, state: JointState, actions, rng) -> StepOutcome:
    """Advance every arm one step under ``actions``.

    ``rng`` is a sequence of per-arm generators; each arm consumes exactly one
    uniform draw per step whatever its action, which keeps paired runs on
    common random numbers.
    """
    if state.time > env.horizon:
        raise HorizonExceeded(f"time {state.time} is past the horizon {env.horizon}")
    actions = np.asarray(actions, dtype=np.int64)
    if actions.shape != (env.num_arms,):
        raise RmabError(f"need {env.num_arms} actions, got shape {actions.shape}")
    kernels = env.kernels[:, state.time - 1]
    nxt = []
    rewards = np.empty(env.num_arms)
    for i, (s, a) in enumerate(zip(state.states, actions)):
        row = kernels[i, s, a]
        u = rng[i].random()
        nxt.append(min(int(np.searchsorted(np.cumsum(row), u, side="right")), env.num_states - 1))
        rewards[i] = env.rewards[i, s, a]
    return StepOutcome(JointState(tuple(nxt), state.time + 1), rewards, float(rewards.sum()))
