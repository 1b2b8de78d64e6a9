"""Exact comparator under the true dynamics, relaxed regret and run audits.

Lagrangian values decompose over arms: for per-arm policies ``pi_i`` the joint
value at ``s`` is ``sum_i v_i(s_i) + lam*K/(1 - gamma)``, where ``v_i`` solves
``(I - gamma P_pi) v = R_pi - lam * pi``. Nothing here builds the ``|S|^N``
joint chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dual import select_actions, solve_dual, whittle_indices
from .estimator import point_mass_sets
from .evi import EviStop

OPTIMISM_SLACK = 1e-6


@dataclass
class OracleSolution:
    """Multiplier, greedy per-arm policies ``policies[i, s]`` and the joint value at ``states``."""

    lam: float
    policies: np.ndarray
    q: np.ndarray
    value: float
    states: tuple[int, ...]
    actions: np.ndarray = field(default=None)


@dataclass
class RegretRecord:
    t: int
    v_opt: float
    v_alg: float
    gap: float
    cum_regret: float
    bad_event: bool = False
    constraint_violation: int = 0


@dataclass
class BadEventAudit:
    q_t: list[int]
    q_tilde: list[int]
    window: int
    budget: float
    eta: float

    @property
    def bound(self) -> float:
        """``W*B/eta``, the cap on the extended bad-event set."""
        if self.window * self.budget == 0.0:
            return 0.0
        if self.eta <= 0.0:
            return math.inf
        return self.window * self.budget / self.eta

    @property
    def holds(self) -> bool:
        return len(self.q_tilde) <= math.ceil(self.bound)


@dataclass
class OptimismRecord:
    v_optimistic: float
    v_opt: float
    good_event: bool
    holds: bool


def policy_values(policies, kernels, rewards, lam: float, gamma: float) -> np.ndarray:
    """Exact per-arm discounted values ``v[i, s]`` of the Lagrangian reward ``R - lam*a``.

    ``policies[i, s]`` is the probability of activating arm ``i`` in state
    ``s``; 0/1 entries give deterministic policies.
    """
    p = np.asarray(policies, dtype=float)
    kernels = np.asarray(kernels, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    r = (1.0 - p) * rewards[..., 0] + p * (rewards[..., 1] - lam)
    trans = (1.0 - p)[..., None] * kernels[:, :, 0, :] + p[..., None] * kernels[:, :, 1, :]
    eye = np.eye(kernels.shape[1])
    return np.linalg.solve(eye[None] - gamma * trans, r[..., None])[..., 0]


def evaluate_policy_value(policies, kernels, rewards, lam: float, gamma: float, budget: int,
                          states) -> float:
    """Joint Lagrangian value ``sum_i v_i(s_i) + lam*K/(1 - gamma)``."""
    v = policy_values(policies, kernels, rewards, lam, gamma)
    states = np.asarray(states, dtype=np.int64)
    return float(v[np.arange(v.shape[0]), states].sum() + lam * budget / (1.0 - gamma))


def _q_from_values(v, kernels, rewards, lam, gamma):
    q = rewards + gamma * np.einsum("isaj,ij->isa", kernels, v)
    q[..., 1] -= lam
    return q


def optimal_policies(kernels, rewards, lam: float, gamma: float, start=None,
                     max_rounds: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Policy iteration per arm at fixed ``lam``; returns (policies, exact Q).

    An action changes only on a strict improvement, so the loop terminates.
    The returned policies activate only where activation is strictly better;
    exact ties are value-neutral and resolve to passive.
    """
    n, n_s = kernels.shape[:2]
    pol = np.zeros((n, n_s), dtype=np.int64) if start is None else np.array(start, dtype=np.int64)
    for _ in range(max_rounds):
        v = policy_values(pol, kernels, rewards, lam, gamma)
        q = _q_from_values(v, kernels, rewards, lam, gamma)
        cur = np.take_along_axis(q, pol[..., None], axis=-1)[..., 0]
        better = q.max(axis=-1) > cur + 1e-12 * (1.0 + np.abs(cur))
        if not better.any():
            break
        pol = np.where(better, q.argmax(axis=-1), pol)
    return (q[..., 1] > q[..., 0] + 1e-12 * (1.0 + np.abs(q[..., 0]))).astype(np.int64), q


def solve_oracle(kernels, rewards, states, budget: int, gamma: float, cap: float,
                 kappa: float | None = None, stop: EviStop | None = None) -> OracleSolution:
    """Min over the multiplier of max over policies under the true kernels.

    The confidence sets collapse onto the true kernels, so the extended
    maximization reduces to ordinary value iteration. The greedy policies at
    the returned multiplier are then polished by exact policy iteration.
    """
    kernels = np.asarray(kernels, dtype=float)
    states = tuple(int(s) for s in states)
    sol = solve_dual(point_mass_sets(kernels), rewards, states, budget, gamma, cap, kappa, stop)
    policies, q = optimal_policies(kernels, rewards, sol.lam, gamma, start=sol.evi.greedy())
    value = evaluate_policy_value(policies, kernels, rewards, sol.lam, gamma, budget, states)
    actions = select_actions(whittle_indices(q, states), budget).actions
    return OracleSolution(lam=sol.lam, policies=policies, q=q, value=value, states=states,
                          actions=actions)


class OracleCache:
    """Reuses oracle solutions across steps whose kernels and joint state repeat."""

    def __init__(self, env, budget: int, gamma: float, cap: float, kappa=None, stop=None):
        self.env = env
        self.args = (budget, gamma, cap, kappa, stop)
        self._store: dict = {}
        self.misses = 0

    def get(self, t: int, states) -> OracleSolution:
        key = (self.env.version_at(t), tuple(int(s) for s in states))
        sol = self._store.get(key)
        if sol is None:
            self.misses += 1
            budget, gamma, cap, kappa, stop = self.args
            sol = solve_oracle(self.env.kernels_at(t), self.env.rewards, states, budget, gamma,
                               cap, kappa, stop)
            self._store[key] = sol
        return sol


def regret_step(oracle: OracleSolution, policies, kernels, rewards, states, gamma: float,
                budget: int, t: int = 0, cum_before: float = 0.0) -> RegretRecord:
    """Gap between the oracle's and the learner's values, both at the oracle multiplier."""
    v_opt = evaluate_policy_value(oracle.policies, kernels, rewards, oracle.lam, gamma, budget,
                                  states)
    v_alg = evaluate_policy_value(policies, kernels, rewards, oracle.lam, gamma, budget, states)
    gap = v_opt - v_alg
    return RegretRecord(t=t, v_opt=v_opt, v_alg=v_alg, gap=gap, cum_regret=cum_before + gap)


def optimism_audit(v_optimistic: float, v_opt: float, good_event: bool,
                   slack: float = OPTIMISM_SLACK) -> OptimismRecord:
    return OptimismRecord(v_optimistic=v_optimistic, v_opt=v_opt, good_event=good_event,
                          holds=v_optimistic >= v_opt - slack)


def bad_event_audit(bad_steps, window: int, budget: float, eta: float) -> BadEventAudit:
    """Build the separated bad-event set and its window-extended closure.

    ``bad_steps[t-1]`` flags a step where some true kernel row left its
    confidence set. A flagged step joins ``Q_T`` only if it lies more than
    ``window`` steps after the previous member.
    """
    bad = np.asarray(bad_steps, dtype=bool)
    horizon = bad.shape[0]
    q_t: list[int] = []
    for t in np.flatnonzero(bad) + 1:
        if not q_t or t - q_t[-1] > window:
            q_t.append(int(t))
    covered = np.zeros(horizon + 1, dtype=bool)
    for t in q_t:
        covered[t: min(t + window, horizon) + 1] = True
    q_tilde = [int(t) for t in np.flatnonzero(covered)]
    return BadEventAudit(q_t=q_t, q_tilde=q_tilde, window=int(window), budget=float(budget),
                         eta=float(eta))
