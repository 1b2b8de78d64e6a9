import numpy as np
import pytest

from oracles import best_joint_value, enumerate_policies, joint_chain_value, random_instance, rollout_value
from nswhittle.env import EnvironmentSchedule
from nswhittle.evi import EviStop
from nswhittle.oracle import (
    BadEventAudit,
    OracleCache,
    bad_event_audit,
    evaluate_policy_value,
    optimal_policies,
    optimism_audit,
    policy_values,
    regret_step,
    solve_oracle,
)

CAP = 20.0


def test_constant_reward_value():
    rng = np.random.default_rng(0)
    kernels, _ = random_instance(rng, 3, 3)
    policies = rng.integers(0, 2, size=(3, 3))
    v = evaluate_policy_value(policies, kernels, np.ones((3, 3, 2)), 0.0, 0.8, 1, [0, 2, 1])
    assert v == pytest.approx(3 / 0.2, abs=1e-10)


def test_single_state_active_arm_value():
    v = evaluate_policy_value([[1]], np.ones((1, 1, 2, 1)), np.array([[[0.0, 1.0]]]), 0.5, 0.5, 1, [0])
    assert v == pytest.approx(2.0, abs=1e-14)
    assert policy_values([[1]], np.ones((1, 1, 2, 1)), np.array([[[0.0, 1.0]]]), 0.5, 0.5)[0, 0] == \
        pytest.approx(1.0, abs=1e-14)


def test_decomposed_value_matches_joint_chain():
    rng = np.random.default_rng(1)
    for _ in range(10):
        kernels, rewards = random_instance(rng, 2, 3)
        pol = rng.integers(0, 2, size=(2, 3))
        states = rng.integers(0, 3, size=2)
        lam = rng.uniform(0, 3)
        got = evaluate_policy_value(pol, kernels, rewards, lam, 0.9, 1, states)
        assert got == pytest.approx(joint_chain_value(pol, kernels, rewards, lam, 0.9, 1, states), abs=1e-9)


def test_linear_solve_matches_rollouts():
    rng = np.random.default_rng(2)
    kernels, rewards = random_instance(rng, 1, 3)
    policy = np.array([0.3, 1.0, 0.0])
    gamma, lam, eps = 0.8, 0.4, 1e-6
    horizon = int(np.ceil(np.log(eps * (1 - gamma)) / np.log(gamma)))
    exact = policy_values(policy[None], kernels, rewards, lam, gamma)[0, 1]
    mean, se = rollout_value(policy, kernels[0], rewards[0], lam, gamma, 1, 100_000, horizon, rng)
    assert abs(mean - exact) <= 3 * se


def test_action_free_single_arm_has_zero_multiplier_and_passive_policy():
    rng = np.random.default_rng(3)
    kernel = rng.dirichlet(np.ones(3), size=3)
    kernels = np.stack([kernel, kernel], axis=1)[None]
    rewards = np.repeat(rng.uniform(size=(1, 3, 1)), 2, axis=2)
    sol = solve_oracle(kernels, rewards, (1,), 1, 0.9, CAP)
    assert sol.lam == 0.0
    assert sol.policies.tolist() == [[0, 0, 0]]


def test_oracle_value_matches_enumeration_over_joint_policies():
    rng = np.random.default_rng(4)
    for _ in range(10):
        kernels, rewards = random_instance(rng, 2, 2)
        states = tuple(rng.integers(0, 2, size=2))
        sol = solve_oracle(kernels, rewards, states, 1, 0.9, CAP)
        assert sol.value == pytest.approx(best_joint_value(kernels, rewards, sol.lam, 0.9, 1, states),
                                          abs=1e-6)


def test_oracle_dominates_every_deterministic_policy():
    rng = np.random.default_rng(5)
    kernels, rewards = random_instance(rng, 2, 3)
    states = (2, 0)
    sol = solve_oracle(kernels, rewards, states, 1, 0.9, CAP)
    for pol in enumerate_policies(2, 3):
        assert evaluate_policy_value(pol, kernels, rewards, sol.lam, 0.9, 1, states) <= sol.value + 1e-9


def test_policy_iteration_is_optimal_at_every_state():
    rng = np.random.default_rng(6)
    kernels, rewards = random_instance(rng, 3, 3)
    pol, q = optimal_policies(kernels, rewards, 0.7, 0.9)
    v = policy_values(pol, kernels, rewards, 0.7, 0.9)
    assert np.allclose(v, q.max(axis=-1), atol=1e-10)


def test_oracle_regret_against_itself_is_zero():
    rng = np.random.default_rng(7)
    kernels, rewards = random_instance(rng, 3, 2)
    sol = solve_oracle(kernels, rewards, (0, 1, 1), 1, 0.9, CAP)
    rec = regret_step(sol, sol.policies, kernels, rewards, (0, 1, 1), 0.9, 1, t=4, cum_before=1.5)
    assert rec.gap == 0.0 and rec.cum_regret == 1.5
    worse = 1 - sol.policies
    assert regret_step(sol, worse, kernels, rewards, (0, 1, 1), 0.9, 1).gap >= 0.0


def test_oracle_activates_at_most_budget():
    rng = np.random.default_rng(8)
    kernels, rewards = random_instance(rng, 4, 3)
    sol = solve_oracle(kernels, rewards, (0, 1, 2, 0), 2, 0.9, CAP)
    assert sol.actions.sum() <= 2
    assert 0.0 <= sol.lam <= CAP


def test_cache_reuses_stationary_solutions():
    rng = np.random.default_rng(9)
    kernels, rewards = random_instance(rng, 2, 2)
    env = EnvironmentSchedule(kernels=np.repeat(kernels[:, None], 20, axis=1), rewards=rewards,
                              mode="stationary", seed=0)
    cache = OracleCache(env, 1, 0.9, CAP)
    first = cache.get(1, (0, 1))
    assert cache.get(17, (0, 1)) is first
    assert cache.get(3, (1, 1)).lam == pytest.approx(first.lam)
    assert cache.misses == 2


def test_optimism_audit_records():
    assert optimism_audit(5.0, 5.0 + 5e-7, True).holds
    assert not optimism_audit(5.0, 5.1, True).holds


def test_bad_event_sets():
    bad = np.zeros(30, dtype=bool)
    bad[[2, 4, 10, 11, 25]] = True  # steps 3, 5, 11, 12, 26
    audit = bad_event_audit(bad, window=5, budget=1.0, eta=0.5)
    assert audit.q_t == [3, 11, 26]
    assert audit.q_tilde == list(range(3, 9)) + list(range(11, 17)) + list(range(26, 31))
    assert set(audit.q_t) <= set(audit.q_tilde)
    assert audit.bound == pytest.approx(10.0)
    assert not audit.holds


def test_zero_budget_bound_is_zero():
    audit = bad_event_audit(np.zeros(50, dtype=bool), window=50, budget=0.0, eta=0.02)
    assert audit.q_t == [] and audit.q_tilde == []
    assert audit.bound == 0.0 and audit.holds
    assert not BadEventAudit([1], [1], 50, 0.0, 0.02).holds


def test_tight_stop_keeps_oracle_consistent():
    rng = np.random.default_rng(10)
    kernels, rewards = random_instance(rng, 2, 3)
    a = solve_oracle(kernels, rewards, (0, 0), 1, 0.9, CAP)
    b = solve_oracle(kernels, rewards, (0, 0), 1, 0.9, CAP, stop=EviStop(1e-12, 100_000))
    assert a.lam == pytest.approx(b.lam, abs=1e-3)
    assert a.value == pytest.approx(b.value, abs=1e-2)
