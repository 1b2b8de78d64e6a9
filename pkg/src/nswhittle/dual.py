"""Lagrange multiplier search, Whittle-style indices and budgeted arm selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .estimator import ConfidenceArrays
from ._kernels import INV_PHI, _golden_dual, _objective_value
from .evi import EviResult, EviStop, run_evi

TIE_TOL = 1e-9


@dataclass
class DualState:
    """Result of a multiplier search on ``[lower, upper]`` to interval width ``kappa``."""

    lam: float
    lower: float
    upper: float
    kappa: float
    iterations: int = 0


@dataclass
class DualSolution:
    lam: float
    objective: float
    evi: EviResult
    evaluations: int


@dataclass(frozen=True)
class PolicyDecision:
    indices: np.ndarray
    actions: np.ndarray
    active_count: int


def default_kappa(cap: float) -> float:
    return 1e-4 * (1.0 + cap)


def golden_section(f: Callable[[float], float], lo: float, hi: float, kappa: float,
                   tie_tol: float = TIE_TOL) -> tuple[float, int]:
    """Golden-section minimization of a convex ``f`` on ``[lo, hi]``.

    Near-ties move the bracket left, so on a flat stretch the search settles on
    its smallest point. Returns the left end of the final bracket and the
    number of evaluations.
    """
    if hi <= lo:
        return lo, 0
    a, b = lo, hi
    x1 = b - INV_PHI * (b - a)
    x2 = a + INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    evals = 2
    while b - a > kappa:
        if f1 <= f2 + tie_tol:
            b, x2, f2 = x2, x1, f1
            x1 = b - INV_PHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + INV_PHI * (b - a)
            f2 = f(x2)
        evals += 1
    return a, evals


def minimize_dual(state: DualState, objective: Callable[[float], float],
                  tie_tol: float = TIE_TOL) -> DualState:
    lam, evals = golden_section(objective, state.lower, state.upper, state.kappa, tie_tol)
    return DualState(lam=lam, lower=state.lower, upper=state.upper, kappa=state.kappa,
                     iterations=evals)


def dual_objective(lam: float, sets: ConfidenceArrays, rewards: np.ndarray, states, gamma: float,
                   budget: int, stop: EviStop | None = None) -> float:
    """``sum_i max_a Q_i(s_i, a) + lam*K/(1 - gamma)`` with Q from per-arm EVI at ``lam``.

    The last term is the budget credit of the Lagrangian; without it the sum of
    Q-values only decreases in ``lam`` and the minimizer would sit at the cap.
    """
    res = run_evi(sets, rewards, lam, gamma, stop)
    return _objective_value(res.q, np.asarray(states, dtype=np.int64), lam, budget, gamma)


def solve_dual(sets: ConfidenceArrays, rewards: np.ndarray, states, budget: int, gamma: float,
               cap: float, kappa: float | None = None, stop: EviStop | None = None,
               tie_tol: float = TIE_TOL) -> DualSolution:
    """Golden-section search for the multiplier, each evaluation a full per-arm EVI.

    Returns the multiplier together with the EVI solution at that multiplier.
    """
    stop = stop or EviStop.default(gamma)
    kappa = default_kappa(cap) if kappa is None else kappa
    n, n_s = sets.centers.shape[:2]
    q = np.zeros((n, n_s, 2))
    kernel = np.zeros((n, n_s, 2, n_s))
    deltas = np.zeros((n, stop.max_iters))
    sweeps = np.zeros(n, dtype=np.int64)
    lam, value, evals = _golden_dual(
        np.ascontiguousarray(sets.centers), np.ascontiguousarray(sets.total_radius),
        np.ascontiguousarray(rewards, dtype=float), np.asarray(states, dtype=np.int64),
        int(budget), float(gamma), float(stop.tol), int(stop.max_iters), 0.0, float(cap),
        float(kappa), float(tie_tol), q, kernel, deltas, sweeps,
    )
    return DualSolution(lam=lam, objective=value,
                        evi=EviResult(q=q, kernel=kernel, sweeps=sweeps, deltas=deltas),
                        evaluations=evals)


def whittle_indices(q: np.ndarray, states) -> np.ndarray:
    """Activation advantage ``Q_i(s_i, 1) - Q_i(s_i, 0)`` of each arm at its current state."""
    states = np.asarray(states, dtype=np.int64)
    arms = np.arange(q.shape[0])
    return q[arms, states, 1] - q[arms, states, 0]


def select_actions(indices, budget: int) -> PolicyDecision:
    """Activate up to ``budget`` arms with the largest nonnegative indices, lower id first on ties."""
    indices = np.asarray(indices, dtype=float)
    if budget > indices.shape[0]:
        raise ValueError(f"budget {budget} exceeds the number of arms {indices.shape[0]}")
    order = np.lexsort((np.arange(indices.shape[0]), -indices))
    chosen = [i for i in order if indices[i] >= 0.0][:budget]
    actions = np.zeros(indices.shape[0], dtype=np.int64)
    actions[chosen] = 1
    return PolicyDecision(indices=indices, actions=actions, active_count=len(chosen))
