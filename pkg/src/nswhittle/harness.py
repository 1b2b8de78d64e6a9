"""Experiment orchestration: the NS-Whittle loop, baselines, replications and output files."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import RmabConfig, RmabError
from .dual import default_kappa, select_actions, solve_dual, whittle_indices
from .env import (
    EnvironmentSchedule,
    generate_environment,
    initial_state,
    realized_variation,
    step,
    stream,
    transition_streams,
)
from .estimator import (
    SlidingWindowStats,
    build_confidence_arrays,
    point_mass_sets,
    window_average_truth,
)
from .evi import EviStop
from .oracle import (
    OracleCache,
    bad_event_audit,
    evaluate_policy_value,
    optimism_audit,
    policy_values,
)

log = logging.getLogger(__name__)

POLICIES = ("ns_whittle", "oracle", "random", "stationary_whittle")
CSV_COLUMNS = ("replication", "t", "v_opt", "v_alg", "gap", "cum_regret", "lambda_t",
               "active_count", "constraint_violation", "bad_event")
VALUE_SLACK = 1e-6


class ConfigError(RmabError):
    pass


@dataclass
class ExperimentConfig:
    num_arms: int
    num_states: int
    budget: int
    discount: float
    horizon: int
    failure_prob: float = 0.1
    lambda_cap: float | None = None
    p_min_floor: float = 0.05
    target_budget: float = 0.0
    mode: str = "stationary"
    num_jumps: int = 2
    window: int | list | str = "auto"
    eta: float | list | str = "auto"
    evi_tol: float | None = None
    evi_max_iters: int | None = None
    kappa: float | None = None
    policy: str = "ns_whittle"
    replications: int = 1
    seed: int = 0
    output: str | None = None
    audit: bool = False
    solve_every: int = 1
    initial_policy: str = "passive"
    collapse_sets: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.initial_policy not in ("passive", "solve"):
            raise ConfigError("initial_policy must be 'passive' or 'solve'")
        if self.replications < 1 or self.solve_every < 1 or self.workers < 1:
            raise ConfigError("replications, solve_every and workers must be positive")
        for name in ("window", "eta"):
            value = getattr(self, name)
            if isinstance(value, str) and value != "auto":
                raise ConfigError(f"{name} must be a number, a per-arm list or 'auto'")
        self.rmab  # validates the instance fields

    @property
    def rmab(self) -> RmabConfig:
        return RmabConfig(num_arms=self.num_arms, num_states=self.num_states, budget=self.budget,
                          discount=self.discount, horizon=self.horizon,
                          failure_prob=self.failure_prob, lambda_cap=self.lambda_cap,
                          p_min_floor=self.p_min_floor)

    @property
    def cap(self) -> float:
        return self.rmab.lambda_cap

    @property
    def evi_stop(self) -> EviStop:
        stop = EviStop.default(self.discount)
        return EviStop(tol=self.evi_tol if self.evi_tol is not None else stop.tol,
                       max_iters=self.evi_max_iters or stop.max_iters)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def replace(self, **changes) -> "ExperimentConfig":
        data = asdict(self)
        data.update(changes)
        return ExperimentConfig(**data)


@dataclass
class RunArtifacts:
    """Per-step records of one replication plus its audits."""

    replication: int
    seed: int
    records: dict
    windows: list
    etas: list
    realized_budget: float
    bad_event: dict | None = None
    optimism: dict | None = None
    coverage: dict | None = None
    value_bound: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def final_regret(self) -> float:
        return float(self.records["cum_regret"][-1])


def tune_parameters(num_states: int, horizon: int, per_arm_budget, total_budget: float,
                    eps_budget: float = 1e-12) -> tuple[list[int], list[float]]:
    """Window and exploration bonus per arm minimizing the regret bound's leading terms.

    ``W_i = |S| sqrt(T / sum_t B_{t,i})`` clamped to ``[1, T]`` and
    ``eta_i = sqrt(B W_i / T)``; a stationary instance (``B = 0``) gets
    ``W = T`` and ``eta = 1/T``.
    """
    per_arm_budget = np.atleast_1d(np.asarray(per_arm_budget, dtype=float))
    if total_budget <= 0.0:
        return [horizon] * per_arm_budget.shape[0], [1.0 / horizon] * per_arm_budget.shape[0]
    windows, etas = [], []
    for b in per_arm_budget:
        w = round(num_states * math.sqrt(horizon) / math.sqrt(max(b, eps_budget)))
        w = int(min(max(w, 1), horizon))
        windows.append(w)
        etas.append(math.sqrt(total_budget * w / horizon))
    return windows, etas


def replication_seed(master: int, replication: int) -> int:
    words = np.random.SeedSequence(entropy=int(master), spawn_key=(int(replication),)) \
        .generate_state(2, dtype=np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


def make_environment(cfg: ExperimentConfig, replication: int) -> EnvironmentSchedule:
    return generate_environment(cfg.rmab, cfg.target_budget, cfg.mode,
                                replication_seed(cfg.seed, replication), cfg.num_jumps)


def _per_arm(value, n: int, name: str) -> list:
    if isinstance(value, (list, tuple)):
        if len(value) != n:
            raise ConfigError(f"{name} list needs {n} entries, got {len(value)}")
        return list(value)
    return [value] * n


def resolve_windows(cfg: ExperimentConfig, env: EnvironmentSchedule) -> tuple[list[int], list[float]]:
    n, horizon = cfg.num_arms, cfg.horizon
    if cfg.policy == "stationary_whittle":
        return [horizon] * n, [1.0 / horizon] * n
    budget = realized_variation(env)
    tuned = tune_parameters(cfg.num_states, horizon, budget.per_arm, budget.total)
    windows = tuned[0] if cfg.window == "auto" else [int(w) for w in _per_arm(cfg.window, n, "window")]
    etas = tuned[1] if cfg.eta == "auto" else [float(e) for e in _per_arm(cfg.eta, n, "eta")]
    if any(w < 1 for w in windows) or any(e < 0 for e in etas):
        raise ConfigError("windows must be positive and etas nonnegative")
    return windows, etas


class _ValueMemo:
    """Per-arm policy values keyed on kernel version, multiplier and policy.

    Stationary stretches re-evaluate the same policies many times; the memo
    turns those linear solves into lookups. Results equal
    :func:`evaluate_policy_value` bit for bit.
    """

    def __init__(self, env: EnvironmentSchedule, budget: int, gamma: float, limit: int = 4096):
        self.env, self.budget, self.gamma, self.limit = env, budget, gamma, limit
        self._store: dict = {}

    def __call__(self, t: int, policies: np.ndarray, lam: float, states: np.ndarray) -> float:
        key = (self.env.version_at(t), lam, policies.dtype.str, policies.tobytes())
        v = self._store.get(key)
        if v is None:
            if len(self._store) >= self.limit:
                self._store.clear()
            v = policy_values(policies, self.env.kernels_at(t), self.env.rewards, lam, self.gamma)
            self._store[key] = v
        return float(v[np.arange(v.shape[0]), states].sum() + lam * self.budget / (1.0 - self.gamma))


def run_ns_whittle(cfg: ExperimentConfig, env: EnvironmentSchedule, replication: int = 0,
                   oracle_cache: OracleCache | None = None) -> RunArtifacts:
    """Run one replication of ``cfg.policy`` on ``env`` and record the regret trajectory.

    At each step the confidence sets are rebuilt from the windowed counts, the
    multiplier is searched with full per-arm EVI at every candidate, and the
    top arms by index are activated. Step 1 uses the all-passive initial
    policy unless ``initial_policy == 'solve'``.
    """
    started = time.perf_counter()
    rcfg = cfg.rmab
    n, n_s, horizon, K, gamma = cfg.num_arms, cfg.num_states, cfg.horizon, cfg.budget, cfg.discount
    if (env.num_arms, env.num_states, env.horizon) != (n, n_s, horizon):
        raise ConfigError("environment dimensions do not match the config")
    cap, stop = cfg.cap, cfg.evi_stop
    kappa = cfg.kappa if cfg.kappa is not None else default_kappa(cap)
    seed = env.seed
    windows, etas = resolve_windows(cfg, env)
    stats = [SlidingWindowStats(n_s, w) for w in windows]
    rngs = transition_streams(seed, n)
    policy_rng = stream(seed, "policy")
    state = initial_state(env, seed)
    oracle_cache = oracle_cache or OracleCache(env, K, gamma, cap, kappa, stop)
    values = _ValueMemo(env, K, gamma)
    learner = cfg.policy in ("ns_whittle", "stationary_whittle")
    audit = cfg.audit

    cols = {name: np.zeros(horizon) for name in ("v_opt", "v_alg", "gap", "cum_regret", "lambda_t")}
    cols.update({name: np.zeros(horizon, dtype=np.int64)
                 for name in ("active_count", "constraint_violation", "bad_event")})
    good_steps = np.ones(horizon, dtype=bool)
    optimism_ok = np.ones(horizon, dtype=bool)
    optimism_seen = np.zeros(horizon, dtype=bool)
    covered_all = True
    vmax = 0.0
    bound = rcfg.value_bound
    sol = None
    cum = 0.0
    solve_time = 0.0

    for t in range(1, horizon + 1):
        kernels = env.kernels_at(t)
        states = np.array(state.states, dtype=np.int64)
        if cfg.collapse_sets:
            sets = point_mass_sets(kernels)
        else:
            sets = build_confidence_arrays(stats, t, etas, rcfg)
        oracle = oracle_cache.get(t, state.states)
        violation = 0

        if learner:
            first = t == 1 and cfg.initial_policy == "passive" and not cfg.collapse_sets
            if first:
                lam_t = 0.0
                policies = np.zeros((n, n_s), dtype=np.int64)
                actions = np.zeros(n, dtype=np.int64)
                active = 0
            else:
                if sol is None or (t - 1) % cfg.solve_every == 0:
                    tic = time.perf_counter()
                    sol = solve_dual(sets, env.rewards, states, K, gamma, cap, kappa, stop)
                    solve_time += time.perf_counter() - tic
                lam_t = sol.lam
                indices = whittle_indices(sol.evi.q, states)
                decision = select_actions(indices, K)
                policies = sol.evi.greedy()
                actions, active = decision.actions, decision.active_count
                violation = max(int((indices >= 0).sum()) - K, 0)
        elif cfg.policy == "oracle":
            lam_t = oracle.lam
            indices = whittle_indices(oracle.q, states)
            policies = oracle.policies
            actions = oracle.actions
            active = int(actions.sum())
            violation = max(int((indices >= 0).sum()) - K, 0)
        else:
            lam_t = math.nan
            policies = np.full((n, n_s), K / n)
            actions = np.zeros(n, dtype=np.int64)
            actions[policy_rng.permutation(n)[:K]] = 1
            active = K

        v_opt = values(t, oracle.policies, oracle.lam, states)
        v_alg = values(t, policies, oracle.lam, states)
        gap = v_opt - v_alg
        cum += gap
        vmax = max(vmax, abs(v_opt), abs(v_alg))

        bad = False
        if audit and not cfg.collapse_sets:
            bad = not bool(sets.contains_all(kernels).all())
            good = True
            for i, st in enumerate(stats):
                avg, seen = window_average_truth(st)
                dist = np.abs(avg - sets.centers[i]).sum(axis=-1)
                good &= bool(np.all(dist[seen] <= sets.radius[i][seen]))
                # true kernel inside the eta=0 set on every visited row
                tdist = np.abs(kernels[i] - sets.centers[i]).sum(axis=-1)
                covered_all &= bool(np.all(tdist[seen] <= sets.radius[i][seen]))
            good_steps[t - 1] = good
            if learner and sol is not None:
                v_opt_bar = evaluate_policy_value(policies, sol.evi.kernel, env.rewards, oracle.lam,
                                                  gamma, K, states)
                vmax = max(vmax, abs(v_opt_bar))
                rec = optimism_audit(v_opt_bar, v_opt, good)
                optimism_seen[t - 1] = True
                optimism_ok[t - 1] = rec.holds

        cols["v_opt"][t - 1] = v_opt
        cols["v_alg"][t - 1] = v_alg
        cols["gap"][t - 1] = gap
        cols["cum_regret"][t - 1] = cum
        cols["lambda_t"][t - 1] = lam_t
        cols["active_count"][t - 1] = active
        cols["constraint_violation"][t - 1] = violation
        cols["bad_event"][t - 1] = int(bad)

        outcome = step(env, state, actions, rngs)
        for i in range(n):
            s, a = state.states[i], int(actions[i])
            stats[i].record(t, s, a, outcome.next_state.states[i],
                            kernels[i, s, a] if audit else None)
        state = outcome.next_state

    budget = realized_variation(env)
    art = RunArtifacts(replication=replication, seed=seed, records=cols, windows=windows,
                       etas=etas, realized_budget=budget.total)
    art.value_bound = {"max_abs_value": vmax, "bound": bound,
                       "violations": int(vmax > bound + VALUE_SLACK)}
    if audit and not cfg.collapse_sets:
        bea = bad_event_audit(cols["bad_event"].astype(bool), min(windows), budget.total, min(etas))
        good_run = bool(good_steps.all())
        art.bad_event = {"q_t": bea.q_t, "q_tilde_size": len(bea.q_tilde), "window": bea.window,
                         "budget": bea.budget, "eta": bea.eta, "bound": bea.bound,
                         "holds": bea.holds, "good_event": good_run}
        audited = optimism_seen & good_steps
        art.optimism = {"steps": int(optimism_seen.sum()), "good_steps": int(audited.sum()),
                        "violations": int((optimism_seen & ~optimism_ok).sum()),
                        "good_step_violations": int((audited & ~optimism_ok).sum())}
        art.coverage = {"true_kernel_covered": covered_all, "good_event": good_run}
    art.timings = {"total_s": time.perf_counter() - started, "solve_s": solve_time,
                   "oracle_solves": oracle_cache.misses}
    return art


def run_baseline(cfg: ExperimentConfig, env: EnvironmentSchedule, policy: str,
                 replication: int = 0, oracle_cache: OracleCache | None = None) -> RunArtifacts:
    if policy not in ("random", "oracle", "stationary_whittle"):
        raise ConfigError(f"unknown baseline {policy!r}")
    return run_ns_whittle(cfg.replace(policy=policy), env, replication, oracle_cache)


def run_replication(cfg: ExperimentConfig, replication: int) -> RunArtifacts:
    env = make_environment(cfg, replication)
    return run_ns_whittle(cfg, env, replication)


def run_experiment(cfg: ExperimentConfig) -> list[RunArtifacts]:
    """All replications, merged in replication order whatever the worker count."""
    reps = range(cfg.replications)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(run_replication, [cfg] * cfg.replications, reps))
    return [run_replication(cfg, r) for r in reps]


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(int(value))


def write_regret_csv(artifacts: list[RunArtifacts], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(CSV_COLUMNS)
        for art in artifacts:
            rec = art.records
            for k in range(rec["gap"].shape[0]):
                writer.writerow([str(art.replication), str(k + 1)]
                                + [_fmt(rec[c][k]) for c in CSV_COLUMNS[2:]])


def emit_results(artifacts: list[RunArtifacts], cfg: ExperimentConfig, path: str | Path) -> Path:
    """Write ``regret.csv``, ``audit.json`` and ``config.json`` into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    write_regret_csv(artifacts, out / "regret.csv")
    audit = {
        "replications": [
            {"replication": a.replication, "bad_event": a.bad_event, "optimism": a.optimism,
             "coverage": a.coverage, "value_bound": a.value_bound}
            for a in artifacts
        ],
    }
    (out / "audit.json").write_text(json.dumps(audit, indent=2, sort_keys=True))
    snapshot = {
        "config": asdict(cfg),
        "resolved": [
            {"replication": a.replication, "env_seed": a.seed, "windows": a.windows,
             "etas": a.etas, "realized_budget": a.realized_budget, "timings": a.timings}
            for a in artifacts
        ],
        "env_reference": {"mode": cfg.mode, "target_budget": cfg.target_budget,
                          "master_seed": cfg.seed, "generator": "generate_environment"},
    }
    (out / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True))
    return out


def load_regret_csv(path: str | Path) -> dict[int, dict[str, np.ndarray]]:
    """Parse ``regret.csv`` into per-replication column arrays."""
    rows: dict[int, dict[str, list]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rep = rows.setdefault(int(row["replication"]), {c: [] for c in CSV_COLUMNS})
            for c in CSV_COLUMNS:
                rep[c].append(float(row[c]))
    return {r: {c: np.array(v) for c, v in cols.items()} for r, cols in rows.items()}


def audit_run(directory: str | Path) -> list[str]:
    """Re-verify emitted files; returns a list of failure messages (empty when clean)."""
    directory = Path(directory)
    cfg_data = json.loads((directory / "config.json").read_text())["config"]
    audit = json.loads((directory / "audit.json").read_text())
    cfg = ExperimentConfig.from_dict(cfg_data)
    data = load_regret_csv(directory / "regret.csv")
    failures = []
    if sorted(data) != list(range(cfg.replications)):
        failures.append(f"expected replications 0..{cfg.replications - 1}, found {sorted(data)}")
    bound = cfg.rmab.value_bound + VALUE_SLACK
    for rep, cols in sorted(data.items()):
        if cols["t"].shape[0] != cfg.horizon:
            failures.append(f"replication {rep}: {cols['t'].shape[0]} rows, expected {cfg.horizon}")
        cum = 0.0
        for k, gap in enumerate(cols["gap"]):
            cum += gap
            if cum != cols["cum_regret"][k]:
                failures.append(f"replication {rep}: cum_regret differs from prefix sum at t={k + 1}")
                break
        if np.any(cols["active_count"] > cfg.budget):
            failures.append(f"replication {rep}: more than K={cfg.budget} activations")
        if np.any(np.abs(cols["v_opt"]) > bound) or np.any(np.abs(cols["v_alg"]) > bound):
            failures.append(f"replication {rep}: value outside the N(1+U)/(1-gamma) bound")
    for entry in audit["replications"]:
        bea = entry.get("bad_event")
        if bea and bea["good_event"] and not bea["holds"]:
            failures.append(f"replication {entry['replication']}: bad-event set exceeds W*B/eta")
        if entry["value_bound"].get("violations"):
            failures.append(f"replication {entry['replication']}: value bound violated")
    return failures
