"""Seeded experiment runs, sweeps and theory-check reports.

A run config names an environment (generation parameters, an inline spec or
a spec file), an agent, a horizon and a list of seeds.  Every seed gets
independent context, noise and agent substreams, so two agents run with the
same seed see identical contexts and noise.

Artifacts of a run directory::

    config.json    full config snapshot (defaults filled in)
    spec.json      the environment instance (absent with per-seed specs)
    metrics.csv    one row per (seed, checkpoint)
    summary.json   final metrics, instrumentation and across-seed aggregates
    regret.svg     rendered from metrics.csv alone
    traces/        per-round CSVs, only when tracing is on
"""
from __future__ import annotations

import copy
import itertools
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import jsonio
from .agents import AgentConfig, make_agent, reward_ucb, screen_bounds
from .environment import (COST_TOL, ContextDistribution, EnvironmentSpec, best_feasible,
                          draw_context, dump_spec, generate_spec, load_spec, pull)
from .errors import ConfigurationError
from .linear_model import compute_beta
from .metrics import (CSV_SCHEMA, RoundRecord, RunMetrics, checkpoint_rows, fit_exponent,
                      metrics_columns, powers_of_two_schedule, render_csv, round_regret_shares,
                      sublinearity_summary)
from .rng import derive_seed, stream
from .theory import (audit_family, family_member_spec, gap_check, gap_sweep,
                     generate_hard_family, tightness_instance)

OUTPUT_ROOT_ENV = "HCUCB_OUTPUT_ROOT"
CONFIG_FORMAT = "hcucb-run-config"
SWEEP_FORMAT = "hcucb-sweep-config"
TRACE_SCHEMA = "hcucb-trace-csv v1"
SWEEP_SCHEMA = "hcucb-sweep-csv v1"
CURVES_SCHEMA = "hcucb-sweep-curves-csv v1"
GAP_SCHEMA = "hcucb-gapcheck-csv v1"
MAX_SEED = 2**64 - 1
DECOMPOSITION_TOL = 1e-9

DEFAULT_ENVIRONMENT = {
    "dim": 5,
    "levels": 2,
    "actions_per_level": [3, 4],
    "thresholds": [0.5, 0.5],
    "noise_sigma": 0.1,
    "seed": 42,
    "context_distribution": {"kind": "uniform-ball"},
    "noise_kind": "gaussian",
    "value_range": "symmetric",
    "action_mask": None,
    "allow_threshold_inflation": True,
}
ENVIRONMENT_KEYS = set(DEFAULT_ENVIRONMENT)


# --------------------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    environment: dict = field(default_factory=lambda: dict(DEFAULT_ENVIRONMENT))
    agent: AgentConfig = field(default_factory=AgentConfig)
    horizon: int = 1000
    seeds: tuple = (0,)
    output_dir: str = "runs/default"
    checkpoint_schedule: Any = "powers-of-two"
    run_id: str = "run"
    trace: bool = False
    instrument: bool = True
    per_seed_spec: bool = False
    fit_min_t: int = 1

    def checkpoints(self) -> list[int]:
        if self.checkpoint_schedule == "powers-of-two":
            return powers_of_two_schedule(self.horizon)
        return sorted(set(int(t) for t in self.checkpoint_schedule))

    def to_dict(self) -> dict:
        return {
            "format": CONFIG_FORMAT,
            "run_id": self.run_id,
            "environment": copy.deepcopy(self.environment),
            "agent": self.agent.to_dict(),
            "horizon": self.horizon,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "checkpoint_schedule": (self.checkpoint_schedule if isinstance(self.checkpoint_schedule, str)
                                    else list(self.checkpoint_schedule)),
            "trace": self.trace,
            "instrument": self.instrument,
            "per_seed_spec": self.per_seed_spec,
            "fit_min_t": self.fit_min_t,
        }


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _require(ok: bool, name: str, message: str) -> None:
    if not ok:
        raise ConfigurationError(f"{name} {message}")


def _validate_environment(env) -> dict:
    _require(isinstance(env, dict), "environment", "must be an object")
    if "spec" in env or "spec_file" in env:
        _require(len(env) == 1, "environment", "with 'spec' or 'spec_file' takes no other fields")
        if "spec_file" in env:
            _require(isinstance(env["spec_file"], str), "environment.spec_file", "must be a path string")
            try:
                load_spec(env["spec_file"])
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigurationError(f"environment.spec_file cannot be read: {exc}") from exc
        else:
            EnvironmentSpec.from_dict(env["spec"])
        return copy.deepcopy(env)
    unknown = set(env) - ENVIRONMENT_KEYS
    _require(not unknown, "environment", f"has unknown fields {sorted(unknown)}")
    out = copy.deepcopy(DEFAULT_ENVIRONMENT)
    out.update(copy.deepcopy(env))
    _require(_is_int(out["dim"]) and out["dim"] >= 1, "environment.dim", "must be a positive integer")
    _require(_is_int(out["levels"]) and out["levels"] >= 1, "environment.levels",
             "must be a positive integer")
    apl = out["actions_per_level"]
    _require(isinstance(apl, list) and len(apl) == out["levels"] and all(_is_int(k) and k >= 1 for k in apl),
             "environment.actions_per_level", "must list one positive integer per level")
    thr = out["thresholds"]
    _require(isinstance(thr, list) and len(thr) == out["levels"], "environment.thresholds",
             "must list one value per level")
    parsed = []
    for t in thr:
        if isinstance(t, str) and t in ("+inf", "inf"):
            parsed.append(math.inf)
        else:
            _require(isinstance(t, (int, float)) and not isinstance(t, bool) and math.isfinite(t),
                     "environment.thresholds", "entries must be finite numbers or '+inf'")
            parsed.append(float(t))
    sigma = out["noise_sigma"]
    _require(isinstance(sigma, (int, float)) and not isinstance(sigma, bool) and sigma >= 0
             and math.isfinite(sigma), "environment.noise_sigma", "must be a finite non-negative number")
    _require(_is_int(out["seed"]) and 0 <= out["seed"] <= MAX_SEED, "environment.seed",
             "must be a 64-bit unsigned integer")
    try:
        ContextDistribution.from_dict(out["context_distribution"])
    except (ConfigurationError, TypeError, KeyError) as exc:
        raise ConfigurationError(f"environment.context_distribution is invalid: {exc}") from exc
    _require(out["noise_kind"] in ("gaussian", "uniform"), "environment.noise_kind",
             "must be 'gaussian' or 'uniform'")
    _require(out["value_range"] in ("symmetric", "unit"), "environment.value_range",
             "must be 'symmetric' or 'unit'")
    mask_from_list(out["action_mask"])
    _require(isinstance(out["allow_threshold_inflation"], bool), "environment.allow_threshold_inflation",
             "must be true or false")
    return out


def validate_config(raw: dict) -> RunConfig:
    """Check a run config object and fill in defaults.

    Every error names the offending field.
    """
    _require(isinstance(raw, dict), "config", "must be an object")
    raw = dict(raw)
    fmt = raw.pop("format", CONFIG_FORMAT)
    _require(fmt == CONFIG_FORMAT, "format", f"must be {CONFIG_FORMAT!r}")
    allowed = set(RunConfig.__dataclass_fields__)
    unknown = set(raw) - allowed
    _require(not unknown, "config", f"has unknown fields {sorted(unknown)}")
    env = _validate_environment(raw.get("environment", {}))
    agent_raw = raw.get("agent", {})
    _require(isinstance(agent_raw, dict), "agent", "must be an object")
    try:
        agent = AgentConfig.from_dict(agent_raw)
    except TypeError as exc:
        raise ConfigurationError(f"agent is invalid: {exc}") from exc
    horizon = raw.get("horizon", 1000)
    _require(_is_int(horizon) and horizon >= 1, "horizon", f"must be an integer >= 1, got {horizon!r}")
    seeds = raw.get("seeds", [0])
    _require(isinstance(seeds, (list, tuple)) and len(seeds) > 0, "seeds", "must be a non-empty list")
    _require(all(_is_int(s) and 0 <= s <= MAX_SEED for s in seeds), "seeds",
             "entries must be 64-bit unsigned integers")
    _require(len(set(seeds)) == len(seeds), "seeds", "must not repeat")
    output_dir = raw.get("output_dir", "runs/default")
    _require(isinstance(output_dir, str) and output_dir != "", "output_dir", "must be a non-empty path")
    sched = raw.get("checkpoint_schedule", "powers-of-two")
    if isinstance(sched, str):
        _require(sched == "powers-of-two", "checkpoint_schedule",
                 "must be 'powers-of-two' or a list of rounds")
    else:
        _require(isinstance(sched, list) and len(sched) > 0
                 and all(_is_int(t) and 1 <= t <= horizon for t in sched),
                 "checkpoint_schedule", f"entries must be integers in [1, {horizon}]")
        sched = tuple(sorted(set(int(t) for t in sched)))
    run_id = raw.get("run_id", "run")
    _require(isinstance(run_id, str) and run_id != "" and "," not in run_id, "run_id",
             "must be a non-empty string without commas")
    flags = {}
    for name, default in (("trace", False), ("instrument", True), ("per_seed_spec", False)):
        flags[name] = raw.get(name, default)
        _require(isinstance(flags[name], bool), name, "must be true or false")
    _require(not (flags["per_seed_spec"] and ("spec" in env or "spec_file" in env)), "per_seed_spec",
             "needs generation parameters, not a fixed spec")
    fit_min_t = raw.get("fit_min_t", 1)
    _require(_is_int(fit_min_t) and fit_min_t >= 1, "fit_min_t", "must be a positive integer")
    return RunConfig(environment=env, agent=agent, horizon=int(horizon), seeds=tuple(int(s) for s in seeds),
                     output_dir=output_dir, checkpoint_schedule=sched, run_id=run_id,
                     fit_min_t=int(fit_min_t), **flags)


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Set dotted keys (``agent.delta``) on a copy of ``raw``."""
    out = copy.deepcopy(raw)
    for key, value in overrides.items():
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"cannot set {key}: {p} is not an object")
        node[parts[-1]] = copy.deepcopy(value)
    return out


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc


def resolve_output_dir(output_dir: str) -> Path:
    """Relative output paths are placed under ``$HCUCB_OUTPUT_ROOT`` when it is set."""
    p = Path(output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def ensure_writable(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path, prefix=".probe-"):
            pass
    except OSError as exc:
        raise ConfigurationError(f"output_dir {str(path)!r} is not writable: {exc}") from exc
    return path


def build_spec(environment: dict, seed_override: Optional[int] = None) -> EnvironmentSpec:
    if "spec" in environment:
        return EnvironmentSpec.from_dict(environment["spec"])
    if "spec_file" in environment:
        return load_spec(environment["spec_file"])
    env = environment
    thresholds = [math.inf if isinstance(t, str) else float(t) for t in env["thresholds"]]
    return generate_spec(env["dim"], env["levels"], env["actions_per_level"], thresholds,
                         env["noise_sigma"], env["seed"] if seed_override is None else seed_override,
                         context_distribution=env["context_distribution"], noise_kind=env["noise_kind"],
                         value_range=env["value_range"], action_mask=mask_from_list(env["action_mask"]),
                         allow_threshold_inflation=env["allow_threshold_inflation"])


def mask_from_list(entries) -> Optional[dict]:
    """``[{"prefix": [...], "allowed": [...]}, ...]`` as a prefix-keyed mask."""
    if not entries:
        return None
    try:
        return {tuple(e["prefix"]): tuple(e["allowed"]) for e in entries}
    except (TypeError, KeyError) as exc:
        raise ConfigurationError("environment.action_mask entries need 'prefix' and 'allowed'") from exc


def spec_seed_for(config: RunConfig, seed: int) -> Optional[int]:
    if not config.per_seed_spec:
        return None
    return derive_seed(config.environment["seed"], "spec-per-seed", seed & 0xFFFFFFFF, seed >> 32)


# --------------------------------------------------------------------------- simulation

@dataclass
class Instrumentation:
    """Per-trajectory checks that hold deterministically or with probability 1 - delta."""

    reward_exit_round: Optional[int] = None
    cost_exit_round: Optional[int] = None
    screen_checks: int = 0
    screen_failures: int = 0
    optimism_checks: int = 0
    optimism_failures: int = 0
    potential_max_ratio: float = 0.0
    potential_violations: int = 0
    decomposition_error: float = 0.0

    @property
    def exited(self) -> bool:
        return self.reward_exit_round is not None or self.cost_exit_round is not None

    @property
    def invariant_violations(self) -> int:
        return (self.screen_failures + self.optimism_failures + self.potential_violations
                + int(self.decomposition_error > DECOMPOSITION_TOL))

    def to_dict(self) -> dict:
        return {
            "reward_exit_round": self.reward_exit_round,
            "cost_exit_round": self.cost_exit_round,
            "coverage_exit": self.exited,
            "screen_checks": self.screen_checks,
            "screen_failures": self.screen_failures,
            "optimism_checks": self.optimism_checks,
            "optimism_failures": self.optimism_failures,
            "potential_max_ratio": self.potential_max_ratio,
            "potential_violations": self.potential_violations,
            "decomposition_error": self.decomposition_error,
            "invariant_violations": self.invariant_violations,
        }


@dataclass
class SeedResult:
    seed: int
    spec_seed: Optional[int]
    metrics: RunMetrics
    instrumentation: Optional[Instrumentation]
    trace_rows: Optional[list] = None


def potential_bound(dim: int, lam: float, n: int) -> float:
    return 2.0 * dim * math.log1p(n / (lam * dim))


class _Coverage:
    """Tracks which models currently contain their true parameter."""

    def __init__(self, agent, spec: EnvironmentSpec) -> None:
        self.state = agent.state
        self.spec = spec
        cfg = self.state.confidence
        beta0 = compute_beta(cfg, 0)
        lam = cfg.lam
        self.reward_out = set(np.flatnonzero(math.sqrt(lam) * np.linalg.norm(spec.reward_matrix, axis=1)
                                             > beta0).tolist())
        self.cost_out = set()
        for h in range(spec.levels):
            norms = np.linalg.norm(spec.cost_params[h].reshape(-1, spec.dim), axis=1)
            self.cost_out.update((h, int(i)) for i in np.flatnonzero(math.sqrt(lam) * norms > beta0))

    @property
    def all_inside(self) -> bool:
        return not self.reward_out and not self.cost_out

    def _inside(self, model, truth) -> bool:
        return model.ellipsoid_norm(truth) <= compute_beta(self.state.confidence, model.count)

    def refresh(self, action: tuple) -> tuple[bool, bool]:
        spec, state = self.spec, self.state
        idx = spec.action_space.full_index(action)
        if self._inside(state.reward_models[idx], spec.reward_params[action]):
            self.reward_out.discard(idx)
        else:
            self.reward_out.add(idx)
        for h in range(spec.levels):
            prefix = action[: h + 1]
            key = (h, state.space.prefix_index(prefix))
            if self._inside(state.cost_models[h][key[1]], spec.cost_params[h][prefix]):
                self.cost_out.discard(key)
            else:
                self.cost_out.add(key)
        return bool(self.reward_out), bool(self.cost_out)


def _trace_columns(spec: EnvironmentSpec) -> list[str]:
    return (["run_id", "seed", "t"] + [f"x_{i + 1}" for i in range(spec.dim)]
            + [f"a_{h + 1}" for h in range(spec.levels)] + ["reward"]
            + [f"cost_l{h + 1}" for h in range(spec.levels)] + ["expected_reward"]
            + [f"expected_cost_l{h + 1}" for h in range(spec.levels)] + ["fallback", "regret"])


def simulate(spec: EnvironmentSpec, agent_config: AgentConfig, seed: int, horizon: int,
             checkpoints: Sequence[int], *, instrument: bool = False, trace: bool = False,
             run_id: str = "run", spec_seed: Optional[int] = None) -> SeedResult:
    """One trajectory: context, select, pull, update, accumulate for ``t = 1..horizon``."""
    ctx_rng = stream(seed, "context")
    noise_rng = stream(seed, "noise")
    agent = make_agent(agent_config, spec, stream(seed, "agent"))
    metrics = RunMetrics(spec.levels, checkpoints)
    inst = Instrumentation() if instrument else None
    model_based = agent.kind not in ("uniform-random", "oracle")
    coverage = _Coverage(agent, spec) if instrument and model_based else None
    check_screen = agent.kind == "hcucb" and agent_config.constraint_mode == "conservative-ucb"
    check_optimism = agent.kind in ("hcucb", "unconstrained-ucb") and agent_config.lookahead == "screened"
    thresholds = np.asarray(agent.thresholds)
    rows = [] if trace else None
    for t in range(1, horizon + 1):
        x = draw_context(spec, ctx_rng)
        decision = agent.select(x)
        if coverage is not None and coverage.all_inside:
            _check_round(inst, agent, spec, x, decision, thresholds, check_screen, check_optimism)
        obs = pull(spec, x, decision.action, noise_rng)
        agent.update(x, decision, obs)
        if coverage is not None:
            r_out, c_out = coverage.refresh(decision.action)
            if r_out and inst.reward_exit_round is None:
                inst.reward_exit_round = t
            if c_out and inst.cost_exit_round is None:
                inst.cost_exit_round = t
        record = RoundRecord(t, x, decision.action, decision.fallback_used, obs)
        if rows is not None:
            before = metrics.cumulative_regret
        metrics.accumulate(record, spec)
        if rows is not None:
            rows.append([run_id, seed, t, *x.tolist(), *decision.action, obs.reward, *obs.costs,
                         obs.expected_reward, *obs.expected_costs, int(decision.fallback_used),
                         metrics.cumulative_regret - before])
    if inst is not None:
        if model_based:
            _check_potentials(inst, agent)
        total = metrics.regret_high + metrics.regret_low
        inst.decomposition_error = abs(total - metrics.cumulative_regret) / max(1.0, metrics.cumulative_regret)
    return SeedResult(seed, spec_seed, metrics, inst, rows)


def _check_round(inst, agent, spec, x, decision, thresholds, check_screen, check_optimism) -> None:
    state = agent.state
    if check_screen and not decision.fallback_used:
        inst.screen_checks += 1
        _, costs = spec.expected_all(x)
        idx = spec.action_space.full_index(decision.action)
        if np.any(costs[:, idx] > thresholds + COST_TOL):
            inst.screen_failures += 1
    if check_optimism:
        if agent.kind == "hcucb":
            best = best_feasible(spec, x)
        else:
            rewards, _ = spec.expected_all(x)
            allowed = spec.action_space.full_allowed.reshape(-1)
            idx = int(np.argmax(np.where(allowed, rewards, -np.inf)))
            best = (tuple(int(a) for a in spec.action_space.all_actions[idx]), float(rewards[idx]))
        if best is None:
            return
        action, value = best
        if np.all(np.asarray(screen_bounds(state, x, action)) <= thresholds):
            inst.optimism_checks += 1
            if reward_ucb(state, x, decision.action) < value - 1e-9:
                inst.optimism_failures += 1


def _check_potentials(inst: Instrumentation, agent) -> None:
    state = agent.state
    cfg = state.confidence
    banks = [state.reward_models, *state.cost_models]
    for bank in banks:
        for n, pot in zip(bank.counts, bank.potentials):
            if n == 0:
                continue
            bound = potential_bound(cfg.dim, cfg.lam, int(n))
            inst.potential_max_ratio = max(inst.potential_max_ratio, float(pot) / bound)
            if pot > bound:
                inst.potential_violations += 1


# --------------------------------------------------------------------------- runs

@dataclass
class RunResult:
    config: RunConfig
    spec: Optional[EnvironmentSpec]
    seeds: list
    summary: dict


def _mean_se(values: Sequence[float]) -> tuple[float, Optional[float]]:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else None
    return mean, se


def _seed_summary(res: SeedResult, fit_min_t: int) -> dict:
    m = res.metrics
    try:
        sub = sublinearity_summary(m, min_t=fit_min_t)
        exponent = sub["exponent"]
    except ValueError:
        exponent = None
    out = {
        "seed": res.seed,
        "spec_seed": res.spec_seed,
        "regret": m.cumulative_regret,
        "regret_high": m.regret_high,
        "regret_low": m.regret_low,
        "regret_by_level": list(m.regret_by_level),
        "unconstrained_regret": m.unconstrained_regret,
        "cumulative_expected_reward": m.cumulative_expected_reward,
        "violations": list(m.violations),
        "violations_nonfallback": list(m.violations_nonfallback),
        "violating_rounds_nonfallback": m.violating_rounds_nonfallback,
        "fallback_rounds": m.fallback_rounds,
        "infeasible_rounds": m.infeasible_rounds,
        "exponent": exponent,
    }
    if res.instrumentation is not None:
        out["instrumentation"] = res.instrumentation.to_dict()
    return out


def _aggregate(config: RunConfig, results: list[SeedResult]) -> dict:
    finals = [r.metrics.cumulative_regret for r in results]
    mean_r, se_r = _mean_se(finals)
    cps = config.checkpoints()
    curve = [float(np.mean([r.metrics.checkpoints[i]["regret"] for r in results])) for i in range(len(cps))]
    fit_ts = [t for t in cps if t >= config.fit_min_t]
    fit_vals = [v for t, v in zip(cps, curve) if t >= config.fit_min_t]
    agg = {
        "n_seeds": len(results),
        "mean_regret": mean_r,
        "se_regret": se_r,
        "mean_unconstrained_regret": float(np.mean([r.metrics.unconstrained_regret for r in results])),
        "checkpoints": cps,
        "mean_regret_curve": curve,
        "mean_avg_regret_curve": [v / t for v, t in zip(curve, cps)],
        "mean_curve_exponent": fit_exponent(fit_ts, fit_vals) if len(fit_ts) >= 2 else None,
        "mean_violations": [float(np.mean([r.metrics.violations[h] for r in results]))
                            for h in range(results[0].metrics.levels)],
        "fraction_runs_nonfallback_violation": float(np.mean(
            [r.metrics.violating_rounds_nonfallback > 0 for r in results])),
        "mean_fallback_rounds": float(np.mean([r.metrics.fallback_rounds for r in results])),
    }
    insts = [r.instrumentation for r in results if r.instrumentation is not None]
    if insts:
        agg["fraction_runs_coverage_exit"] = float(np.mean([i.exited for i in insts]))
        agg["fraction_runs_reward_exit"] = float(np.mean([i.reward_exit_round is not None for i in insts]))
        agg["invariant_violations"] = int(sum(i.invariant_violations for i in insts))
        agg["potential_max_ratio"] = float(max(i.potential_max_ratio for i in insts))
    return agg


def _run_seed(args) -> SeedResult:
    config, spec, seed = args
    spec_seed = spec_seed_for(config, seed)
    if spec_seed is not None:
        spec = build_spec(config.environment, spec_seed)
    return simulate(spec, config.agent, seed, config.horizon, config.checkpoints(),
                    instrument=config.instrument, trace=config.trace, run_id=config.run_id,
                    spec_seed=spec_seed)


def compute_run(config: RunConfig, jobs: int = 1) -> RunResult:
    """Simulate every seed of ``config`` without touching the filesystem."""
    spec = None if config.per_seed_spec else build_spec(config.environment)
    tasks = [(config, spec, s) for s in config.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed, tasks))
    else:
        results = [_run_seed(t) for t in tasks]
    summary = {
        "run_id": config.run_id,
        "agent": config.agent.kind,
        "horizon": config.horizon,
        "csv_schema": CSV_SCHEMA,
        "aggregate": _aggregate(config, results),
        "seeds": [_seed_summary(r, config.fit_min_t) for r in results],
    }
    return RunResult(config, spec, results, summary)


@dataclass
class RunArtifact:
    directory: Path
    config_path: Path
    metrics_path: Path
    summary_path: Path
    svg_path: Path
    spec_path: Optional[Path]
    trace_paths: list
    summary: dict

    @property
    def invariant_violations(self) -> int:
        return int(self.summary["aggregate"].get("invariant_violations", 0))


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def write_run(result: RunResult, directory) -> RunArtifact:
    from .plotting import regret_curves_svg

    out = ensure_writable(Path(directory))
    config = result.config
    levels = result.seeds[0].metrics.levels
    config_path = _write(out / "config.json", jsonio.dumps(config.to_dict()))
    spec_path = _write(out / "spec.json", dump_spec(result.spec)) if result.spec is not None else None
    rows = []
    for r in result.seeds:
        rows.extend(checkpoint_rows(r.metrics, config.run_id, r.seed))
    metrics_path = _write(out / "metrics.csv", render_csv(metrics_columns(levels), rows))
    summary_path = _write(out / "summary.json", jsonio.dumps(_json_safe(result.summary)))
    trace_paths = []
    if config.trace:
        (out / "traces").mkdir(exist_ok=True)
        for r in result.seeds:
            spec = result.spec or build_spec(config.environment, r.spec_seed)
            trace_paths.append(_write(out / "traces" / f"seed-{r.seed}.csv",
                                      render_csv(_trace_columns(spec), r.trace_rows, TRACE_SCHEMA)))
    svg_path = regret_curves_svg(metrics_path, out / "regret.svg")
    return RunArtifact(out, config_path, metrics_path, summary_path, svg_path, spec_path, trace_paths,
                       result.summary)


def run(config: RunConfig, jobs: int = 1) -> RunArtifact:
    """Validate the output location, simulate all seeds and write the artifacts."""
    directory = ensure_writable(resolve_output_dir(config.output_dir))
    return write_run(compute_run(config, jobs), directory)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# --------------------------------------------------------------------------- sweeps

@dataclass
class SweepCell:
    cell: str
    params: dict
    config: Optional[RunConfig]
    error: Optional[str] = None
    result: Optional[RunResult] = None


def expand_sweep(raw: dict) -> tuple[dict, list[SweepCell], Path]:
    """Cells of a sweep config: the grid's cartesian product applied to ``base``.

    ``grid`` maps dotted config keys to value lists; ``cells`` may instead
    list explicit override objects.  Invalid cells are kept with their error.
    """
    _require(isinstance(raw, dict), "sweep", "must be an object")
    raw = dict(raw)
    fmt = raw.pop("format", SWEEP_FORMAT)
    _require(fmt == SWEEP_FORMAT, "format", f"must be {SWEEP_FORMAT!r}")
    unknown = set(raw) - {"base", "grid", "cells", "output_dir"}
    _require(not unknown, "sweep", f"has unknown fields {sorted(unknown)}")
    base = raw.get("base", {})
    _require(isinstance(base, dict), "base", "must be an object")
    grid = raw.get("grid")
    cells_raw = raw.get("cells")
    _require((grid is None) != (cells_raw is None), "sweep", "needs exactly one of 'grid' or 'cells'")
    if grid is not None:
        _require(isinstance(grid, dict) and len(grid) > 0, "grid", "must map at least one key to values")
        for k, vals in grid.items():
            _require(isinstance(vals, list) and len(vals) > 0, f"grid.{k}", "must be a non-empty list")
        keys = list(grid)
        overrides = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    else:
        _require(isinstance(cells_raw, list) and len(cells_raw) > 0
                 and all(isinstance(c, dict) for c in cells_raw), "cells",
                 "must be a non-empty list of override objects")
        overrides = [dict(c) for c in cells_raw]
    out_dir = raw.get("output_dir", base.get("output_dir", "sweeps/default"))
    _require(isinstance(out_dir, str) and out_dir != "", "output_dir", "must be a non-empty path")
    cells = []
    for i, ov in enumerate(overrides):
        name = f"cell-{i:03d}"
        merged = apply_overrides(base, ov)
        merged["output_dir"] = str(Path(out_dir) / "cells" / name)
        merged.setdefault("run_id", name)
        try:
            cfg = validate_config(merged)
            cells.append(SweepCell(name, ov, cfg))
        except ConfigurationError as exc:
            cells.append(SweepCell(name, ov, None, error=str(exc)))
    return base, cells, Path(out_dir)


def _compute_cell(cell: SweepCell) -> SweepCell:
    if cell.config is None:
        return cell
    try:
        cell.result = compute_run(cell.config)
    except Exception as exc:  # recorded per cell; the sweep carries on
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def _label(params: dict) -> str:
    return " ".join(f"{k.split('.')[-1]}={v}" for k, v in params.items())


@dataclass
class SweepArtifact:
    directory: Path
    aggregate_path: Path
    curves_path: Path
    svg_path: Path
    cells: list

    @property
    def failed(self) -> int:
        return sum(c.error is not None for c in self.cells)


def sweep(raw: dict, jobs: int = 1, output_dir: Optional[str] = None) -> SweepArtifact:
    """Run every cell, write per-cell artifacts and the aggregate CSV and SVG."""
    from .plotting import comparison_svg

    if output_dir is not None:
        raw = dict(raw, output_dir=output_dir)
    _, cells, out_dir = expand_sweep(raw)
    directory = ensure_writable(resolve_output_dir(str(out_dir)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_compute_cell, cells))
    else:
        cells = [_compute_cell(c) for c in cells]
    keys: list = []
    for c in cells:
        keys.extend(k for k in c.params if k not in keys)
    max_levels = max((c.result.seeds[0].metrics.levels for c in cells if c.result), default=0)
    columns = (["cell", *keys, "status", "n_seeds", "mean_regret", "se_regret"]
               + [f"{s}_violations_l{h + 1}" for h in range(max_levels) for s in ("mean", "se")]
               + ["mean_fallback_rounds", "error"])
    rows, curve_rows = [], []
    for c in cells:
        params = [json.dumps(c.params[k]) if k in c.params else "" for k in keys]
        if c.result is None:
            rows.append([c.cell, *params, "failed", 0, "", ""] + [""] * (2 * max_levels) + ["", c.error])
            continue
        write_run(c.result, directory / "cells" / c.cell)
        seeds = c.result.seeds
        mean_r, se_r = _mean_se([s.metrics.cumulative_regret for s in seeds])
        viol = []
        levels = seeds[0].metrics.levels
        for h in range(max_levels):
            if h < levels:
                m, se = _mean_se([s.metrics.violations[h] for s in seeds])
                viol += [m, "" if se is None else se]
            else:
                viol += ["", ""]
        fb = float(np.mean([s.metrics.fallback_rounds for s in seeds]))
        rows.append([c.cell, *params, "ok", len(seeds), mean_r, "" if se_r is None else se_r, *viol, fb, ""])
        for i, t in enumerate(c.config.checkpoints()):
            m, se = _mean_se([s.metrics.checkpoints[i]["regret"] for s in seeds])
            curve_rows.append([c.cell, _label(c.params), t, m, "" if se is None else se])
    aggregate_path = _write(directory / "sweep.csv", render_csv(columns, rows, SWEEP_SCHEMA))
    curves_path = _write(directory / "sweep_curves.csv",
                         render_csv(["cell", "label", "t", "mean_regret", "se_regret"], curve_rows,
                                    CURVES_SCHEMA))
    svg_path = comparison_svg(curves_path, directory / "comparison.svg")
    return SweepArtifact(directory, aggregate_path, curves_path, svg_path, cells)


# --------------------------------------------------------------------------- theory reports

GAP_COLUMNS = ["pair", "kind", "states", "actions", "high_states", "high_actions", "gamma", "gap",
               "min_gap", "epsilon", "bound", "ratio", "bound_2eps", "within_2eps", "epsilon_measured",
               "ratio_measured"]


def gapcheck_report(count: int, states: int = 8, actions: int = 3, high_states: int = 3,
                    high_actions: int = 2, gamma: float = 0.9, seed: int = 0,
                    tightness: bool = False) -> tuple[list, dict]:
    """Rows for the gap CSV and a JSON summary.

    With ``tightness`` every pair is the hidden-optimum construction with a
    per-step loss drawn from the ``mdp`` stream; ``epsilon`` and ``ratio``
    then refer to that nominal loss.
    """
    for name, v, lo in (("count", count, 1), ("states", states, 1), ("actions", actions, 1),
                        ("high_states", high_states, 1), ("high_actions", high_actions, 1)):
        _require(_is_int(v) and v >= lo, name, f"must be an integer >= {lo}, got {v!r}")
    _require(high_states <= states, "high_states", "must not exceed states")
    _require(high_actions <= actions, "high_actions", "must not exceed actions")
    _require(isinstance(gamma, (int, float)) and 0 <= gamma < 1, "gamma", "must lie in [0, 1)")
    rows = []
    if tightness:
        reports = []
        for i in range(count):
            eps = float(stream(seed, "mdp", i).uniform(0.05, 0.5))
            mdp, dec, nominal = tightness_instance(gamma, 1.0, eps)
            reports.append((gap_check(mdp, dec, nominal_epsilon=nominal), (1, 3, 1, 2)))
    else:
        sweep_reports = gap_sweep(count, states, actions, high_states, high_actions, gamma, seed)
        reports = [(r, (states, actions, high_states, high_actions)) for r in sweep_reports]
    for i, (rep, sizes) in enumerate(reports):
        eps = rep.nominal_epsilon if rep.nominal_epsilon is not None else rep.epsilon
        bound = eps / (1.0 - gamma)
        ratio = rep.max_gap / bound if bound > 0 else ""
        rows.append([i, "tightness" if tightness else "random", *sizes, gamma, rep.max_gap, rep.min_gap,
                     eps, bound, ratio, rep.bound_2eps, int(rep.within_2eps), rep.epsilon,
                     "" if rep.ratio is None else rep.ratio])
    summary = {
        "count": count,
        "kind": "tightness" if tightness else "random",
        "seed": seed,
        "gamma": gamma,
        "all_nonnegative": all(r.nonnegative for r, _ in reports),
        "all_within_2eps": all(r.within_2eps for r, _ in reports),
        "min_gap": min(r.min_gap for r, _ in reports),
        "max_ratio_2eps": max((r.max_gap / r.bound_2eps) if r.bound_2eps > 0 else 0.0 for r, _ in reports),
    }
    return rows, summary


def gapcheck_cmd(count: int, output_dir, **kwargs) -> dict:
    from .plotting import gap_scatter_svg

    rows, summary = gapcheck_report(count, **kwargs)
    out = ensure_writable(resolve_output_dir(str(output_dir)))
    csv_path = _write(out / "gapcheck.csv", render_csv(GAP_COLUMNS, rows, GAP_SCHEMA))
    _write(out / "gapcheck.json", jsonio.dumps(_json_safe(summary)))
    gap_scatter_svg(csv_path, out / "gapcheck.svg")
    return summary


def hardfamily_cmd(dim: int, levels: int, horizon: int, sigma: float, seed: int, output_dir) -> dict:
    """Write one spec file per family member plus ``audit.json``."""
    for name, v in (("dim", dim), ("levels", levels), ("horizon", horizon)):
        _require(_is_int(v) and v >= 1, name, f"must be a positive integer, got {v!r}")
    _require(isinstance(sigma, (int, float)) and sigma > 0 and math.isfinite(sigma), "sigma",
             "must be a positive number")
    _require(_is_int(seed) and 0 <= seed <= MAX_SEED, "seed", "must be a 64-bit unsigned integer")
    family = generate_hard_family(dim, levels, horizon, sigma, seed)
    audit = audit_family(family)
    out = ensure_writable(resolve_output_dir(str(output_dir)))
    members = out / "members"
    members.mkdir(exist_ok=True)
    width = len(str(family.count - 1))
    for i in range(family.count):
        _write(members / f"member-{i:0{width}d}.json", dump_spec(family_member_spec(family, i)))
    report = {"family": family.to_dict(), "audit": audit}
    _write(out / "audit.json", jsonio.dumps(_json_safe(report)))
    return report


def validate_file(path) -> str:
    """Kind of a config or spec file after validation; raises on problems."""
    raw = load_json(path)
    fmt = raw.get("format") if isinstance(raw, dict) else None
    if fmt == SWEEP_FORMAT or (isinstance(raw, dict) and ("grid" in raw or "cells" in raw)):
        _, cells, _ = expand_sweep(raw)
        bad = [f"{c.cell}: {c.error}" for c in cells if c.config is None]
        if bad:
            raise ConfigurationError("invalid sweep cells: " + "; ".join(bad))
        return "sweep"
    if fmt == "hcucb-environment-spec":
        load_spec(path)
        return "spec"
    validate_config(raw)
    return "run"
