"""Regret, its per-level decomposition, and constraint-violation counts.

Regret is measured against the best *feasible* composite action under the
true parameters.  Per-round regret is the positive part of
``best_value - mean_reward(chosen)``; an infeasible pick can out-earn the
feasible optimum, and such rounds count as violations rather than as
negative regret.

The per-round regret is split across levels by telescoping prefix optima:
level 1 is charged ``V* - B(a1)``, level 2 ``B(a1) - B(a1, a2)`` and so on,
where ``B(prefix)`` is the best feasible value among actions sharing that
prefix; the last level receives the remainder.  ``regret_high`` is the
level-1 share and ``regret_low`` the sum of the others.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .environment import COST_TOL, EnvironmentSpec, RoundObservation, feasible_mask

CSV_SCHEMA = "hcucb-metrics-csv v1"


def powers_of_two_schedule(horizon: int) -> list[int]:
    ts = []
    t = 1
    while t <= horizon:
        ts.append(t)
        t *= 2
    if ts[-1] != horizon:
        ts.append(horizon)
    return ts


def metrics_columns(levels: int) -> list[str]:
    return (["run_id", "seed", "t", "regret", "regret_high", "regret_low"]
            + [f"violations_l{h + 1}" for h in range(levels)]
            + ["fallback_rounds", "avg_regret"])


@dataclass
class RoundRecord:
    t: int
    context: np.ndarray
    action: tuple
    fallback_used: bool = False
    observation: Optional[RoundObservation] = None


@dataclass
class RunMetrics:
    levels: int
    checkpoint_times: Sequence[int] = ()
    t: int = 0
    cumulative_regret: float = 0.0
    regret_high: float = 0.0
    regret_low: float = 0.0
    regret_by_level: list = field(default_factory=list)
    unconstrained_regret: float = 0.0
    cumulative_expected_reward: float = 0.0
    violations: list = field(default_factory=list)
    violations_nonfallback: list = field(default_factory=list)
    violating_rounds_nonfallback: int = 0
    fallback_rounds: int = 0
    infeasible_rounds: int = 0
    checkpoints: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.regret_by_level = self.regret_by_level or [0.0] * self.levels
        self.violations = self.violations or [0] * self.levels
        self.violations_nonfallback = self.violations_nonfallback or [0] * self.levels
        self._checkpoint_set = set(int(t) for t in self.checkpoint_times)

    @property
    def average_regret(self) -> float:
        return self.cumulative_regret / self.t if self.t else 0.0

    def accumulate(self, record: RoundRecord, spec: EnvironmentSpec) -> "RunMetrics":
        expected = spec.expected_all(np.asarray(record.context, dtype=float))
        shares = round_regret_shares(spec, record.context, record.action, expected)
        self.t += 1
        costs = expected[1]
        idx = spec.action_space.full_index(record.action)
        chosen_costs = costs[:, idx]
        violated = chosen_costs > np.asarray(spec.thresholds) + COST_TOL
        for h in range(self.levels):
            if violated[h]:
                self.violations[h] += 1
                if not record.fallback_used:
                    self.violations_nonfallback[h] += 1
        if violated.any() and not record.fallback_used:
            self.violating_rounds_nonfallback += 1
        if record.fallback_used:
            self.fallback_rounds += 1
        self.cumulative_expected_reward += shares.chosen_value
        self.unconstrained_regret += shares.unconstrained_regret
        if shares.feasible:
            for h, s in enumerate(shares.level_shares):
                self.regret_by_level[h] += s
            self.cumulative_regret += shares.regret
            self.regret_high += shares.level_shares[0]
            self.regret_low += sum(shares.level_shares[1:])
        else:
            self.infeasible_rounds += 1
        if self.t in self._checkpoint_set:
            self.checkpoints.append(self.snapshot())
        return self

    def snapshot(self) -> dict:
        return {
            "t": self.t,
            "regret": self.cumulative_regret,
            "regret_high": self.regret_high,
            "regret_low": self.regret_low,
            "violations": list(self.violations),
            "fallback_rounds": self.fallback_rounds,
            "avg_regret": self.average_regret,
        }


def accumulate(metrics: RunMetrics, record: RoundRecord, spec: EnvironmentSpec) -> RunMetrics:
    return metrics.accumulate(record, spec)


@dataclass
class RegretShares:
    feasible: bool
    best_value: float
    chosen_value: float
    regret: float
    level_shares: list
    unconstrained_regret: float


def round_regret_shares(spec: EnvironmentSpec, context, action, expected=None) -> RegretShares:
    """Per-round regret of ``action`` at ``context`` and its per-level split."""
    space = spec.action_space
    action = tuple(int(a) for a in action)
    if expected is None:
        expected = spec.expected_all(np.asarray(context, dtype=float))
    rewards, costs = expected
    allowed = space.full_allowed.reshape(-1)
    mu = float(rewards[space.full_index(action)])
    unconstrained = max(float(np.max(rewards[allowed])) - mu, 0.0)
    ok = feasible_mask(spec, costs)
    if not ok.any():
        return RegretShares(False, math.nan, mu, 0.0, [0.0] * spec.levels, unconstrained)
    values = np.where(ok, rewards, -np.inf).reshape(space.full_shape)
    best = float(np.max(values))
    regret = max(best - mu, 0.0)
    shares = []
    remaining = regret
    prev = best
    for h in range(1, spec.levels):
        v = min(float(np.max(values[action[:h]])), prev)
        share = remaining if v == -math.inf else min(remaining, prev - v)
        shares.append(share)
        remaining -= share
        prev = v
    shares.append(remaining)
    return RegretShares(True, best, mu, regret, shares, unconstrained)


def checkpoint_rows(metrics: RunMetrics, run_id: str, seed: int) -> list[list]:
    rows = []
    for cp in metrics.checkpoints:
        rows.append([run_id, seed, cp["t"], cp["regret"], cp["regret_high"], cp["regret_low"],
                     *cp["violations"], cp["fallback_rounds"], cp["avg_regret"]])
    return rows


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(columns: Sequence[str], rows: Iterable[Sequence], schema: str = CSV_SCHEMA) -> str:
    buf = io.StringIO()
    buf.write(f"# {schema}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path) -> tuple[str, list[dict]]:
    """Schema line and rows (as string dicts) of a CSV written by :func:`render_csv`."""
    text = Path(path).read_text()
    first, _, rest = text.partition("\n")
    return first.lstrip("# ").strip(), list(csv.DictReader(io.StringIO(rest)))


def fit_exponent(ts: Sequence[float], values: Sequence[float]) -> Optional[float]:
    """Least-squares slope of ``log value`` against ``log t`` over positive values."""
    pts = [(math.log(t), math.log(v)) for t, v in zip(ts, values) if v > 0 and t > 0]
    if len(pts) < 2:
        return None
    lx = np.array([p[0] for p in pts])
    ly = np.array([p[1] for p in pts])
    lx_c = lx - lx.mean()
    denom = float(lx_c @ lx_c)
    if denom == 0:
        return None
    return float(lx_c @ (ly - ly.mean()) / denom)


def sublinearity_summary(metrics, min_t: int = 1) -> dict:
    """Average regret per checkpoint, fitted growth exponent and high/low ratios.

    ``metrics`` is a :class:`RunMetrics` or a list of checkpoint dicts with
    keys ``t``, ``regret`` and optionally ``regret_high``/``regret_low``.
    The exponent is ``None`` when fewer than two checkpoints carry positive
    regret.
    """
    cps = metrics.checkpoints if isinstance(metrics, RunMetrics) else list(metrics)
    cps = [cp for cp in cps if cp["t"] >= min_t]
    if len(cps) < 3:
        raise ValueError("a sublinearity summary needs at least three checkpoints")
    ts = [cp["t"] for cp in cps]
    rs = [cp["regret"] for cp in cps]
    ratios = []
    for cp in cps:
        hi, lo = cp.get("regret_high"), cp.get("regret_low")
        if hi is None or lo is None:
            ratios.append(None)
        elif lo > 0:
            ratios.append(hi / lo)
        else:
            ratios.append(math.inf if hi > 0 else None)
    return {
        "t": ts,
        "avg_regret": [r / t for r, t in zip(rs, ts)],
        "exponent": fit_exponent(ts, rs),
        "high_low_ratio": ratios,
    }
