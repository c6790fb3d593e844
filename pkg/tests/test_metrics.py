from __future__ import annotations

import math

import numpy as np
import pytest

from hcucb.agents import AgentConfig, make_agent
from hcucb.environment import EnvironmentSpec, draw_context, generate_spec, pull
from hcucb.metrics import (CSV_SCHEMA, RoundRecord, RunMetrics, checkpoint_rows, fit_exponent,
                           metrics_columns, powers_of_two_schedule, read_csv, render_csv,
                           round_regret_shares, sublinearity_summary)
from hcucb.rng import stream


def two_level_spec(thresholds=(math.inf, math.inf)):
    # context fixed at 1, rewards: (0,0)=0.9 (0,1)=0.2 (1,0)=0.6 (1,1)=0.5
    reward = np.array([[[0.9], [0.2]], [[0.6], [0.5]]])
    costs = (np.array([[0.0], [0.0]]), np.array([[[0.0], [0.0]], [[0.0], [0.0]]]))
    return EnvironmentSpec(dim=1, levels=2, actions_per_level=(2, 2), reward_params=reward, cost_params=costs,
                           thresholds=thresholds, noise_sigma=0.0,
                           context_distribution={"kind": "fixed-set", "points": [[1.0]]})


X = np.array([1.0])


class TestShares:
    def test_optimal_choice_has_zero_regret(self):
        s = round_regret_shares(two_level_spec(), X, (0, 0))
        assert s.regret == 0 and s.level_shares == [0.0, 0.0]

    def test_right_high_wrong_low(self):
        s = round_regret_shares(two_level_spec(), X, (0, 1))
        assert s.regret == pytest.approx(0.7)
        assert s.level_shares == pytest.approx([0.0, 0.7])

    def test_wrong_high(self):
        s = round_regret_shares(two_level_spec(), X, (1, 1))
        assert s.level_shares == pytest.approx([0.3, 0.1])

    def test_constrained_comparator(self):
        spec = two_level_spec()
        costs = (np.array([[0.0], [0.0]]), np.array([[[0.9], [0.0]], [[0.0], [0.0]]]))
        constrained = EnvironmentSpec(dim=1, levels=2, actions_per_level=(2, 2),
                                      reward_params=spec.reward_params, cost_params=costs,
                                      thresholds=(0.5, 0.5), noise_sigma=0.0)
        s = round_regret_shares(constrained, X, (1, 1))
        assert s.best_value == pytest.approx(0.6)
        assert s.regret == pytest.approx(0.1)
        assert s.unconstrained_regret == pytest.approx(0.4)
        # the infeasible (0, 0) out-earns the feasible optimum: clipped, not negative
        s = round_regret_shares(constrained, X, (0, 0))
        assert s.regret == 0.0

    def test_infeasible_context_is_excluded(self):
        spec = two_level_spec(thresholds=(-1.0, -1.0))
        m = RunMetrics(2, [1])
        m.accumulate(RoundRecord(1, X, (1, 1)), spec)
        assert m.infeasible_rounds == 1 and m.cumulative_regret == 0.0
        assert m.violations == [1, 1]

    def test_three_level_telescoping(self):
        rng = np.random.default_rng(0)
        spec = generate_spec(3, 3, [2, 3, 2], [math.inf] * 3, 0.0, 1)
        for _ in range(200):
            x = rng.uniform(-0.5, 0.5, 3)
            action = tuple(int(rng.integers(k)) for k in (2, 3, 2))
            s = round_regret_shares(spec, x, action)
            assert all(v >= 0 for v in s.level_shares)
            assert sum(s.level_shares) == pytest.approx(s.regret, abs=1e-12)
            best_given_first = np.max(spec.reward_params[action[0]] @ x)
            assert s.level_shares[0] == pytest.approx(s.best_value - best_given_first, abs=1e-12)


class TestAccumulate:
    def _trace(self, kind, seed=0, rounds=1000):
        spec = generate_spec(3, 2, [3, 4], [0.3, 0.3], 0.1, 21)
        agent = make_agent(AgentConfig(kind=kind), spec, stream(seed, "agent"))
        ctx, noise = stream(seed, "context"), stream(seed, "noise")
        metrics = RunMetrics(2, powers_of_two_schedule(rounds))
        records = []
        for t in range(1, rounds + 1):
            x = draw_context(spec, ctx)
            d = agent.select(x)
            obs = pull(spec, x, d.action, noise)
            agent.update(x, d, obs)
            rec = RoundRecord(t, x, d.action, d.fallback_used, obs)
            metrics.accumulate(rec, spec)
            records.append(rec)
        return spec, metrics, records

    def test_second_pass_summation(self):
        spec, m, records = self._trace("uniform-random")
        total, viol = 0.0, [0, 0]
        for rec in records:
            rewards, costs = spec.expected_all(rec.context)
            ok = np.all(costs <= np.array(spec.thresholds)[:, None], axis=0)
            idx = spec.action_space.full_index(rec.action)
            if ok.any():
                total += max(float(rewards[ok].max()) - float(rewards[idx]), 0.0)
            for h in range(2):
                viol[h] += int(costs[h, idx] > spec.thresholds[h] + 1e-12)
        assert m.cumulative_regret == pytest.approx(total, rel=1e-12)
        assert m.violations == viol
        assert m.t == 1000

    def test_decomposition_and_monotonicity_at_every_checkpoint(self):
        _, m, _ = self._trace("hcucb")
        prev = -1.0
        for cp in m.checkpoints:
            assert cp["regret_high"] + cp["regret_low"] == pytest.approx(cp["regret"], abs=1e-9)
            assert cp["regret"] >= prev
            prev = cp["regret"]
        assert [cp["t"] for cp in m.checkpoints] == powers_of_two_schedule(1000)

    def test_oracle_zero_and_dominance(self):
        for seed in range(3):
            spec, oracle, _ = self._trace("oracle", seed, 400)
            assert oracle.cumulative_regret == 0.0
            for kind in ("hcucb", "uniform-random", "epsilon-greedy"):
                _, other, records = self._trace(kind, seed, 400)
                # only an infeasible pick may out-earn the feasible optimum
                excess = 0.0
                for rec in records:
                    rewards, costs = spec.expected_all(rec.context)
                    idx = spec.action_space.full_index(rec.action)
                    gain = float(rewards[idx]) - round_regret_shares(spec, rec.context, rec.action).best_value
                    if gain > 0:
                        assert np.any(costs[:, idx] > np.array(spec.thresholds))
                        excess += gain
                assert oracle.cumulative_expected_reward >= other.cumulative_expected_reward - excess - 1e-9


class TestSummary:
    def test_sqrt_growth(self):
        cps = [{"t": t, "regret": math.sqrt(t)} for t in powers_of_two_schedule(10_000)]
        assert sublinearity_summary(cps)["exponent"] == pytest.approx(0.5, abs=1e-6)

    def test_linear_growth(self):
        cps = [{"t": t, "regret": float(t)} for t in powers_of_two_schedule(10_000)]
        rep = sublinearity_summary(cps)
        assert rep["exponent"] == pytest.approx(1.0, abs=1e-6)
        assert rep["avg_regret"] == pytest.approx([1.0] * len(cps))

    def test_zero_regret_has_no_exponent(self):
        cps = [{"t": t, "regret": 0.0, "regret_high": 0.0, "regret_low": 0.0} for t in (1, 2, 4)]
        rep = sublinearity_summary(cps)
        assert rep["exponent"] is None and rep["high_low_ratio"] == [None] * 3

    def test_needs_three_checkpoints(self):
        with pytest.raises(ValueError):
            sublinearity_summary([{"t": 1, "regret": 1.0}, {"t": 2, "regret": 2.0}])

    def test_ratio(self):
        rep = sublinearity_summary([{"t": t, "regret": 3.0, "regret_high": 1.0, "regret_low": 2.0}
                                    for t in (1, 2, 4)])
        assert rep["high_low_ratio"] == [0.5] * 3

    def test_fit_exponent_ignores_nonpositive(self):
        assert fit_exponent([1, 2, 4], [0.0, 2.0, 4.0]) == pytest.approx(1.0)
        assert fit_exponent([1, 2], [0.0, 2.0]) is None


class TestCsv:
    def test_schedule(self):
        assert powers_of_two_schedule(1) == [1]
        assert powers_of_two_schedule(8) == [1, 2, 4, 8]
        assert powers_of_two_schedule(10) == [1, 2, 4, 8, 10]

    def test_columns_and_round_trip(self, tmp_path):
        m = RunMetrics(2, [1, 2])
        spec = two_level_spec()
        m.accumulate(RoundRecord(1, X, (1, 1)), spec)
        m.accumulate(RoundRecord(2, X, (0, 0), fallback_used=True), spec)
        text = render_csv(metrics_columns(2), checkpoint_rows(m, "r", 7))
        assert text.splitlines()[0] == f"# {CSV_SCHEMA}"
        assert text.splitlines()[1] == ("run_id,seed,t,regret,regret_high,regret_low,violations_l1,"
                                        "violations_l2,fallback_rounds,avg_regret")
        path = tmp_path / "m.csv"
        path.write_text(text)
        schema, rows = read_csv(path)
        assert schema == CSV_SCHEMA and len(rows) == 2
        assert float(rows[1]["regret"]) == m.cumulative_regret
        assert rows[1]["fallback_rounds"] == "1"
        assert float(rows[1]["avg_regret"]) == m.cumulative_regret / 2
