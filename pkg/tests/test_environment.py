from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcucb.environment import (ContextDistribution, EnvironmentSpec, best_feasible, draw_context,
                               feasibility_check_contexts, generate_spec, load_spec, pull, save_spec)
from hcucb.errors import CapacityError, ConfigurationError, FeasibilityError, StructuralError
from hcucb.rng import stream


@pytest.fixture(scope="module")
def spec():
    return generate_spec(3, 2, [3, 4], [0.3, 0.3], 0.1, 7)


def brute_force_best(spec, x):
    """Loop over every composite action with explicit per-level indexing."""
    best, best_val = None, -math.inf
    for action in itertools.product(*(range(k) for k in spec.actions_per_level)):
        if not all(action[h] in spec.action_space.allowed(action[:h]) for h in range(spec.levels)):
            continue
        costs = [float(np.dot(spec.cost_params[h][action[: h + 1]], x)) for h in range(spec.levels)]
        if any(c > t for c, t in zip(costs, spec.thresholds)):
            continue
        val = float(np.dot(spec.reward_params[action], x))
        if val > best_val:
            best, best_val = action, val
    return best, best_val


class TestGeneration:
    def test_deterministic_per_seed(self, spec):
        again = generate_spec(3, 2, [3, 4], [0.3, 0.3], 0.1, 7)
        assert again.to_dict() == spec.to_dict()
        other = generate_spec(3, 2, [3, 4], [0.3, 0.3], 0.1, 8)
        assert not np.array_equal(other.reward_params, spec.reward_params)

    def test_parameter_shapes_and_norms(self, spec):
        assert spec.reward_params.shape == (3, 4, 3)
        assert spec.cost_params[0].shape == (3, 3)
        assert spec.cost_params[1].shape == (3, 4, 3)
        for arr in (spec.reward_params, *spec.cost_params):
            assert np.all(np.linalg.norm(arr, axis=-1) <= 1.0)

    def test_feasibility_witness_on_check_contexts(self, spec):
        contexts = feasibility_check_contexts(spec, spec.seed)
        assert len(contexts) == 10_000
        for x in contexts[:2000]:
            found = False
            for action in itertools.product(range(3), range(4)):
                c1 = float(spec.cost_params[0][action[:1]] @ x)
                c2 = float(spec.cost_params[1][action] @ x)
                if c1 <= spec.thresholds[0] and c2 <= spec.thresholds[1]:
                    found = True
                    break
            assert found

    def test_parameters_are_read_only(self, spec):
        with pytest.raises(ValueError):
            spec.reward_params[0, 0, 0] = 1.0

    def test_unreachable_thresholds_raise_without_inflation(self):
        with pytest.raises(FeasibilityError, match="threshold"):
            generate_spec(2, 1, [2], [-0.95], 0.1, 0, allow_threshold_inflation=False)

    def test_inflation_adds_minimal_uniform_slack(self):
        s = generate_spec(2, 1, [2], [-0.95], 0.1, 0)
        assert s.thresholds[0] > -0.95
        contexts = feasibility_check_contexts(s, s.seed)
        worst = np.max(np.min(s.cost_matrix[0] @ contexts.T, axis=0))
        assert worst <= s.thresholds[0]
        assert s.thresholds[0] - worst < 1e-9

    def test_infinite_thresholds_always_feasible(self):
        s = generate_spec(2, 2, [2, 2], [math.inf, math.inf], 0.0, 1)
        assert s.thresholds == (math.inf, math.inf)

    @pytest.mark.parametrize("kwargs", [
        dict(dim=0, levels=1, actions_per_level=[2], thresholds=[0.5]),
        dict(dim=2, levels=2, actions_per_level=[2], thresholds=[0.5, 0.5]),
        dict(dim=2, levels=1, actions_per_level=[0], thresholds=[0.5]),
        dict(dim=2, levels=1, actions_per_level=[2], thresholds=[math.nan]),
        dict(dim=2, levels=1, actions_per_level=[2], thresholds=[0.5, 0.5]),
    ])
    def test_invalid_arguments(self, kwargs):
        with pytest.raises(ConfigurationError):
            generate_spec(noise_sigma=0.1, seed=0, **kwargs)

    def test_negative_noise_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_spec(2, 1, [2], [0.5], -0.1, 0)

    def test_enumeration_cap(self):
        with pytest.raises(CapacityError):
            generate_spec(2, 3, [101, 100, 100], [1, 1, 1], 0.1, 0)

    def test_unit_value_range_keeps_means_in_unit_interval(self):
        s = generate_spec(4, 2, [2, 3], [0.6, 0.6], 0.0, 3, value_range="unit")
        rng = stream(0, "context")
        for _ in range(500):
            x = draw_context(s, rng)
            r, c = s.expected_all(x)
            assert np.all((r >= 0) & (r <= 1)) and np.all((c >= 0) & (c <= 1))


class TestContexts:
    def test_uniform_ball_stays_in_ball(self, spec):
        rng = stream(1, "context")
        xs = np.array([draw_context(spec, rng) for _ in range(2000)])
        assert np.all(np.linalg.norm(xs, axis=1) <= 1.0)
        # radius^d is uniform: P(||x|| <= 0.5) = 0.5^3
        frac = np.mean(np.linalg.norm(xs, axis=1) <= 0.5)
        assert abs(frac - 0.125) < 4 * math.sqrt(0.125 * 0.875 / 2000)

    def test_fixed_set_draws_only_listed_points(self):
        pts = ((0.5, 0.0), (0.0, -0.5), (0.3, 0.4))
        s = generate_spec(2, 1, [3], [0.9], 0.0, 0, context_distribution={"kind": "fixed-set", "points": pts})
        rng = stream(0, "context")
        seen = {tuple(draw_context(s, rng)) for _ in range(300)}
        assert seen == set(pts)

    def test_gaussian_clipped_norm(self):
        s = generate_spec(3, 1, [2], [0.9], 0.0, 0,
                          context_distribution={"kind": "gaussian-clipped", "scale": 2.0})
        rng = stream(0, "context")
        norms = [np.linalg.norm(draw_context(s, rng)) for _ in range(500)]
        assert max(norms) <= 1.0 + 1e-12
        assert np.mean(np.isclose(norms, 1.0)) > 0.5

    def test_bad_distribution(self):
        with pytest.raises(ConfigurationError):
            ContextDistribution(kind="sphere")
        with pytest.raises(ConfigurationError):
            ContextDistribution(kind="fixed-set", points=((2.0, 0.0),))


class TestPull:
    def test_noiseless_pull_returns_means(self, spec):
        s0 = EnvironmentSpec(dim=3, levels=2, actions_per_level=(3, 4), reward_params=spec.reward_params,
                             cost_params=spec.cost_params, thresholds=spec.thresholds, noise_sigma=0.0)
        x = np.array([0.2, -0.1, 0.4])
        obs = pull(s0, x, (2, 1), stream(0, "noise"))
        assert obs.reward == pytest.approx(float(spec.reward_params[2, 1] @ x), abs=1e-15)
        assert obs.costs[0] == pytest.approx(float(spec.cost_params[0][2] @ x), abs=1e-15)
        assert obs.costs[1] == pytest.approx(float(spec.cost_params[1][2, 1] @ x), abs=1e-15)

    def test_law_of_large_numbers(self, spec):
        x = np.array([0.5, 0.5, 0.0])
        rng = stream(2, "noise")
        n = 20_000
        obs = [pull(spec, x, (1, 3), rng) for _ in range(n)]
        rewards = np.array([o.reward for o in obs])
        tol = 4 * spec.noise_sigma / math.sqrt(n)
        assert abs(rewards.mean() - obs[0].expected_reward) < tol
        assert abs(np.mean([o.costs[1] for o in obs]) - obs[0].expected_costs[1]) < tol
        assert rewards.std(ddof=1) == pytest.approx(spec.noise_sigma, rel=0.03)

    def test_uniform_noise_is_bounded(self):
        s = generate_spec(2, 1, [2], [0.9], 0.2, 0, noise_kind="uniform")
        rng = stream(0, "noise")
        x = np.array([0.1, 0.1])
        devs = [o.reward - o.expected_reward for o in (pull(s, x, (0,), rng) for _ in range(3000))]
        assert max(np.abs(devs)) <= 0.2
        assert np.var(devs) == pytest.approx(0.2**2 / 3, rel=0.1)

    def test_consumes_fixed_number_of_noise_draws(self, spec):
        rng = stream(5, "noise")
        pull(spec, np.zeros(3), (0, 0), rng)
        ref = stream(5, "noise")
        ref.standard_normal(spec.levels + 1)
        assert rng.random() == ref.random()

    def test_rejects_bad_action_and_context(self, spec):
        rng = stream(0, "noise")
        with pytest.raises(StructuralError):
            pull(spec, np.zeros(3), (3, 0), rng)
        with pytest.raises(StructuralError):
            pull(spec, np.zeros(3), (0,), rng)
        with pytest.raises(StructuralError):
            pull(spec, np.zeros(2), (0, 0), rng)


class TestBestFeasible:
    def test_agrees_with_brute_force(self, spec):
        rng = stream(9, "context")
        for _ in range(1000):
            x = draw_context(spec, rng)
            got = best_feasible(spec, x)
            want, val = brute_force_best(spec, x)
            if want is None:
                assert got is None
            else:
                assert got[0] == want and got[1] == pytest.approx(val, abs=1e-12)

    def test_none_when_nothing_feasible(self, spec):
        strict = EnvironmentSpec(dim=3, levels=2, actions_per_level=(3, 4), reward_params=spec.reward_params,
                                 cost_params=spec.cost_params, thresholds=(-2.0, -2.0), noise_sigma=0.1)
        assert best_feasible(strict, np.array([0.1, 0.2, 0.3])) is None

    def test_mask_excludes_actions(self, spec):
        mask = {(): (0, 2), (0,): (1,)}
        masked = EnvironmentSpec(dim=3, levels=2, actions_per_level=(3, 4), reward_params=spec.reward_params,
                                 cost_params=spec.cost_params, thresholds=(math.inf, math.inf),
                                 noise_sigma=0.1, action_mask=mask)
        rng = stream(4, "context")
        for _ in range(200):
            x = draw_context(masked, rng)
            action, _ = best_feasible(masked, x)
            assert action[0] in (0, 2)
            if action[0] == 0:
                assert action[1] == 1
            assert brute_force_best(masked, x)[0] == action
        with pytest.raises(StructuralError):
            pull(masked, np.zeros(3), (1, 0), stream(0, "noise"))
        with pytest.raises(StructuralError):
            pull(masked, np.zeros(3), (0, 0), stream(0, "noise"))

    def test_mask_emptying_a_reachable_prefix_is_rejected(self, spec):
        with pytest.raises(StructuralError):
            EnvironmentSpec(dim=3, levels=2, actions_per_level=(3, 4), reward_params=spec.reward_params,
                            cost_params=spec.cost_params, thresholds=(1.0, 1.0), noise_sigma=0.1,
                            action_mask={(1,): ()})


class TestSerialization:
    def test_round_trip(self, spec, tmp_path):
        path = save_spec(spec, tmp_path / "spec.json")
        back = load_spec(path)
        assert back.to_dict() == spec.to_dict()
        np.testing.assert_array_equal(back.reward_params, spec.reward_params)
        for a, b in zip(back.cost_params, spec.cost_params):
            np.testing.assert_array_equal(a, b)
        assert path.read_text() == save_spec(back, tmp_path / "again.json").read_text()

    def test_infinite_thresholds_and_mask_survive(self, tmp_path):
        s = generate_spec(2, 2, [2, 3], [math.inf, 0.8], 0.0, 4, action_mask={(1,): (0, 2)})
        back = load_spec(save_spec(s, tmp_path / "s.json"))
        assert back.thresholds == s.thresholds
        assert back.action_space.mask == {(1,): (0, 2)}

    def test_rejects_foreign_documents(self):
        with pytest.raises(ConfigurationError):
            EnvironmentSpec.from_dict({"format": "something-else"})

    def test_norm_violation_rejected(self, spec):
        big = np.array(spec.reward_params)
        big[0, 0] = [2.0, 0.0, 0.0]
        with pytest.raises(ConfigurationError):
            EnvironmentSpec(dim=3, levels=2, actions_per_level=(3, 4), reward_params=big,
                            cost_params=spec.cost_params, thresholds=(1.0, 1.0), noise_sigma=0.1)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), d=st.integers(1, 4), k1=st.integers(1, 3), k2=st.integers(1, 3))
def test_generated_specs_have_witnesses(seed, d, k1, k2):
    s = generate_spec(d, 2, [k1, k2], [0.2, 0.2], 0.1, seed)
    contexts = feasibility_check_contexts(s, seed)
    costs = np.einsum("hkd,nd->nhk", s.cost_matrix, contexts)
    ok = np.all(costs <= np.asarray(s.thresholds)[None, :, None], axis=1)
    assert ok.any(axis=1).all()
