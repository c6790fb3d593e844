from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcucb.errors import ConfigurationError, PackingError
from hcucb.rng import stream
from hcucb.theory import (ContractionError, HierarchicalDecomposition, SmallMdp, audit_family,
                          family_member_spec, family_size, gap_check, gap_sweep, generate_hard_family,
                          hierarchical_value, lossless_decomposition, policy_value, random_decomposition,
                          random_mdp, tightness_instance, value_iteration, _iterate)


class TestValueIteration:
    def test_single_state_closed_form(self):
        mdp = SmallMdp(np.ones((1, 2, 1)), np.array([[1.0, 0.5]]), 0.9)
        v, q = value_iteration(mdp, 1e-12)
        assert v[0] == pytest.approx(10.0, abs=1e-9)
        assert q[0, 1] == pytest.approx(0.5 + 0.9 * 10.0, abs=1e-9)

    def test_zero_discount_is_greedy(self):
        r = np.array([[0.2, 0.7], [0.4, 0.1]])
        mdp = SmallMdp(np.full((2, 2, 2), 0.5), r, 0.0)
        v, _ = value_iteration(mdp)
        np.testing.assert_allclose(v, [0.7, 0.4])

    def test_matches_policy_enumeration(self):
        rng = stream(0, "mdp", 99)
        mdp = random_mdp(rng, 8, 3, 0.8)
        v, _ = value_iteration(mdp, 1e-12)
        best = np.full(8, -np.inf)
        for policy in itertools.product(range(3), repeat=8):
            best = np.maximum(best, policy_value(mdp, policy))
        np.testing.assert_allclose(v, best, atol=1e-9)

    def test_contraction_assertion_fires_on_a_non_contraction(self):
        def expanding(v):
            return None, 2.0 * v + 1.0

        with pytest.raises(ContractionError):
            _iterate(expanding, np.zeros(1), 0.5, 1e-10, 100)

    @pytest.mark.parametrize("kwargs", [
        dict(transition=np.ones((1, 1, 1)), reward=np.zeros((1, 1)), gamma=1.0),
        dict(transition=np.full((1, 1, 1), 0.5), reward=np.zeros((1, 1)), gamma=0.5),
        dict(transition=np.ones((2, 1, 1)), reward=np.zeros((2, 1)), gamma=0.5),
    ])
    def test_invalid_mdps(self, kwargs):
        with pytest.raises(ConfigurationError):
            SmallMdp(**kwargs)


class TestHierarchicalValue:
    def test_lossless_decomposition_recovers_optimum(self):
        mdp = random_mdp(stream(1, "mdp"), 6, 3, 0.9)
        v, _ = value_iteration(mdp)
        vh, _ = hierarchical_value(mdp, lossless_decomposition(mdp))
        np.testing.assert_allclose(vh, v, atol=1e-8)
        rep = gap_check(mdp, lossless_decomposition(mdp))
        assert abs(rep.max_gap) < 1e-8 and rep.epsilon < 1e-8 and rep.within_2eps

    def test_never_exceeds_optimum_or_greedy_policy_value(self):
        for i in range(30):
            rng = stream(2, "mdp", i)
            mdp = random_mdp(rng, 7, 4, 0.85)
            dec = random_decomposition(rng, mdp, 3, 2)
            v, _ = value_iteration(mdp)
            vh, qh = hierarchical_value(mdp, dec)
            x_of = np.array(dec.high_states)
            assert np.all(vh[x_of] <= v + 1e-9)
            # the greedy hierarchical policy earns at least the pessimistic value
            choice = np.argmax(qh, axis=1)
            ground = [dec.low_level_policies[choice[x_of[s]]][s] for s in range(mdp.states)]
            assert np.all(vh[x_of] <= policy_value(mdp, ground) + 1e-8)

    def test_scalar_loop_oracle(self):
        rng = stream(3, "mdp")
        mdp = random_mdp(rng, 5, 3, 0.7)
        dec = random_decomposition(rng, mdp, 2, 2)
        vh, _ = hierarchical_value(mdp, dec, 1e-13)
        v = np.zeros(dec.n_high_states)
        for _ in range(2000):
            new = np.full(dec.n_high_states, -np.inf)
            for x in range(dec.n_high_states):
                for g in range(dec.n_high_actions):
                    worst = np.inf
                    for s in range(mdp.states):
                        if dec.high_states[s] != x:
                            continue
                        a = dec.low_level_policies[g][s]
                        val = mdp.reward[s, a] + mdp.gamma * sum(
                            mdp.transition[s, a, t] * v[dec.high_states[t]] for t in range(mdp.states))
                        worst = min(worst, val)
                    new[x] = max(new[x], worst)
            v = new
        np.testing.assert_allclose(vh, v, atol=1e-9)

    def test_decomposition_validation(self):
        mdp = random_mdp(stream(4, "mdp"), 3, 2, 0.5)
        bad = [
            HierarchicalDecomposition((0, 0), ((0, 1),), ((0, 0),)),
            HierarchicalDecomposition((0, 2, 2), ((0, 1),), ((0, 0, 0),)),
            HierarchicalDecomposition((0, 0, 0), ((0,),), ((0, 0, 0),)),
            HierarchicalDecomposition((0, 0, 0), ((0,), (1,)), ((0, 0, 0), (0, 1, 1))),
        ]
        for dec in bad:
            with pytest.raises(ConfigurationError):
                dec.validate(mdp)


class TestGapCheck:
    def test_tightness_construction(self):
        mdp, dec, eps = tightness_instance(0.9, 1.0, 0.25)
        rep = gap_check(mdp, dec, 1e-13, nominal_epsilon=eps)
        assert rep.max_gap == pytest.approx(eps / (1 - 0.9), abs=1e-6)
        assert rep.nominal_ratio == pytest.approx(1.0, abs=1e-6)
        assert rep.within_2eps and rep.nonnegative

    @pytest.mark.parametrize("gamma,eps", [(0.0, 0.1), (0.5, 0.3), (0.95, 0.05)])
    def test_tightness_across_discounts(self, gamma, eps):
        mdp, dec, nominal = tightness_instance(gamma, 0.7, eps)
        rep = gap_check(mdp, dec, 1e-13, nominal_epsilon=nominal)
        assert rep.nominal_ratio == pytest.approx(1.0, abs=1e-6)

    def test_random_pairs_respect_sandwich(self):
        for rep in gap_sweep(40, 6, 3, 2, 2, 0.8, seed=5):
            assert rep.min_gap >= -1e-9
            assert rep.max_gap <= rep.bound_2eps + 1e-6

    def test_sweep_is_deterministic(self):
        a = [r.to_dict() for r in gap_sweep(5, 5, 3, 2, 2, 0.9, seed=1)]
        b = [r.to_dict() for r in gap_sweep(5, 5, 3, 2, 2, 0.9, seed=1)]
        assert a == b

    def test_count_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            gap_sweep(0, 5, 3, 2, 2, 0.9, seed=1)


class TestHardFamily:
    def test_smallest_family(self):
        fam = generate_hard_family(1, 1, 100, 1.0, 0)
        assert fam.count == 2
        assert fam.separation == 0.1
        assert fam.c_constant == 1.0
        audit = audit_family(fam)
        assert audit["pairs_checked"] == 1 and audit["separation_ok"] and audit["norm_ok"]

    def test_exhaustive_pairwise_audit(self):
        fam = generate_hard_family(2, 2, 1000, 0.5, 3)
        assert fam.count == 16
        for h in range(2):
            for i, j in itertools.combinations(range(16), 2):
                assert np.linalg.norm(fam.parameter_sets[i, h] - fam.parameter_sets[j, h]) >= fam.separation
        assert np.all(np.linalg.norm(fam.parameter_sets, axis=-1) <= 1.0)
        assert audit_family(fam)["pairs_checked"] == 2 * 120

    def test_size_cap(self):
        assert family_size(3, 2) == 64
        assert family_size(4, 2) == 256
        assert family_size(40, 40) == 256

    def test_deterministic(self):
        a = generate_hard_family(2, 1, 50, 1.0, 9).parameter_sets
        b = generate_hard_family(2, 1, 50, 1.0, 9).parameter_sets
        np.testing.assert_array_equal(a, b)

    def test_packing_failure_is_explicit(self):
        with pytest.raises(PackingError, match="smaller family or a longer horizon"):
            generate_hard_family(1, 8, 1, 50.0, 0)

    @pytest.mark.parametrize("args", [(0, 1, 100, 1.0), (1, 0, 100, 1.0), (1, 1, 0, 1.0), (1, 1, 10, 0.0)])
    def test_invalid(self, args):
        with pytest.raises(ConfigurationError):
            generate_hard_family(*args, seed=0)

    def test_member_spec_mapping(self):
        fam = generate_hard_family(2, 2, 100, 1.0, 1)
        spec = family_member_spec(fam, 5)
        theta = fam.parameter_sets[5]
        assert spec.actions_per_level == (2, 2)
        np.testing.assert_allclose(spec.reward_params[0, 1], (theta[0] - theta[1]) / 2)
        np.testing.assert_allclose(spec.reward_params[1, 1], -(theta[0] + theta[1]) / 2)
        assert spec.thresholds == (math.inf, math.inf)
        assert all(np.all(c == 0) for c in spec.cost_params)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), states=st.integers(1, 7), actions=st.integers(1, 4),
       gamma=st.floats(0.0, 0.95))
def test_gap_sandwich_property(seed, states, actions, gamma):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, states, actions, gamma)
    dec = random_decomposition(rng, mdp, int(rng.integers(1, states + 1)), int(rng.integers(1, actions + 1)))
    rep = gap_check(mdp, dec)
    assert rep.nonnegative and rep.within_2eps


@settings(max_examples=15, deadline=None)
@given(d=st.integers(1, 3), levels=st.integers(1, 2), horizon=st.integers(10, 10_000),
       seed=st.integers(0, 2**32 - 1))
def test_hard_family_always_valid(d, levels, horizon, seed):
    fam = generate_hard_family(d, levels, horizon, 0.5, seed)
    audit = audit_family(fam)
    assert audit["norm_ok"] and audit["separation_ok"]
