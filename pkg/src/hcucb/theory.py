"""Brute-force checks: hierarchical decomposition gap on small MDPs and
packed parameter families for minimax hard instances.

A :class:`HierarchicalDecomposition` groups ground states into abstract
states and partitions primitive actions into high-level actions, each with a
fixed low-level policy that picks one of its member actions in every state.
The hierarchical agent sees only the abstract state, so its value is the
pessimistic aggregate

    Q_H(x, g) = min_{s in x} [R(s, pi_g(s)) + gamma * sum_s' P(s'|s, pi_g(s)) V_H(x(s'))]
    V_H(x)    = max_g Q_H(x, g)

which is a gamma-contraction whose fixed point never exceeds ``V*(s)`` for
any ``s`` in ``x``.  The gap bound uses

    eps = max_{s, a} |Q*(s, a) - Q_H(x(s), g(a))|

where ``g(a)`` is the high-level action whose group contains ``a``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .environment import ContextDistribution, EnvironmentSpec
from .errors import ConfigurationError, PackingError
from .rng import stream

MAX_STATES = 64
MAX_ACTIONS = 16
MAX_FAMILY = 256
MAX_PROPOSALS = 10**5
STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SmallMdp:
    transition: np.ndarray
    reward: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        p = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or r.shape != p.shape[:2]:
            raise ConfigurationError("transition must be (S, A, S) and reward (S, A)")
        s, a = r.shape
        if not (1 <= s <= MAX_STATES and 1 <= a <= MAX_ACTIONS):
            raise ConfigurationError(f"need 1 <= |S| <= {MAX_STATES} and 1 <= |A| <= {MAX_ACTIONS}")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=2) - 1.0) > STOCHASTIC_TOL):
            raise ConfigurationError("transition rows must be probability vectors")
        if not np.all(np.isfinite(r)):
            raise ConfigurationError("rewards must be finite")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma!r}")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)

    @property
    def states(self) -> int:
        return self.reward.shape[0]

    @property
    def actions(self) -> int:
        return self.reward.shape[1]


def random_mdp(rng: np.random.Generator, states: int, actions: int, gamma: float) -> SmallMdp:
    p = rng.dirichlet(np.ones(states), size=(states, actions))
    p /= p.sum(axis=2, keepdims=True)
    return SmallMdp(p, rng.random((states, actions)), gamma)


class ContractionError(AssertionError):
    pass


def _iterate(bellman, v0: np.ndarray, gamma: float, tolerance: float, max_sweeps: int):
    if not tolerance > 0:
        raise ConfigurationError("tolerance must be positive")
    v = v0
    prev_residual = None
    for _ in range(max_sweeps):
        q, tv = bellman(v)
        residual = float(np.max(np.abs(tv - v))) if v.size else 0.0
        if prev_residual is not None and residual > gamma * prev_residual + 1e-12 * (1 + np.max(np.abs(tv))):
            raise ContractionError(f"residual grew from {prev_residual} to {residual}")
        v = tv
        if residual <= tolerance:
            q, v_next = bellman(v)
            return v, q
        prev_residual = residual
    raise RuntimeError("value iteration did not converge")


def value_iteration(mdp: SmallMdp, tolerance: float = 1e-10,
                    max_sweeps: int = 1_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal state values and action values of ``mdp``.

    Stops once a sweep changes the values by at most ``tolerance`` in sup
    norm; the returned ``V`` then has Bellman residual ``<= gamma*tolerance``
    and ``Q`` is the one-step lookahead on it.
    """
    p, r, g = mdp.transition, mdp.reward, mdp.gamma

    def bellman(v):
        q = r + g * p @ v
        return q, q.max(axis=1)

    return _iterate(bellman, np.zeros(mdp.states), g, tolerance, max_sweeps)


def policy_value(mdp: SmallMdp, policy: Sequence[int]) -> np.ndarray:
    """Exact value of a deterministic stationary policy (linear solve)."""
    idx = np.arange(mdp.states)
    pol = np.asarray(policy)
    p_pi = mdp.transition[idx, pol]
    r_pi = mdp.reward[idx, pol]
    return np.linalg.solve(np.eye(mdp.states) - mdp.gamma * p_pi, r_pi)


@dataclass(frozen=True, eq=False)
class HierarchicalDecomposition:
    """``high_states[s]`` is the abstract state of ``s``; ``high_actions[g]``
    is the action group of high-level action ``g`` and
    ``low_level_policies[g][s]`` the member action it runs in ``s``."""

    high_states: tuple
    high_actions: tuple
    low_level_policies: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "high_states", tuple(int(x) for x in self.high_states))
        object.__setattr__(self, "high_actions",
                           tuple(tuple(int(a) for a in grp) for grp in self.high_actions))
        object.__setattr__(self, "low_level_policies",
                           tuple(tuple(int(a) for a in pol) for pol in self.low_level_policies))

    @property
    def n_high_states(self) -> int:
        return max(self.high_states) + 1

    @property
    def n_high_actions(self) -> int:
        return len(self.high_actions)

    def validate(self, mdp: SmallMdp) -> None:
        if len(self.high_states) != mdp.states:
            raise ConfigurationError("high_states must assign every ground state")
        if sorted(set(self.high_states)) != list(range(self.n_high_states)):
            raise ConfigurationError("abstract state labels must be 0..|X|-1 with none empty")
        if any(len(grp) == 0 for grp in self.high_actions):
            raise ConfigurationError("empty high-level action group")
        members = [a for grp in self.high_actions for a in grp]
        if sorted(members) != list(range(mdp.actions)):
            raise ConfigurationError("action groups must partition the primitive actions")
        if len(self.low_level_policies) != len(self.high_actions):
            raise ConfigurationError("one low-level policy per high-level action is required")
        for grp, pol in zip(self.high_actions, self.low_level_policies):
            if len(pol) != mdp.states or any(a not in grp for a in pol):
                raise ConfigurationError("a low-level policy must pick a member of its group in every state")

    def group_of_action(self, actions: int) -> np.ndarray:
        out = np.empty(actions, dtype=np.int64)
        for g, grp in enumerate(self.high_actions):
            out[list(grp)] = g
        return out


def random_decomposition(rng: np.random.Generator, mdp: SmallMdp, n_high_states: int,
                         n_high_actions: int) -> HierarchicalDecomposition:
    s, a = mdp.states, mdp.actions
    if not (1 <= n_high_states <= s and 1 <= n_high_actions <= a):
        raise ConfigurationError("need 1 <= |X| <= |S| and 1 <= |A_H| <= |A|")
    labels = np.concatenate([np.arange(n_high_states), rng.integers(n_high_states, size=s - n_high_states)])
    labels = rng.permutation(labels)
    owner = np.concatenate([np.arange(n_high_actions), rng.integers(n_high_actions, size=a - n_high_actions)])
    owner = rng.permutation(owner)
    groups = [tuple(int(i) for i in np.flatnonzero(owner == g)) for g in range(n_high_actions)]
    policies = [tuple(int(grp[k]) for k in rng.integers(len(grp), size=s)) for grp in groups]
    dec = HierarchicalDecomposition(tuple(labels), tuple(groups), tuple(policies))
    dec.validate(mdp)
    return dec


def hierarchical_value(mdp: SmallMdp, dec: HierarchicalDecomposition, tolerance: float = 1e-10,
                       max_sweeps: int = 1_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal abstract-state values ``V_H (|X|,)`` and ``Q_H (|X|, |A_H|)``."""
    dec.validate(mdp)
    idx = np.arange(mdp.states)
    pols = np.array(dec.low_level_policies)                     # (G, S)
    r_g = mdp.reward[idx[None, :], pols]                         # (G, S)
    p_g = mdp.transition[idx[None, :], pols]                     # (G, S, S)
    x_of = np.array(dec.high_states)
    n_x = dec.n_high_states
    members = [np.flatnonzero(x_of == x) for x in range(n_x)]
    g = mdp.gamma

    def bellman(vh):
        ground = r_g + g * p_g @ vh[x_of]                        # (G, S)
        qh = np.stack([ground[:, m].min(axis=1) for m in members])  # (X, G)
        return qh, qh.max(axis=1)

    return _iterate(bellman, np.zeros(n_x), g, tolerance, max_sweeps)


@dataclass
class GapReport:
    gaps: np.ndarray
    max_gap: float
    min_gap: float
    epsilon: float
    gamma: float
    bound_eps: float
    bound_2eps: float
    ratio: Optional[float]
    within_2eps: bool
    nonnegative: bool
    nominal_epsilon: Optional[float] = None
    nominal_ratio: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "max_gap": self.max_gap,
            "min_gap": self.min_gap,
            "epsilon": self.epsilon,
            "gamma": self.gamma,
            "bound_eps": self.bound_eps,
            "bound_2eps": self.bound_2eps,
            "ratio": self.ratio,
            "within_2eps": self.within_2eps,
            "nonnegative": self.nonnegative,
            "nominal_epsilon": self.nominal_epsilon,
            "nominal_ratio": self.nominal_ratio,
        }


GAP_NEG_TOL = 1e-9
GAP_BOUND_TOL = 1e-6


def gap_check(mdp: SmallMdp, dec: HierarchicalDecomposition, tolerance: float = 1e-10,
              nominal_epsilon: Optional[float] = None) -> GapReport:
    """Compare ``V*(s) - V_H(x(s))`` against ``eps/(1-gamma)`` and ``2 eps/(1-gamma)``.

    ``nominal_epsilon`` is the per-step loss a hand-built instance was
    constructed with; when given, the report also carries
    ``max_gap / (nominal_epsilon / (1 - gamma))``.
    """
    v_star, q_star = value_iteration(mdp, tolerance)
    v_h, q_h = hierarchical_value(mdp, dec, tolerance)
    x_of = np.array(dec.high_states)
    gaps = v_star - v_h[x_of]
    g_of = dec.group_of_action(mdp.actions)
    eps = float(np.max(np.abs(q_star - q_h[x_of][:, g_of])))
    scale = 1.0 / (1.0 - mdp.gamma)
    max_gap = float(np.max(gaps))
    bound_eps = eps * scale
    bound_2eps = 2.0 * eps * scale
    report = GapReport(
        gaps=gaps,
        max_gap=max_gap,
        min_gap=float(np.min(gaps)),
        epsilon=eps,
        gamma=mdp.gamma,
        bound_eps=bound_eps,
        bound_2eps=bound_2eps,
        ratio=max_gap / bound_eps if bound_eps > 0 else None,
        within_2eps=max_gap <= bound_2eps + GAP_BOUND_TOL,
        nonnegative=float(np.min(gaps)) >= -GAP_NEG_TOL,
    )
    if nominal_epsilon is not None:
        report.nominal_epsilon = float(nominal_epsilon)
        report.nominal_ratio = max_gap / (nominal_epsilon * scale)
    return report


def tightness_instance(gamma: float = 0.9, value: float = 1.0,
                       epsilon: float = 0.25) -> tuple[SmallMdp, HierarchicalDecomposition, float]:
    """One-state MDP where the decomposition hides the optimal action.

    Action 0 pays ``value`` per step, actions 1 and 2 pay ``value - epsilon``.
    High-level action 0 groups {0, 1} but its low-level policy runs action 1;
    high-level action 1 is {2}.  Both high-level choices earn
    ``value - epsilon`` forever, so the gap is ``epsilon / (1 - gamma)``.
    """
    if not epsilon > 0:
        raise ConfigurationError("epsilon must be positive")
    p = np.ones((1, 3, 1))
    r = np.array([[value, value - epsilon, value - epsilon]])
    mdp = SmallMdp(p, r, gamma)
    dec = HierarchicalDecomposition((0,), ((0, 1), (2,)), ((1,), (2,)))
    return mdp, dec, epsilon


def lossless_decomposition(mdp: SmallMdp) -> HierarchicalDecomposition:
    """Identity state map and one singleton group per action."""
    return HierarchicalDecomposition(
        tuple(range(mdp.states)),
        tuple((a,) for a in range(mdp.actions)),
        tuple((a,) * mdp.states for a in range(mdp.actions)),
    )


def gap_sweep(count: int, states: int, actions: int, high_states: int, high_actions: int,
              gamma: float, seed: int, tolerance: float = 1e-10) -> list[GapReport]:
    """``count`` random (MDP, decomposition) pairs, each from its own substream."""
    if count < 1:
        raise ConfigurationError("count must be at least 1")
    reports = []
    for i in range(count):
        rng = stream(seed, "mdp", i)
        mdp = random_mdp(rng, states, actions, gamma)
        dec = random_decomposition(rng, mdp, high_states, high_actions)
        reports.append(gap_check(mdp, dec, tolerance))
    return reports


@dataclass(eq=False)
class HardInstanceFamily:
    dim: int
    levels: int
    horizon: int
    sigma: float
    count: int
    c_constant: float
    separation: float
    parameter_sets: np.ndarray
    seed: int = 0
    proposals: int = 0

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "levels": self.levels,
            "horizon": self.horizon,
            "sigma": self.sigma,
            "count": self.count,
            "c_constant": self.c_constant,
            "separation": self.separation,
            "seed": self.seed,
        }


def family_size(dim: int, levels: int, cap: int = MAX_FAMILY) -> int:
    exponent = dim * levels
    return cap if exponent >= cap.bit_length() else min(2 ** exponent, cap)


def generate_hard_family(dim: int, levels: int, horizon: int, sigma: float, seed: int, *,
                         cap: int = MAX_FAMILY, max_proposals: int = MAX_PROPOSALS) -> HardInstanceFamily:
    """Packed parameter sets with pairwise separation ``c*sqrt(d/T)``, ``c = sigma/sqrt(H d)``.

    Each level is packed independently by rejection: uniform proposals in the
    unit ball are kept when at least the separation away from every point
    already kept.
    """
    for name, v in (("dim", dim), ("levels", levels), ("horizon", horizon)):
        if int(v) != v or v < 1:
            raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ConfigurationError(f"sigma must be positive, got {sigma!r}")
    n = family_size(dim, levels, cap)
    if n < 2:
        raise ConfigurationError("the family needs at least two members")
    c = sigma * math.sqrt(1.0 / (levels * dim))
    sep = c * math.sqrt(dim / horizon)
    rng = stream(seed, "packing")
    params = np.empty((n, levels, dim))
    proposals = 0
    for h in range(levels):
        kept = 0
        while kept < n:
            if proposals >= max_proposals:
                raise PackingError(
                    f"placed only {kept} of {n} points at level {h + 1} after {proposals} proposals; "
                    f"use a smaller family or a longer horizon (separation {sep:.4g})")
            proposals += 1
            g = rng.standard_normal(dim)
            u = rng.random()
            norm = float(np.linalg.norm(g)) or 1.0
            p = g / norm * u ** (1.0 / dim)
            if kept == 0 or np.min(np.linalg.norm(params[:kept, h] - p, axis=1)) >= sep:
                params[kept, h] = p
                kept += 1
    return HardInstanceFamily(dim=dim, levels=levels, horizon=horizon, sigma=float(sigma), count=n,
                              c_constant=c, separation=sep, parameter_sets=params, seed=seed,
                              proposals=proposals)


def audit_family(family: HardInstanceFamily) -> dict:
    """Exhaustive norm and pairwise-separation audit."""
    params = family.parameter_sets
    min_dist = []
    for h in range(family.levels):
        pts = params[:, h]
        best = math.inf
        for i, j in itertools.combinations(range(family.count), 2):
            best = min(best, float(np.linalg.norm(pts[i] - pts[j])))
        min_dist.append(best)
    max_norm = float(np.max(np.linalg.norm(params, axis=-1)))
    return {
        "count": family.count,
        "separation": family.separation,
        "c_constant": family.c_constant,
        "max_norm": max_norm,
        "min_pairwise_distance": min_dist,
        "norm_ok": max_norm <= 1.0,
        "separation_ok": all(d >= family.separation for d in min_dist),
        "pairs_checked": family.levels * family.count * (family.count - 1) // 2,
    }


def family_member_spec(family: HardInstanceFamily, index: int) -> EnvironmentSpec:
    """Member ``index`` as a bandit instance with two actions per level.

    Action 0 at level ``h`` contributes ``+theta_h`` and action 1 contributes
    ``-theta_h``; the reward parameter of a composite action is the average
    of its level contributions.  Costs are zero and thresholds infinite.
    """
    theta = family.parameter_sets[index]
    levels, d = family.levels, family.dim
    apl = (2,) * levels
    signs = np.array([1.0, -1.0])
    reward = np.zeros(apl + (d,))
    for action in itertools.product(range(2), repeat=levels):
        reward[action] = np.mean([signs[a] * theta[h] for h, a in enumerate(action)], axis=0)
    costs = tuple(np.zeros(apl[: h + 1] + (d,)) for h in range(levels))
    return EnvironmentSpec(dim=d, levels=levels, actions_per_level=apl, reward_params=reward,
                           cost_params=costs, thresholds=(math.inf,) * levels,
                           noise_sigma=family.sigma, context_distribution=ContextDistribution(),
                           seed=family.seed)
