"""HC-UCB and baseline policies.

All policies share one interface: ``select(context) -> Decision`` followed by
``update(context, decision, observation)``.  Reward models are kept per full
composite action, level-``h`` cost models per action prefix of length
``h + 1``.

HC-UCB descends the hierarchy one level at a time.  At level ``h`` every
available candidate is screened with a confidence bound on its level-``h``
cost, then scored by the best reward UCB among the composite actions that
extend the current prefix with it.  With ``lookahead="screened"`` (default)
only completions whose deeper prefixes also pass their screens count; with
``lookahead="optimistic"`` every completion counts.  When no candidate passes
the screen the fallback policy decides and the decision is flagged.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .environment import ActionSpace, EnvironmentSpec, RoundObservation, best_feasible
from .errors import ConfigurationError, StructuralError
from .linear_model import ConfidenceConfig, LinearModelState, ModelBank, compute_beta

AGENT_KINDS = ("hcucb", "uniform-random", "epsilon-greedy", "unconstrained-ucb", "oracle")
CONSTRAINT_MODES = ("conservative-ucb", "optimistic-lcb")
FALLBACK_POLICIES = ("least-lcb-cost", "abstain-uniform")
LOOKAHEADS = ("screened", "optimistic")


@dataclass(frozen=True)
class AgentConfig:
    kind: str = "hcucb"
    delta: float = 0.1
    lam: float = 1.0
    s_bound: float = 1.0
    noise_scale: float = 1.0
    constraint_mode: str = "conservative-ucb"
    fallback: str = "least-lcb-cost"
    lookahead: str = "screened"
    epsilon: float = 0.1
    split_delta: bool = False

    def __post_init__(self) -> None:
        checks = [
            (self.kind in AGENT_KINDS, "agent.kind", f"one of {AGENT_KINDS}"),
            (self.constraint_mode in CONSTRAINT_MODES, "agent.constraint_mode",
             f"one of {CONSTRAINT_MODES}"),
            (self.fallback in FALLBACK_POLICIES, "agent.fallback", f"one of {FALLBACK_POLICIES}"),
            (self.lookahead in LOOKAHEADS, "agent.lookahead", f"one of {LOOKAHEADS}"),
            (0.0 < self.delta < 1.0, "agent.delta", "in the open interval (0, 1)"),
            (self.lam > 0, "agent.lambda", "positive"),
            (self.s_bound > 0, "agent.s_bound", "positive"),
            (self.noise_scale >= 0, "agent.noise_scale", "non-negative"),
            (0.0 <= self.epsilon <= 1.0, "agent.epsilon", "in [0, 1]"),
        ]
        for ok, name, what in checks:
            if not ok:
                value = getattr(self, name.split(".")[1].replace("lambda", "lam"))
                raise ConfigurationError(f"{name} must be {what}, got {value!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AgentConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown agent fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Decision:
    action: tuple
    per_level_ucb_reward: list
    per_level_cost_bound: list
    fallback_used: bool
    fallback_levels: tuple = ()


@dataclass
class AgentState:
    """Estimators and bookkeeping of one HC-UCB trajectory."""

    space: ActionSpace
    reward_models: ModelBank
    cost_models: list
    confidence: ConfidenceConfig
    constraint_mode: str = "conservative-ucb"
    fallback_policy: str = "least-lcb-cost"
    lookahead: str = "screened"
    round: int = 0

    def reward_model(self, action: Sequence[int]) -> LinearModelState:
        return self.reward_models[self.space.full_index(action)]

    def cost_model(self, level: int, prefix: Sequence[int]) -> LinearModelState:
        """Cost model of ``prefix`` at 0-based ``level`` (``len(prefix) == level + 1``)."""
        if len(prefix) != level + 1:
            raise StructuralError("a level-h cost model is keyed on a prefix of length h + 1")
        return self.cost_models[level][self.space.prefix_index(prefix)]


def new_agent_state(space: ActionSpace, dim: int, config: AgentConfig = AgentConfig()) -> AgentState:
    delta = config.delta / (space.levels + 1) if config.split_delta else config.delta
    conf = ConfidenceConfig(delta=delta, s_bound=config.s_bound, lam=config.lam, dim=dim,
                            noise_scale=config.noise_scale)
    return AgentState(
        space=space,
        reward_models=ModelBank(space.n_full, dim, config.lam),
        cost_models=[ModelBank(space.prefix_count(h), dim, config.lam) for h in range(space.levels)],
        confidence=conf,
        constraint_mode=config.constraint_mode,
        fallback_policy=config.fallback,
        lookahead=config.lookahead,
    )


def _confidence_bounds(bank: ModelBank, cfg: ConfidenceConfig, x: np.ndarray):
    est = bank.estimates(x)
    width = bank.betas(cfg) * bank.bonuses(x)
    return est, width


def hcucb_select(state: AgentState, context, thresholds: Sequence[float],
                 rng: Optional[np.random.Generator] = None, *,
                 reward_bonus: bool = True) -> Decision:
    """One HC-UCB decision at ``context``.

    ``reward_bonus=False`` scores candidates by point estimates (the exploit
    step of epsilon-greedy) while keeping the same cost screen.
    """
    space = state.space
    x = np.asarray(context, dtype=float)
    if x.shape != (state.reward_models.dim,):
        raise StructuralError(f"context must have shape ({state.reward_models.dim},)")
    levels = space.levels
    if len(thresholds) != levels:
        raise StructuralError("one threshold per level is required")
    cfg = state.confidence
    shape = space.full_shape

    est, width = _confidence_bounds(state.reward_models, cfg, x)
    ucb_full = (est + width if reward_bonus else est).reshape(shape)

    conservative = state.constraint_mode == "conservative-ucb"
    lcb, bound, passes = [], [], []
    for h in range(levels):
        c_est, c_width = _confidence_bounds(state.cost_models[h], cfg, x)
        lo = (c_est - c_width).reshape(shape[: h + 1])
        b = (c_est + c_width).reshape(shape[: h + 1]) if conservative else lo
        lcb.append(lo)
        bound.append(b)
        passes.append(b <= thresholds[h])

    allowed = space.full_allowed
    # deep_ok[h]: completions whose prefixes beyond level h pass their screens
    deep_ok = [None] * levels
    deep_ok[levels - 1] = allowed
    for h in range(levels - 2, -1, -1):
        g = h + 1
        deep_ok[h] = deep_ok[g] & passes[g].reshape(shape[: g + 1] + (1,) * (levels - g - 1))
    screened = state.lookahead == "screened"

    prefix: tuple = ()
    ucb_levels, bound_levels, fallback_levels = [], [], []
    for h in range(levels):
        cands = space.allowed(prefix)
        if not cands:
            raise StructuralError(f"empty action set at level {h + 1} after prefix {prefix}")
        sub_ucb = ucb_full[prefix]
        sub_ok = deep_ok[h][prefix]
        sub_allowed = allowed[prefix]
        scores = {}
        for a in cands:
            block, ok = sub_ucb[a], sub_ok[a]
            if screened and ok.any():
                scores[a] = (True, float(block[ok].max()))
            else:
                alw = sub_allowed[a]
                top = float(block[alw].max()) if alw.any() else -math.inf
                scores[a] = (not screened, top)
        passing = [a for a in cands if passes[h][prefix + (a,)]]
        if passing:
            choice = passing[0]
            for a in passing[1:]:
                if scores[a] > scores[choice]:
                    choice = a
        else:
            fallback_levels.append(h)
            if state.fallback_policy == "least-lcb-cost":
                choice = cands[0]
                for a in cands[1:]:
                    if lcb[h][prefix + (a,)] < lcb[h][prefix + (choice,)]:
                        choice = a
            else:
                if rng is None:
                    raise ConfigurationError("abstain-uniform fallback needs a random generator")
                choice = cands[int(rng.integers(len(cands)))]
        ucb_levels.append(scores[choice][1])
        bound_levels.append(float(bound[h][prefix + (choice,)]))
        prefix = prefix + (int(choice),)
    return Decision(action=prefix, per_level_ucb_reward=ucb_levels,
                    per_level_cost_bound=bound_levels, fallback_used=bool(fallback_levels),
                    fallback_levels=tuple(fallback_levels))


def reward_ucb(state: AgentState, context, action: Sequence[int]) -> float:
    """Reward upper confidence bound of one composite action."""
    x = np.asarray(context, dtype=float)
    model = state.reward_model(action)
    return float(model.theta_hat @ x) + float(compute_beta(state.confidence, model.count)) * model.bonus(x)


def screen_bounds(state: AgentState, context, action: Sequence[int]) -> list:
    """Per-level screened cost bound of the prefixes of ``action``."""
    x = np.asarray(context, dtype=float)
    sign = 1.0 if state.constraint_mode == "conservative-ucb" else -1.0
    out = []
    for h in range(state.space.levels):
        model = state.cost_model(h, tuple(action[: h + 1]))
        beta = float(compute_beta(state.confidence, model.count))
        out.append(float(model.theta_hat @ x) + sign * beta * model.bonus(x))
    return out


def hcucb_update(state: AgentState, context, decision: Decision,
                 observation: RoundObservation) -> AgentState:
    """Absorb the observed reward and per-level costs into the chosen models."""
    x = np.asarray(context, dtype=float)
    if x.shape != (state.reward_models.dim,):
        raise StructuralError(f"context must have shape ({state.reward_models.dim},)")
    action = state.space.validate(decision.action)
    if len(observation.costs) != state.space.levels:
        raise StructuralError("observation must carry one cost per level")
    state.reward_model(action).absorb(x, observation.reward)
    for h in range(state.space.levels):
        state.cost_model(h, action[: h + 1]).absorb(x, observation.costs[h])
    state.round += 1
    return state


def _blank_decision(action, levels: int, fallback: bool = False) -> Decision:
    return Decision(action=tuple(int(a) for a in action), per_level_ucb_reward=[math.nan] * levels,
                    per_level_cost_bound=[math.nan] * levels, fallback_used=fallback)


def _uniform_action(space: ActionSpace, rng: np.random.Generator) -> tuple:
    acts = space.allowed_actions
    return tuple(int(a) for a in acts[int(rng.integers(len(acts)))])


def oracle_decision(spec: EnvironmentSpec, context) -> Decision:
    """Best feasible action under the truth; least-violating action if none is feasible."""
    x = np.asarray(context, dtype=float)
    best = best_feasible(spec, x)
    if best is not None:
        action, value = best
        _, costs = spec.expected_all(x)
        idx = spec.action_space.full_index(action)
        return Decision(action=action, per_level_ucb_reward=[value] * spec.levels,
                        per_level_cost_bound=[float(c) for c in costs[:, idx]], fallback_used=False)
    _, costs = spec.expected_all(x)
    excess = np.max(costs - np.asarray(spec.thresholds)[:, None], axis=0)
    excess[~spec.action_space.full_allowed.reshape(-1)] = np.inf
    idx = int(np.argmin(excess))
    return _blank_decision(spec.action_space.all_actions[idx], spec.levels, fallback=True)


def baseline_select(kind: str, context, *, space: ActionSpace, thresholds: Sequence[float],
                    rng: Optional[np.random.Generator] = None, state: Optional[AgentState] = None,
                    spec: Optional[EnvironmentSpec] = None, epsilon: float = 0.1) -> Decision:
    """Decision of a control policy.

    ``uniform-random`` and ``epsilon-greedy`` need ``rng``; model-based kinds
    need ``state``; ``oracle`` needs the true ``spec``.
    """
    levels = space.levels
    if kind == "oracle":
        if spec is None:
            raise ConfigurationError("the oracle baseline requires access to the true spec")
        return oracle_decision(spec, context)
    if kind == "uniform-random":
        if rng is None:
            raise ConfigurationError("uniform-random needs a random generator")
        return _blank_decision(_uniform_action(space, rng), levels)
    if state is None:
        raise ConfigurationError(f"{kind} needs an agent state")
    if kind == "unconstrained-ucb":
        return hcucb_select(state, context, [math.inf] * levels, rng)
    if kind == "epsilon-greedy":
        if rng is None:
            raise ConfigurationError("epsilon-greedy needs a random generator")
        if rng.random() < epsilon:
            return _blank_decision(_uniform_action(space, rng), levels)
        return hcucb_select(state, context, thresholds, rng, reward_bonus=False)
    raise ConfigurationError(f"unknown baseline kind {kind!r}")


class Agent:
    """A policy bound to one trajectory: its own models and random stream."""

    def __init__(self, config: AgentConfig, space: ActionSpace, dim: int,
                 thresholds: Sequence[float], rng: np.random.Generator,
                 spec: Optional[EnvironmentSpec] = None) -> None:
        if config.kind == "oracle" and spec is None:
            raise ConfigurationError("the oracle baseline requires access to the true spec")
        self.config = config
        self.space = space
        self.thresholds = tuple(float(t) for t in thresholds)
        self.rng = rng
        self._spec = spec if config.kind == "oracle" else None
        self.state = new_agent_state(space, dim, config)

    @property
    def kind(self) -> str:
        return self.config.kind

    def select(self, context) -> Decision:
        if self.kind == "hcucb":
            return hcucb_select(self.state, context, self.thresholds, self.rng)
        return baseline_select(self.kind, context, space=self.space, thresholds=self.thresholds,
                               rng=self.rng, state=self.state, spec=self._spec,
                               epsilon=self.config.epsilon)

    def update(self, context, decision: Decision, observation: RoundObservation) -> None:
        if self.kind in ("uniform-random", "oracle"):
            self.state.round += 1
            return
        hcucb_update(self.state, context, decision, observation)


def make_agent(config: AgentConfig, spec: EnvironmentSpec, rng: np.random.Generator) -> Agent:
    return Agent(config, spec.action_space, spec.dim, spec.thresholds, rng,
                 spec=spec if config.kind == "oracle" else None)
