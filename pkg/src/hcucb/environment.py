"""Synthetic hierarchical constrained linear bandit instances.

An instance has ``levels`` decision levels with ``actions_per_level[h]``
choices each.  The reward mean is linear in the context with a parameter
per full composite action; the level-``h`` cost mean is linear with a
parameter per action prefix of length ``h + 1``.  Composite actions are
plain tuples of indices, enumerated in lexicographic order everywhere.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import jsonio
from .errors import CapacityError, ConfigurationError, FeasibilityError, StructuralError
from .rng import stream

SPEC_FORMAT = "hcucb-environment-spec"
SPEC_VERSION = 1
MAX_ENUMERATION = 10**6
FEASIBILITY_SAMPLE = 10_000
MAX_REPAIR_ATTEMPTS = 1000
COST_TOL = 1e-12

CONTEXT_KINDS = ("uniform-ball", "fixed-set", "gaussian-clipped")
NOISE_KINDS = ("gaussian", "uniform")
VALUE_RANGES = ("symmetric", "unit")


@dataclass(frozen=True)
class ContextDistribution:
    kind: str = "uniform-ball"
    scale: Optional[float] = None
    points: Optional[tuple] = None

    def __post_init__(self) -> None:
        if self.kind not in CONTEXT_KINDS:
            raise ConfigurationError(
                f"context_distribution.kind must be one of {CONTEXT_KINDS}, got {self.kind!r}")
        if self.kind == "fixed-set":
            if not self.points:
                raise ConfigurationError("fixed-set context distribution needs at least one point")
            pts = np.asarray(self.points, dtype=float)
            if pts.ndim != 2 or not np.all(np.isfinite(pts)):
                raise ConfigurationError("fixed-set points must be a finite 2-D array")
            if np.any(np.linalg.norm(pts, axis=1) > 1.0 + 1e-12):
                raise ConfigurationError("fixed-set points must lie in the unit ball")
            object.__setattr__(self, "points", tuple(tuple(float(v) for v in p) for p in pts))
        if self.kind == "gaussian-clipped" and self.scale is not None and not self.scale > 0:
            raise ConfigurationError("gaussian-clipped scale must be positive")

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "gaussian-clipped":
            out["scale"] = self.scale
        if self.kind == "fixed-set":
            out["points"] = [list(p) for p in self.points]
        return out

    @classmethod
    def from_dict(cls, data) -> "ContextDistribution":
        if isinstance(data, str):
            return cls(kind=data)
        pts = data.get("points")
        return cls(kind=data.get("kind", "uniform-ball"), scale=data.get("scale"),
                   points=tuple(tuple(p) for p in pts) if pts is not None else None)


class ActionSpace:
    """Shape of the composite action set, with an optional availability mask.

    ``mask`` maps a prefix (tuple of length ``0..levels-1``) to the indices
    allowed at the next level; unlisted prefixes allow everything.
    """

    def __init__(self, actions_per_level: Sequence[int], mask: Optional[dict] = None) -> None:
        self.actions_per_level = tuple(int(k) for k in actions_per_level)
        if not self.actions_per_level or any(k < 1 for k in self.actions_per_level):
            raise ConfigurationError("actions_per_level must be a non-empty list of positive integers")
        self.levels = len(self.actions_per_level)
        self.mask = {}
        for prefix, allowed in (mask or {}).items():
            prefix = tuple(int(i) for i in prefix)
            h = len(prefix)
            if h >= self.levels or any(not 0 <= a < k for a, k in zip(prefix, self.actions_per_level)):
                raise StructuralError(f"mask prefix {prefix} is not a valid proper prefix")
            allowed = tuple(sorted({int(a) for a in allowed}))
            if any(not 0 <= a < self.actions_per_level[h] for a in allowed):
                raise StructuralError(f"mask for prefix {prefix} names an out-of-range action")
            self.mask[prefix] = allowed
        self.full_shape = self.actions_per_level
        self.n_full = math.prod(self.actions_per_level)

    def allowed(self, prefix: tuple) -> tuple:
        h = len(prefix)
        return self.mask.get(tuple(prefix), tuple(range(self.actions_per_level[h])))

    def prefix_count(self, level: int) -> int:
        """Number of distinct prefixes of length ``level + 1``."""
        return math.prod(self.actions_per_level[: level + 1])

    def prefix_index(self, prefix: Sequence[int]) -> int:
        h = len(prefix)
        return int(np.ravel_multi_index(tuple(prefix), self.actions_per_level[:h]))

    def full_index(self, action: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(action), self.actions_per_level))

    def validate(self, action) -> tuple:
        action = tuple(int(a) for a in action)
        if len(action) != self.levels:
            raise StructuralError(f"composite action {action} must have {self.levels} entries")
        for h, a in enumerate(action):
            if a not in self.allowed(action[:h]):
                raise StructuralError(f"action index {a} is not available at level {h + 1} "
                                      f"after prefix {action[:h]}")
        return action

    @cached_property
    def all_actions(self) -> np.ndarray:
        """Every composite action (allowed or not) in lexicographic order, ``(n_full, H)``."""
        if self.n_full > MAX_ENUMERATION:
            raise CapacityError(f"{self.n_full} composite actions exceed the enumeration bound "
                                f"{MAX_ENUMERATION}")
        return np.array(list(itertools.product(*(range(k) for k in self.actions_per_level))),
                        dtype=np.int64).reshape(self.n_full, self.levels)

    @cached_property
    def full_allowed(self) -> np.ndarray:
        """Boolean array of shape ``full_shape``; true where the action is reachable."""
        allowed = np.ones(self.full_shape, dtype=bool)
        for prefix, ok in self.mask.items():
            sub = allowed[prefix]
            blocked = np.ones(self.actions_per_level[len(prefix)], dtype=bool)
            blocked[list(ok)] = False
            sub[blocked] = False
        for prefix in self.mask:
            if len(self.mask[prefix]) == 0 and self._reachable(prefix):
                raise StructuralError(f"prefix {prefix} has an empty action set")
        if not allowed.any():
            raise StructuralError("the action mask leaves no composite action available")
        return allowed

    def _reachable(self, prefix: tuple) -> bool:
        return all(prefix[h] in self.allowed(prefix[:h]) for h in range(len(prefix)))

    @cached_property
    def allowed_actions(self) -> np.ndarray:
        return self.all_actions[self.full_allowed.reshape(-1)]

    def prefix_to_level_index(self, level: int) -> np.ndarray:
        """For every full action (flat), the index of its level-``level`` prefix model."""
        return self.all_actions_prefix_indices[level]

    @cached_property
    def all_actions_prefix_indices(self) -> list:
        acts = self.all_actions
        return [np.ravel_multi_index(tuple(acts[:, : h + 1].T), self.actions_per_level[: h + 1])
                for h in range(self.levels)]

    def mask_to_list(self) -> Optional[list]:
        if not self.mask:
            return None
        return [{"prefix": list(p), "allowed": list(a)} for p, a in sorted(self.mask.items())]


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    """Ground truth of one hierarchical constrained bandit instance.

    ``reward_params`` has shape ``(*actions_per_level, dim)``;
    ``cost_params[h]`` has shape ``(*actions_per_level[:h+1], dim)``.
    """

    dim: int
    levels: int
    actions_per_level: tuple
    reward_params: np.ndarray
    cost_params: tuple
    thresholds: tuple
    noise_sigma: float
    context_distribution: ContextDistribution = field(default_factory=ContextDistribution)
    seed: int = 0
    noise_kind: str = "gaussian"
    value_range: str = "symmetric"
    action_mask: Optional[dict] = None

    def __post_init__(self) -> None:
        apl = tuple(int(k) for k in self.actions_per_level)
        object.__setattr__(self, "actions_per_level", apl)
        if self.dim < 1 or self.levels < 1 or len(apl) != self.levels:
            raise ConfigurationError("dim and levels must be positive and match actions_per_level")
        reward = np.array(self.reward_params, dtype=float)
        if reward.shape != apl + (self.dim,):
            raise StructuralError(f"reward_params must have shape {apl + (self.dim,)}, "
                                  f"got {reward.shape}")
        costs = []
        for h in range(self.levels):
            c = np.array(self.cost_params[h], dtype=float)
            if c.shape != apl[: h + 1] + (self.dim,):
                raise StructuralError(f"cost_params[{h}] must have shape "
                                      f"{apl[: h + 1] + (self.dim,)}, got {c.shape}")
            costs.append(c)
        for arr in [reward, *costs]:
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError("parameter vectors must be finite")
            if np.any(np.linalg.norm(arr, axis=-1) > 1.0 + 1e-12):
                raise ConfigurationError("every parameter vector must have norm <= 1")
            arr.setflags(write=False)
        object.__setattr__(self, "reward_params", reward)
        object.__setattr__(self, "cost_params", tuple(costs))
        thr = tuple(float(t) for t in self.thresholds)
        if len(thr) != self.levels or any(math.isnan(t) for t in thr):
            raise ConfigurationError("thresholds must be one non-NaN value per level")
        object.__setattr__(self, "thresholds", thr)
        if not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise ConfigurationError("noise_sigma must be finite and non-negative")
        if self.noise_kind not in NOISE_KINDS:
            raise ConfigurationError(f"noise_kind must be one of {NOISE_KINDS}")
        if self.value_range not in VALUE_RANGES:
            raise ConfigurationError(f"value_range must be one of {VALUE_RANGES}")
        if isinstance(self.context_distribution, (dict, str)):
            object.__setattr__(self, "context_distribution",
                               ContextDistribution.from_dict(self.context_distribution))
        cd = self.context_distribution
        if cd.kind == "fixed-set" and len(cd.points[0]) != self.dim:
            raise ConfigurationError("fixed-set points must have the context dimension")
        # validates the mask eagerly
        self.action_space.full_allowed

    @cached_property
    def action_space(self) -> ActionSpace:
        return ActionSpace(self.actions_per_level, self.action_mask)

    @cached_property
    def reward_matrix(self) -> np.ndarray:
        """``(n_full, dim)`` reward parameters in lexicographic action order."""
        return np.ascontiguousarray(self.reward_params.reshape(-1, self.dim))

    @cached_property
    def cost_matrix(self) -> np.ndarray:
        """``(levels, n_full, dim)``: each full action's level-h cost parameter."""
        space = self.action_space
        return np.stack([self.cost_params[h].reshape(-1, self.dim)[space.all_actions_prefix_indices[h]]
                         for h in range(self.levels)])

    @property
    def n_actions(self) -> int:
        return self.action_space.n_full

    def expected_all(self, context: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Expected reward ``(n_full,)`` and costs ``(levels, n_full)`` of every action."""
        return self.reward_matrix @ context, self.cost_matrix @ context

    def to_dict(self) -> dict:
        def fmt(t):
            return t if math.isfinite(t) else ("+inf" if t > 0 else "-inf")

        space = self.action_space
        reward_entries = [{"action": list(map(int, a)), "theta": self.reward_params[tuple(a)].tolist()}
                          for a in space.all_actions]
        cost_entries = []
        for h in range(self.levels):
            for prefix in itertools.product(*(range(k) for k in self.actions_per_level[: h + 1])):
                cost_entries.append({"level": h + 1, "prefix": list(prefix),
                                     "theta": self.cost_params[h][prefix].tolist()})
        return {
            "format": SPEC_FORMAT,
            "version": SPEC_VERSION,
            "dim": self.dim,
            "levels": self.levels,
            "actions_per_level": list(self.actions_per_level),
            "reward_params": reward_entries,
            "cost_params": cost_entries,
            "thresholds": [fmt(t) for t in self.thresholds],
            "noise_sigma": self.noise_sigma,
            "noise_kind": self.noise_kind,
            "context_distribution": self.context_distribution.to_dict(),
            "value_range": self.value_range,
            "action_mask": space.mask_to_list(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EnvironmentSpec":
        if data.get("format") != SPEC_FORMAT:
            raise ConfigurationError(f"not an environment spec document (format={data.get('format')!r})")
        if data.get("version") != SPEC_VERSION:
            raise ConfigurationError(f"unsupported spec version {data.get('version')!r}")
        dim = int(data["dim"])
        apl = tuple(int(k) for k in data["actions_per_level"])
        levels = int(data["levels"])
        reward = np.full(apl + (dim,), np.nan)
        for entry in data["reward_params"]:
            reward[tuple(entry["action"])] = entry["theta"]
        costs = [np.full(apl[: h + 1] + (dim,), np.nan) for h in range(levels)]
        for entry in data["cost_params"]:
            costs[int(entry["level"]) - 1][tuple(entry["prefix"])] = entry["theta"]
        if np.isnan(reward).any() or any(np.isnan(c).any() for c in costs):
            raise StructuralError("spec document is missing parameter entries")
        mask = None
        if data.get("action_mask"):
            mask = {tuple(e["prefix"]): tuple(e["allowed"]) for e in data["action_mask"]}
        return cls(
            dim=dim, levels=levels, actions_per_level=apl, reward_params=reward,
            cost_params=tuple(costs), thresholds=tuple(_parse_float(t) for t in data["thresholds"]),
            noise_sigma=float(data["noise_sigma"]),
            context_distribution=ContextDistribution.from_dict(data["context_distribution"]),
            seed=int(data["seed"]), noise_kind=data.get("noise_kind", "gaussian"),
            value_range=data.get("value_range", "symmetric"), action_mask=mask,
        )


def _parse_float(v) -> float:
    if isinstance(v, str):
        return {"+inf": math.inf, "inf": math.inf, "-inf": -math.inf}[v]
    return float(v)


def dump_spec(spec: EnvironmentSpec) -> str:
    return jsonio.dumps(spec.to_dict())


def save_spec(spec: EnvironmentSpec, path) -> Path:
    path = Path(path)
    path.write_text(dump_spec(spec))
    return path


def load_spec(path) -> EnvironmentSpec:
    return EnvironmentSpec.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RoundObservation:
    context: np.ndarray
    reward: float
    costs: list
    expected_reward: float
    expected_costs: list


def _unit_ball(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """``n`` points uniform in the ``d``-ball; consumes ``n*d`` normals then ``n`` uniforms."""
    g = rng.standard_normal((n, d))
    u = rng.random(n)
    norms = np.linalg.norm(g, axis=1)
    norms[norms == 0] = 1.0
    return g / norms[:, None] * (u ** (1.0 / d))[:, None]


def draw_context(spec: EnvironmentSpec, rng: np.random.Generator) -> np.ndarray:
    cd = spec.context_distribution
    d = spec.dim
    if cd.kind == "fixed-set":
        pts = _fixed_points(spec)
        x = pts[int(rng.integers(len(pts)))].copy()
    elif cd.kind == "uniform-ball":
        x = _unit_ball(rng, 1, d)[0]
    else:
        scale = cd.scale if cd.scale is not None else 1.0 / math.sqrt(d)
        x = scale * rng.standard_normal(d)
        n = math.sqrt(float(x @ x))
        if n > 1.0:
            x = x / n
    if spec.value_range == "unit":
        x = np.abs(x)
    return x


def _fixed_points(spec: EnvironmentSpec) -> np.ndarray:
    pts = np.asarray(spec.context_distribution.points, dtype=float)
    return np.abs(pts) if spec.value_range == "unit" else pts


def feasibility_check_contexts(spec_like: EnvironmentSpec, seed: int) -> np.ndarray:
    """Contexts on which the feasibility witness is enforced.

    Exhaustive for a fixed set, otherwise a fixed-size sample from the
    context distribution.
    """
    if spec_like.context_distribution.kind == "fixed-set":
        return _fixed_points(spec_like)
    rng = stream(seed, "feasibility")
    return np.stack([draw_context(spec_like, rng) for _ in range(FEASIBILITY_SAMPLE)])


def pull(spec: EnvironmentSpec, context, action, rng: np.random.Generator) -> RoundObservation:
    """Noisy reward and per-level costs of ``action`` at ``context``.

    Always consumes ``levels + 1`` noise draws so trajectories stay aligned
    across agents.
    """
    action = spec.action_space.validate(action)
    x = np.asarray(context, dtype=float)
    if x.shape != (spec.dim,):
        raise StructuralError(f"context must have shape ({spec.dim},)")
    exp_r = float(spec.reward_params[action] @ x)
    exp_c = [float(spec.cost_params[h][action[: h + 1]] @ x) for h in range(spec.levels)]
    if spec.noise_kind == "gaussian":
        z = rng.standard_normal(spec.levels + 1)
    else:
        z = rng.uniform(-1.0, 1.0, spec.levels + 1)
    z = spec.noise_sigma * z
    return RoundObservation(
        context=x,
        reward=exp_r + float(z[0]),
        costs=[c + float(zc) for c, zc in zip(exp_c, z[1:])],
        expected_reward=exp_r,
        expected_costs=exp_c,
    )


def feasible_mask(spec: EnvironmentSpec, costs: np.ndarray) -> np.ndarray:
    """Flat boolean mask of allowed actions whose true costs meet every threshold."""
    thr = np.asarray(spec.thresholds)[:, None]
    return np.all(costs <= thr, axis=0) & spec.action_space.full_allowed.reshape(-1)


def best_feasible(spec: EnvironmentSpec, context) -> Optional[tuple[tuple, float]]:
    """Best allowed action whose true expected costs meet every threshold.

    Returns ``(action, expected_reward)``, or ``None`` when no action is
    feasible at this context.  Ties go to the lexicographically smallest
    action.
    """
    if spec.n_actions > MAX_ENUMERATION:
        raise CapacityError(f"{spec.n_actions} composite actions exceed the enumeration bound")
    x = np.asarray(context, dtype=float)
    rewards, costs = spec.expected_all(x)
    ok = feasible_mask(spec, costs)
    if not ok.any():
        return None
    idx = int(np.argmax(np.where(ok, rewards, -np.inf)))
    return tuple(int(a) for a in spec.action_space.all_actions[idx]), float(rewards[idx])


def _witness_deficit(cost_matrix: np.ndarray, thresholds: np.ndarray, allowed: np.ndarray,
                     contexts: np.ndarray) -> float:
    """Smallest uniform threshold increase making every context feasible."""
    worst = -np.inf
    for start in range(0, len(contexts), 1000):
        # (levels, chunk, n_full)
        costs = np.einsum("hkd,nd->hnk", cost_matrix, contexts[start:start + 1000])
        excess = np.max(costs - thresholds[:, None, None], axis=0)
        excess[:, ~allowed] = np.inf
        worst = max(worst, float(np.max(np.min(excess, axis=1))))
    return worst


def _ball_params(rng, shape, dim, fold):
    n = math.prod(shape)
    theta = _unit_ball(rng, n, dim).reshape(tuple(shape) + (dim,))
    return np.abs(theta) if fold else theta


def generate_spec(dim: int, levels: int, actions_per_level: Sequence[int],
                  thresholds: Sequence[float], noise_sigma: float, seed: int, *,
                  context_distribution=None, noise_kind: str = "gaussian",
                  value_range: str = "symmetric", action_mask: Optional[dict] = None,
                  allow_threshold_inflation: bool = True) -> EnvironmentSpec:
    """Draw a random instance that admits a feasible action at every checked context.

    Parameters are uniform in the unit ball (folded into the positive orthant
    when ``value_range == "unit"``).  Cost parameters are redrawn until a
    feasibility witness exists on the check contexts; if that fails
    :data:`MAX_REPAIR_ATTEMPTS` times, thresholds are raised by the minimal
    common amount (when ``allow_threshold_inflation``).
    """
    if int(dim) != dim or dim < 1 or int(levels) != levels or levels < 1:
        raise ConfigurationError("dim and levels must be positive integers")
    apl = tuple(int(k) for k in actions_per_level)
    if len(apl) != levels or any(k < 1 for k in apl):
        raise ConfigurationError("actions_per_level must list one positive count per level")
    thr = np.array([float(t) for t in thresholds])
    if len(thr) != levels or np.isnan(thr).any() or (thr == -np.inf).any():
        raise ConfigurationError("thresholds must be one finite (or +inf) value per level")
    if math.prod(apl) > MAX_ENUMERATION:
        raise CapacityError("too many composite actions for exhaustive feasibility checks")
    if context_distribution is None:
        context_distribution = ContextDistribution()
    elif not isinstance(context_distribution, ContextDistribution):
        context_distribution = ContextDistribution.from_dict(context_distribution)
    fold = value_range == "unit"
    rng = stream(seed, "spec")
    reward = _ball_params(rng, apl, dim, fold)
    costs = [_ball_params(rng, apl[: h + 1], dim, fold) for h in range(levels)]

    def build(cost_list, thresholds_):
        return EnvironmentSpec(
            dim=int(dim), levels=int(levels), actions_per_level=apl, reward_params=reward,
            cost_params=tuple(cost_list), thresholds=tuple(float(t) for t in thresholds_),
            noise_sigma=float(noise_sigma), context_distribution=context_distribution,
            seed=int(seed), noise_kind=noise_kind, value_range=value_range, action_mask=action_mask)

    spec = build(costs, thr)
    contexts = feasibility_check_contexts(spec, seed)
    allowed = spec.action_space.full_allowed.reshape(-1)
    deficit = _witness_deficit(spec.cost_matrix, thr, allowed, contexts)
    attempts = 1
    while deficit > 0 and attempts < MAX_REPAIR_ATTEMPTS:
        costs = [_ball_params(rng, apl[: h + 1], dim, fold) for h in range(levels)]
        spec = build(costs, thr)
        deficit = _witness_deficit(spec.cost_matrix, thr, allowed, contexts)
        attempts += 1
    if deficit <= 0:
        return spec
    if not allow_threshold_inflation or not math.isfinite(deficit):
        raise FeasibilityError(
            f"no feasibility witness after {attempts} cost-parameter draws "
            f"(worst context exceeds the thresholds by {deficit:.6g}); raise the thresholds "
            f"or enable threshold inflation")
    raised = np.where(np.isfinite(thr), thr + deficit + COST_TOL, thr)
    spec = build(costs, raised)
    if _witness_deficit(spec.cost_matrix, raised, allowed, contexts) > 0:
        raise FeasibilityError("threshold inflation failed to produce a feasibility witness")
    return spec
