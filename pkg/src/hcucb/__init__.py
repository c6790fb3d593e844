"""Hierarchical constrained contextual bandits: online linear models, seeded
environments, HC-UCB and baseline agents, regret metrics, theory checks and
an experiment harness."""
from __future__ import annotations

from .agents import Agent, AgentConfig, Decision, hcucb_select, hcucb_update, make_agent
from .environment import (ActionSpace, ContextDistribution, EnvironmentSpec, best_feasible,
                          draw_context, generate_spec, load_spec, pull, save_spec)
from .errors import (CapacityError, ConfigurationError, FeasibilityError, PackingError,
                     StructuralError)
from .linear_model import ConfidenceConfig, LinearModelState, compute_beta
from .metrics import RunMetrics, sublinearity_summary

__version__ = "0.1.0"

__all__ = [
    "ActionSpace", "Agent", "AgentConfig", "CapacityError", "ConfidenceConfig",
    "ConfigurationError", "ContextDistribution", "Decision", "EnvironmentSpec",
    "FeasibilityError", "LinearModelState", "PackingError", "RunMetrics", "StructuralError",
    "best_feasible", "compute_beta", "draw_context", "generate_spec", "hcucb_select",
    "hcucb_update", "load_spec", "make_agent", "pull", "save_spec", "sublinearity_summary",
]
