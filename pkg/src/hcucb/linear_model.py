"""Online ridge regression with incremental inverse updates.

Each :class:`LinearModelState` keeps the regularized design matrix
``V = lam*I + sum x x^T``, its inverse, the response accumulator
``b = sum y x`` and the estimate ``theta_hat = V^{-1} b``.  The inverse is
updated with a Sherman-Morrison step and re-factorized densely every
:data:`REFACTOR_EVERY` absorptions to keep floating-point drift bounded.

:class:`ModelBank` stacks many models of the same dimension into contiguous
arrays so an agent can score every arm with a single ``einsum``; the
individual states it hands out are views into those arrays, so updating a
state updates the bank.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

REFACTOR_EVERY = 512
NORM_TOL = 1e-12


@dataclass(frozen=True)
class ConfidenceConfig:
    """Parameters of the self-normalized confidence radius.

    ``noise_scale`` multiplies the martingale term only; 1.0 is the
    unit-variance convention.
    """

    delta: float
    s_bound: float = 1.0
    lam: float = 1.0
    dim: int = 1
    noise_scale: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.delta < 1.0):
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta!r}")
        if not self.s_bound > 0:
            raise ConfigurationError(f"s_bound must be positive, got {self.s_bound!r}")
        if not self.lam > 0:
            raise ConfigurationError(f"lambda must be positive, got {self.lam!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigurationError(f"dim must be a positive integer, got {self.dim!r}")
        if not self.noise_scale >= 0:
            raise ConfigurationError(f"noise_scale must be non-negative, got {self.noise_scale!r}")


def compute_beta(cfg: ConfidenceConfig, t):
    """Confidence radius after ``t`` observations.

    ``sqrt(lam)*S + noise_scale*sqrt(2 log(1/delta) + d log(1 + t/(lam d)))``.
    ``t`` may be an integer or an array of counts; the return type follows.
    """
    if isinstance(t, (int, float, np.integer, np.floating)):
        if t < 0:
            raise ValueError("t must be non-negative")
        inner = 2.0 * math.log(1.0 / cfg.delta) + cfg.dim * math.log1p(t / (cfg.lam * cfg.dim))
        return math.sqrt(cfg.lam) * cfg.s_bound + cfg.noise_scale * math.sqrt(inner)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")
    d = cfg.dim
    inner = 2.0 * math.log(1.0 / cfg.delta) + d * np.log1p(t_arr / (cfg.lam * d))
    beta = math.sqrt(cfg.lam) * cfg.s_bound + cfg.noise_scale * np.sqrt(inner)
    if np.ndim(beta) == 0:
        return float(beta)
    return beta


def _check_context(x, dim: int, *, enforce_ball: bool) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ValueError(f"context must have shape ({dim},), got {x.shape}")
    if not math.isfinite(float(x.sum())):
        raise ValueError("context has non-finite entries")
    if enforce_ball and float(x @ x) > (1.0 + NORM_TOL) ** 2:
        raise ValueError(f"context norm {math.sqrt(float(x @ x))!r} exceeds 1")
    return x


class LinearModelState:
    """One regularized least-squares estimator.

    The array attributes may be views into a :class:`ModelBank`; mutate them
    only through :meth:`absorb`.
    """

    __slots__ = ("dim", "lam", "v_matrix", "v_inverse", "b_vector", "theta_hat",
                 "_count", "_potential")

    def __init__(self, dim: int, lam: float, *, _arrays=None) -> None:
        if int(dim) != dim or dim < 1:
            raise ConfigurationError(f"dim must be a positive integer, got {dim!r}")
        if not (lam > 0 and math.isfinite(lam)):
            raise ConfigurationError(f"lambda must be positive, got {lam!r}")
        self.dim = int(dim)
        self.lam = float(lam)
        if _arrays is None:
            v = lam * np.eye(self.dim)
            v_inv = np.eye(self.dim) / lam
            _arrays = (v, v_inv, np.zeros(self.dim), np.zeros(self.dim),
                       np.zeros(1, dtype=np.int64), np.zeros(1))
        (self.v_matrix, self.v_inverse, self.b_vector, self.theta_hat,
         self._count, self._potential) = _arrays

    @property
    def count(self) -> int:
        return int(self._count[0])

    @property
    def potential(self) -> float:
        """Running sum of ``||x_t||^2`` in the pre-update inverse metric."""
        return float(self._potential[0])

    def absorb(self, x, y: float) -> "LinearModelState":
        """Add one observation ``(x, y)`` in place and return ``self``."""
        x = _check_context(x, self.dim, enforce_ball=True)
        y = float(y)
        if not math.isfinite(y):
            raise ValueError("response must be finite")
        vx = self.v_inverse @ x
        quad = float(x @ vx)
        self.v_matrix += np.outer(x, x)
        self.b_vector += y * x
        self._count[0] += 1
        self._potential[0] += quad
        if self._count[0] % REFACTOR_EVERY == 0:
            self.refactor()
        else:
            self.v_inverse -= np.outer(vx, vx) / (1.0 + quad)
            self.theta_hat[:] = self.v_inverse @ self.b_vector
        return self

    def refactor(self) -> None:
        """Recompute the inverse and estimate from ``v_matrix`` directly."""
        chol = np.linalg.cholesky(self.v_matrix)
        eye = np.eye(self.dim)
        l_inv = np.linalg.solve(chol, eye)
        self.v_inverse[:] = l_inv.T @ l_inv
        self.theta_hat[:] = self.v_inverse @ self.b_vector

    def bonus(self, x) -> float:
        return mahalanobis_bonus(self, x)

    def ellipsoid_norm(self, theta) -> float:
        """``||theta_hat - theta||_V``, the distance used for coverage checks."""
        diff = self.theta_hat - np.asarray(theta, dtype=float)
        return math.sqrt(max(float(diff @ self.v_matrix @ diff), 0.0))

    def copy(self) -> "LinearModelState":
        arrays = (self.v_matrix.copy(), self.v_inverse.copy(), self.b_vector.copy(),
                  self.theta_hat.copy(), self._count.copy(), self._potential.copy())
        return LinearModelState(self.dim, self.lam, _arrays=arrays)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "lambda": self.lam,
            "count": self.count,
            "v_matrix": self.v_matrix.tolist(),
            "b_vector": self.b_vector.tolist(),
            "theta_hat": self.theta_hat.tolist(),
        }

    def __repr__(self) -> str:
        return f"LinearModelState(dim={self.dim}, lam={self.lam}, count={self.count})"


def new_model(dim: int, lam: float) -> LinearModelState:
    return LinearModelState(dim, lam)


def absorb(state: LinearModelState, x, y: float) -> LinearModelState:
    return state.absorb(x, y)


def mahalanobis_bonus(state: LinearModelState, x) -> float:
    """``sqrt(x^T V^{-1} x)``."""
    x = _check_context(x, state.dim, enforce_ball=False)
    return math.sqrt(max(float(x @ state.v_inverse @ x), 0.0))


class ModelBank:
    """A fixed-size collection of models sharing ``dim`` and ``lam``.

    Attributes ``v_matrix``, ``v_inverse`` (``(n, d, d)``), ``b_vector``,
    ``theta_hat`` (``(n, d)``) and ``counts`` (``(n,)``) are the backing
    storage of the per-model states returned by indexing.
    """

    def __init__(self, size: int, dim: int, lam: float) -> None:
        if size < 1:
            raise ConfigurationError("a model bank needs at least one model")
        if int(dim) != dim or dim < 1:
            raise ConfigurationError(f"dim must be a positive integer, got {dim!r}")
        if not lam > 0:
            raise ConfigurationError(f"lambda must be positive, got {lam!r}")
        self.dim = int(dim)
        self.lam = float(lam)
        eye = np.eye(self.dim)
        self.v_matrix = np.repeat((lam * eye)[None], size, axis=0)
        self.v_inverse = np.repeat((eye / lam)[None], size, axis=0)
        self.b_vector = np.zeros((size, self.dim))
        self.theta_hat = np.zeros((size, self.dim))
        self.counts = np.zeros(size, dtype=np.int64)
        self.potentials = np.zeros(size)
        self._states = [
            LinearModelState(
                self.dim, self.lam,
                _arrays=(self.v_matrix[i], self.v_inverse[i], self.b_vector[i],
                         self.theta_hat[i], self.counts[i:i + 1], self.potentials[i:i + 1]),
            )
            for i in range(size)
        ]

    def __len__(self) -> int:
        return len(self._states)

    def __getitem__(self, i: int) -> LinearModelState:
        return self._states[i]

    def __iter__(self):
        return iter(self._states)

    def estimates(self, x: np.ndarray) -> np.ndarray:
        """``theta_hat_i^T x`` for every model."""
        return self.theta_hat @ x

    def bonuses(self, x: np.ndarray) -> np.ndarray:
        """``||x||_{V_i^{-1}}`` for every model."""
        quad = np.einsum("i,kij,j->k", x, self.v_inverse, x)
        return np.sqrt(np.maximum(quad, 0.0))

    def betas(self, cfg: ConfidenceConfig) -> np.ndarray:
        return np.asarray(compute_beta(cfg, self.counts), dtype=float).reshape(len(self))
