"""Power-control environment: one channel realization per episode.

The agent nudges every (user, subcarrier) power by at most ``max_step_db``
per step. Rates are SIC rates under the fixed descending-norm order, and
the reward trades sum rate against energy and target shortfall.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from ..baselines import heuristic_order
from ..capacity import sic_rates
from ..errors import DomainError


@dataclass(frozen=True)
class EnvConfig:
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 10.0
    max_step_db: float = 1.0
    horizon: int = 64
    init_fraction: float = 0.1
    p_max: float = 1.0

    @classmethod
    def for_scenario(cls, scenario, **kw):
        return cls(p_max=scenario.max_power_mw, **kw)

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class EnvState:
    p: np.ndarray
    rates: np.ndarray
    targets: np.ndarray
    t: int = 0
    done: bool = False

    @property
    def energy(self):
        return self.p.sum(axis=1)


def reward(rates, energy, targets, config):
    """alpha * sum R - beta * sum E - gamma * sum max(0, b - R)."""
    rates = np.asarray(rates, dtype=float)
    short = np.maximum(np.asarray(targets, dtype=float) - rates, 0.0)
    return float(config.alpha * rates.sum() - config.beta * np.sum(energy) - config.gamma * short.sum())


def env_reset(H, targets, sigma2, config, order=None):
    """Every user starts with ``init_fraction * p_max`` spread evenly over the subcarriers."""
    U, N, _ = H.shape
    order = heuristic_order(H) if order is None else order
    p = np.full((U, N), config.init_fraction * config.p_max / N)
    return EnvState(p, sic_rates(H, p, order, sigma2), np.asarray(targets, dtype=float).copy(), 0, False)


def env_step(state, action, H, sigma2, config, order=None):
    """Apply a dB action to every power and recompute the SIC rates.

    ``action`` has U*N entries in user-major order. Returns ``(state', reward)``.
    """
    action = np.asarray(action, dtype=float)
    if not np.all(np.isfinite(action)):
        raise DomainError("action contains non-finite entries")
    U, N, _ = H.shape
    if action.size != U * N:
        raise DomainError(f"action must have {U * N} entries, got {action.size}")
    order = heuristic_order(H) if order is None else order
    step = np.clip(action.reshape(U, N), -config.max_step_db, config.max_step_db)
    p = np.clip(state.p * 10.0 ** (step / 10.0), 0.0, config.p_max)
    rates = sic_rates(H, p, order, sigma2)
    t = state.t + 1
    nxt = EnvState(p, rates, state.targets, t, t >= config.horizon)
    return nxt, reward(rates, p.sum(axis=1), state.targets, config)


def observation(state, config):
    """Powers in dB relative to p_max, achieved rates, targets and the elapsed fraction."""
    p_db = 10.0 * np.log10(np.maximum(state.p, 1e-30) / config.p_max)
    return np.concatenate([np.maximum(p_db, -300.0).ravel(), state.rates, state.targets,
                           [state.t / config.horizon]])


def observation_size(U, N):
    return U * N + 2 * U + 1


class Environment:
    """Binds a channel realization to the step function."""

    def __init__(self, H, targets, sigma2, config):
        self.H = np.asarray(H, dtype=np.complex128)
        self.targets = np.asarray(targets, dtype=float)
        self.sigma2 = float(sigma2)
        self.config = config
        self.order = heuristic_order(self.H)
        if not math.isfinite(self.sigma2) or self.sigma2 <= 0:
            raise DomainError("noise power must be positive")

    def reset(self):
        return env_reset(self.H, self.targets, self.sigma2, self.config, self.order)

    def step(self, state, action):
        return env_step(state, action, self.H, self.sigma2, self.config, self.order)
