"""PPO agent for per-subcarrier power control."""

from .checkpoint import load_policy, save_policy
from .env import EnvConfig, Environment, EnvState, env_reset, env_step, observation, reward
from .ppo import (
    PolicyState,
    PPOConfig,
    Trajectory,
    clipped_surrogate,
    gae_compute,
    init_policy,
    normalize_advantages,
    policy_eval,
    ppo_loss,
    ppo_update,
)
from .train import TIMING_KEYS, evaluate, new_policy, train

__all__ = [
    "EnvConfig",
    "EnvState",
    "Environment",
    "PPOConfig",
    "PolicyState",
    "TIMING_KEYS",
    "Trajectory",
    "clipped_surrogate",
    "env_reset",
    "env_step",
    "evaluate",
    "gae_compute",
    "init_policy",
    "load_policy",
    "new_policy",
    "normalize_advantages",
    "observation",
    "policy_eval",
    "ppo_loss",
    "ppo_update",
    "reward",
    "save_policy",
    "train",
]
