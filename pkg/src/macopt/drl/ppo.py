"""Gaussian actor-critic and the clipped-surrogate PPO update."""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConvergenceError, CorruptionError, DomainError
from .net import Adam, clip_by_global_norm, mlp_backward, mlp_forward, mlp_init, mlp_names

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PPOConfig:
    clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    epochs: int = 10
    minibatch: int = 64
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_grad_norm: float = 0.5
    discount: float = 0.99
    gae_lambda: float = 0.95
    hidden: int = 64
    init_log_std: float = -1.0
    episodes_per_update: int = 8
    updates: int = 500
    patience: int = 50
    min_improvement: float = 1e-3
    plateau_window: int = 10


class RunningNorm:
    """Running mean/variance merged batch by batch (parallel Welford)."""

    def __init__(self, size, count=0.0, mean=None, var=None):
        self.count = float(count)
        self.mean = np.zeros(size) if mean is None else np.asarray(mean, dtype=float).copy()
        self.var = np.ones(size) if var is None else np.asarray(var, dtype=float).copy()

    def update(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        if n == 0:
            return
        bm = x.mean(axis=0)
        bv = x.var(axis=0)
        tot = self.count + n
        delta = bm - self.mean
        m2 = self.var * self.count + bv * n + delta**2 * self.count * n / tot
        self.mean = self.mean + delta * n / tot
        self.var = m2 / tot
        self.count = tot

    def normalize(self, x, clip=10.0):
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -clip, clip)

    def copy(self):
        return RunningNorm(self.mean.size, self.count, self.mean, self.var)


@dataclass
class PolicyState:
    params: dict
    adam_m: dict
    adam_v: dict
    adam_t: int
    obs_norm: RunningNorm
    ret_norm: RunningNorm
    obs_dim: int
    act_dim: int
    hidden: int

    @property
    def log_std(self):
        return self.params["log_std"]

    def names(self):
        return param_names()

    def copy(self):
        cp = lambda d: {k: v.copy() for k, v in d.items()}
        return PolicyState(cp(self.params), cp(self.adam_m), cp(self.adam_v), self.adam_t, self.obs_norm.copy(),
                           self.ret_norm.copy(), self.obs_dim, self.act_dim, self.hidden)

    def flat(self):
        return np.concatenate([self.params[k].ravel() for k in param_names()])


def param_names():
    return mlp_names("actor") + ["log_std"] + mlp_names("critic")


def init_policy(obs_dim, act_dim, rng, hidden=64, init_log_std=0.0):
    params = {}
    params.update(mlp_init(rng, "actor", obs_dim, hidden, act_dim, out_scale=0.01))
    params["log_std"] = np.full(act_dim, float(init_log_std))
    params.update(mlp_init(rng, "critic", obs_dim, hidden, 1))
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return PolicyState(params, zeros, {k: v.copy() for k, v in zeros.items()}, 0, RunningNorm(obs_dim),
                       RunningNorm(1), obs_dim, act_dim, hidden)


def check_finite(policy):
    for k, v in policy.params.items():
        if not np.all(np.isfinite(v)):
            raise CorruptionError(f"parameter {k} has non-finite entries")


def policy_eval(policy, obs):
    """Forward pass on normalized observations.

    Returns ``(action_mean, log_std, value)``; a single observation gives
    1-D mean and scalar value, a batch gives (B, A) and (B,).
    """
    check_finite(policy)
    return _forward(policy, obs)


def _forward(policy, obs):
    x = np.asarray(obs, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if not np.all(np.isfinite(x)):
        raise DomainError("observation has non-finite entries")
    mu, _ = mlp_forward(policy.params, "actor", x)
    v, _ = mlp_forward(policy.params, "critic", x)
    if single:
        return mu[0], policy.log_std.copy(), float(v[0, 0])
    return mu, policy.log_std.copy(), v[:, 0]


def log_prob(mu, log_std, act):
    z = (act - mu) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mu.shape[-1] * LOG_2PI


def entropy(log_std):
    return float(np.sum(log_std) + 0.5 * log_std.size * (1.0 + LOG_2PI))


# -- advantages --------------------------------------------------------------------


def gae_compute(rewards, values, discount, lam, last_value=0.0):
    """Generalized advantage estimates for one episode; ``last_value`` bootstraps past the end."""
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.shape != v.shape:
        raise DomainError("rewards and values must have equal length")
    T = r.size
    adv = np.zeros(T)
    nxt = float(last_value)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        delta = r[t] + discount * nxt - v[t]
        acc = delta + discount * lam * acc
        adv[t] = acc
        nxt = v[t]
    return adv, adv + v


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=float)
    mu = adv.mean()
    sd = adv.std()
    return (adv - mu) / sd if sd > 0 else adv - mu


# -- objective ------------------------------------------------------------------------


def clipped_surrogate(ratio, adv, clip):
    """Per-sample min(rho * A, clip(rho, 1-eps, 1+eps) * A)."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


def _surrogate_weights(ratio, adv, clip):
    """d surrogate / d log pi per sample: rho * A where the unclipped branch is the minimum, else 0."""
    unclipped = ratio * adv
    use = unclipped <= np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    return np.where(use, unclipped, 0.0)


@dataclass
class Trajectory:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray = None
    returns: np.ndarray = None
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rewards)

    def take(self, idx):
        return Trajectory(self.obs[idx], self.actions[idx], self.rewards[idx], self.values[idx],
                          self.log_probs[idx], self.advantages[idx], self.returns[idx])


def policy_gradient(policy, batch, config, weights):
    """Loss and gradients for -mean(weights * log pi) + c_v * MSE(V, returns) - c_e * entropy.

    ``weights`` are per-sample derivatives of the policy surrogate with
    respect to log pi (the advantage for a plain policy-gradient step).
    """
    p = policy.params
    B = len(batch)
    mu, cache_a = mlp_forward(p, "actor", batch.obs)
    v, cache_c = mlp_forward(p, "critic", batch.obs)
    log_std = p["log_std"]
    std = np.exp(log_std)
    z = (batch.actions - mu) / std
    w = np.asarray(weights, dtype=float) / B

    d_mu = -w[:, None] * z / std
    grads = mlp_backward(p, "actor", cache_a, d_mu)
    grads["log_std"] = -(w[:, None] * (z * z - 1.0)).sum(axis=0) - config.entropy_coef * np.ones_like(log_std)
    err = v[:, 0] - batch.returns
    grads.update(mlp_backward(p, "critic", cache_c, (2.0 * config.value_coef / B) * err[:, None]))
    value_loss = float(np.mean(err**2))
    return value_loss, grads, (mu, z)


def ppo_loss(policy, batch, config):
    """Clipped PPO loss (to minimize) and its gradient for one minibatch."""
    mu, _ = mlp_forward(policy.params, "actor", batch.obs)
    logp = log_prob(mu, policy.params["log_std"], batch.actions)
    ratio = np.exp(logp - batch.log_probs)
    surr = clipped_surrogate(ratio, batch.advantages, config.clip)
    weights = _surrogate_weights(ratio, batch.advantages, config.clip)
    value_loss, grads, _ = policy_gradient(policy, batch, config, weights)
    ent = entropy(policy.params["log_std"])
    loss = -float(surr.mean()) + config.value_coef * value_loss - config.entropy_coef * ent
    metrics = {
        "loss": loss,
        "policy_loss": -float(surr.mean()),
        "value_loss": value_loss,
        "entropy": ent,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.clip)),
        "approx_kl": float(np.mean(batch.log_probs - logp)),
    }
    return loss, grads, metrics


def apply_gradients(policy, grads, config):
    """Global-norm clipping, one Adam step, log-std clamp and a finiteness check."""
    grads, norm = clip_by_global_norm(grads, config.max_grad_norm)
    opt = Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    policy.adam_t = opt.step(policy.params, grads, policy.adam_m, policy.adam_v, policy.adam_t)
    np.clip(policy.params["log_std"], LOG_STD_MIN, LOG_STD_MAX, out=policy.params["log_std"])
    check_finite(policy)
    return norm


def ppo_update(policy, batch, config, rng=None):
    """Run ``epochs`` passes of shuffled minibatches over ``batch``.

    ``batch.advantages`` must already be normalized. Returns
    ``(policy', metrics)``; the input policy is not modified.
    """
    policy = policy.copy()
    n = len(batch)
    size = min(config.minibatch, n)
    history = []
    for _ in range(config.epochs):
        idx = np.arange(n) if rng is None else rng.permutation(n)
        for start in range(0, n, size):
            mb = batch.take(idx[start : start + size])
            loss, grads, metrics = ppo_loss(policy, mb, config)
            if not math.isfinite(loss):
                raise ConvergenceError(f"non-finite PPO loss; last metrics {metrics}")
            metrics["grad_norm"] = apply_gradients(policy, grads, config)
            history.append(metrics)
    summary = {k: float(np.mean([h[k] for h in history])) for k in history[0]} if history else {}
    return policy, summary
