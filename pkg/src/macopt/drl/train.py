"""Rollouts, the training loop and greedy evaluation against minPMAC."""

import math
import time

import numpy as np

from ..channel import ChannelTrace, mix64, substream
from ..errors import ConvergenceError, DomainError
from ..minpmac import min_pmac
from ..scenario import require_valid
from .env import EnvConfig, Environment, observation, observation_size
from .ppo import (
    PPOConfig,
    Trajectory,
    gae_compute,
    init_policy,
    log_prob,
    normalize_advantages,
    policy_eval,
    _forward,
    check_finite,
    ppo_update,
)

# Independent RNG stream families derived from the master seed.
_INIT, _EPISODE, _SHUFFLE = 0xD1, 0xD2, 0xD3

TIMING_KEYS = ("wall_time", "minpmac_wall_time", "speedup")


def _channels(H):
    h = H.h if isinstance(H, ChannelTrace) else np.asarray(H, dtype=np.complex128)
    if h.ndim == 3:
        h = h[None]
    if h.ndim != 4 or h.shape[0] == 0:
        raise DomainError("need channels of shape (trials, U, N, L)")
    return h


def new_policy(scenario, seed, config=None):
    config = config or PPOConfig()
    U, N = scenario.num_users, scenario.num_subcarriers
    rng = substream(mix64(seed, _INIT), 0)
    return init_policy(observation_size(U, N), U * N, rng, config.hidden, config.init_log_std)


def _discounted_running(rewards, discount):
    out = np.zeros(len(rewards))
    acc = 0.0
    for t, r in enumerate(rewards):
        acc = acc * discount + r
        out[t] = acc
    return out


def rollout(policy, env, rng, discount=0.99, learn_stats=True):
    """One stochastic episode.

    Observations are normalized with the running statistics (updated step by
    step when ``learn_stats``). The critic sees rewards divided by the running
    std of the discounted return, refreshed with this episode before scaling.
    """
    cfg = env.config
    check_finite(policy)
    state = env.reset()
    T = cfg.horizon
    obs, acts, raw, vals, logps = [], [], np.zeros(T), np.zeros(T), np.zeros(T)
    for t in range(T):
        o = observation(state, cfg)
        if learn_stats:
            policy.obs_norm.update(o)
        x = policy.obs_norm.normalize(o)
        mu, log_std, v = _forward(policy, x)
        a = mu + np.exp(log_std) * rng.standard_normal(mu.size)
        state, r = env.step(state, a)
        if not math.isfinite(r):
            raise ConvergenceError(f"non-finite reward at step {t}")
        obs.append(x)
        acts.append(a)
        raw[t] = r
        vals[t] = v
        logps[t] = float(log_prob(mu, log_std, a))
    if learn_stats:
        policy.ret_norm.update(_discounted_running(raw, discount)[:, None])
    scaled = raw / math.sqrt(float(policy.ret_norm.var[0]) + 1e-8)
    return Trajectory(np.array(obs), np.array(acts), scaled, vals, logps, info={"raw_rewards": raw,
                                                                                "final_state": state})


def train(scenario, H_train, env_config=None, config=None, seed=0, updates=None, callback=None):
    """Train a PPO policy on the channel realizations of ``H_train``.

    Returns ``(policy, curve)`` where ``curve[k]`` is the mean raw episode
    reward collected before update k. Stops after ``updates`` (default from
    ``config``) or on a plateau: the moving average of the curve over
    ``plateau_window`` updates has not beaten its best by more than
    ``min_improvement`` (relative) for ``patience`` updates.
    """
    require_valid(scenario)
    config = config or PPOConfig()
    env_config = env_config or EnvConfig.for_scenario(scenario)
    updates = config.updates if updates is None else int(updates)
    h = _channels(H_train)
    sigma2 = scenario.noise_power_mw
    targets = scenario.targets
    envs = [Environment(h[i], targets, sigma2, env_config) for i in range(h.shape[0])]

    policy = new_policy(scenario, seed, config)
    curve = []
    best, best_at = -np.inf, 0
    episode = 0
    for u in range(updates):
        trajs = []
        for _ in range(config.episodes_per_update):
            rng = substream(mix64(seed, _EPISODE), episode)
            episode += 1
            env = envs[int(rng.integers(len(envs)))]
            tr = rollout(policy, env, rng, config.discount)
            adv, ret = gae_compute(tr.rewards, tr.values, config.discount, config.gae_lambda, 0.0)
            tr.advantages, tr.returns = adv, ret
            trajs.append(tr)
        batch = Trajectory(
            np.concatenate([t.obs for t in trajs]),
            np.concatenate([t.actions for t in trajs]),
            np.concatenate([t.rewards for t in trajs]),
            np.concatenate([t.values for t in trajs]),
            np.concatenate([t.log_probs for t in trajs]),
            normalize_advantages(np.concatenate([t.advantages for t in trajs])),
            np.concatenate([t.returns for t in trajs]),
        )
        mean_reward = float(np.mean([t.info["raw_rewards"].sum() for t in trajs]))
        if not math.isfinite(mean_reward):
            raise ConvergenceError(f"episode reward diverged at update {u}")
        curve.append(mean_reward)
        policy, metrics = ppo_update(policy, batch, config, substream(mix64(seed, _SHUFFLE), u))
        if callback is not None:
            callback(u, mean_reward, metrics)
        smooth = float(np.mean(curve[-config.plateau_window :]))
        if u == 0 or smooth > best + config.min_improvement * max(1.0, abs(best)):
            best, best_at = smooth, u
        elif u - best_at >= config.patience:
            break
    return policy, curve


def greedy_episode(policy, env):
    """Mean-action rollout with frozen statistics; returns the final state and total reward."""
    state = env.reset()
    total = 0.0
    for _ in range(env.config.horizon):
        x = policy.obs_norm.normalize(observation(state, env.config))
        mu, _, _ = policy_eval(policy, x)
        state, r = env.step(state, mu)
        total += r
    return state, total


def evaluate(policy, scenario, H_eval, env_config=None, compare=True):
    """Greedy rollouts on every trial of ``H_eval``, optionally against minPMAC.

    Energy-efficiency is sum rate per unit energy; ``energy_efficiency_ratio``
    is the DRL value over the minPMAC value on the same trials. Wall times are
    seconds per instance and are the only non-deterministic entries (see
    ``TIMING_KEYS``).
    """
    require_valid(scenario)
    env_config = env_config or EnvConfig.for_scenario(scenario)
    h = _channels(H_eval)
    sigma2 = scenario.noise_power_mw
    targets = scenario.targets
    energy, rate, rewards, viol = [], [], [], 0
    ref_energy, ref_rate = [], []
    t_drl = t_ref = 0.0
    for i in range(h.shape[0]):
        env = Environment(h[i], targets, sigma2, env_config)
        t0 = time.perf_counter()
        state, total = greedy_episode(policy, env)
        t_drl += time.perf_counter() - t0
        energy.append(float(state.p.sum()))
        rate.append(float(state.rates.sum()))
        rewards.append(total)
        viol += int(np.any(state.rates < targets - 1e-6))
        if compare:
            t0 = time.perf_counter()
            sol = min_pmac(scenario, h[i])
            t_ref += time.perf_counter() - t0
            ref_energy.append(sol.total_energy)
            ref_rate.append(sol.sum_rate)
    n = h.shape[0]
    stats = {
        "trials": n,
        "mean_energy": float(np.mean(energy)),
        "mean_rate": float(np.mean(rate)),
        "mean_reward": float(np.mean(rewards)),
        "target_violations": viol,
        "wall_time": t_drl / n,
    }
    if compare:
        ee = stats["mean_rate"] / stats["mean_energy"]
        ee_ref = float(np.mean(ref_rate)) / float(np.mean(ref_energy))
        stats.update({
            "minpmac_mean_energy": float(np.mean(ref_energy)),
            "minpmac_mean_rate": float(np.mean(ref_rate)),
            "energy_efficiency_ratio": ee / ee_ref,
            "energy_ratio": float(np.mean(ref_energy)) / stats["mean_energy"],
            "rate_ratio": stats["mean_rate"] / float(np.mean(ref_rate)),
            "minpmac_wall_time": t_ref / n,
            "speedup": (t_ref / t_drl) if t_drl > 0 else math.inf,
        })
    return stats
