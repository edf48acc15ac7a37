"""PPO self-training for one microgrid agent.

The policy is a diagonal Gaussian over a pre-squash variable ``u``; the
environment receives ``tanh(u)`` in [-1, 1]. Because the squash does not
depend on the parameters, probability ratios are computed on ``u`` alone.

Sign conventions: :func:`actor_loss` returns the clipped surrogate to be
*maximized* together with its gradient; :func:`critic_loss` returns the
mean squared TD error to be *minimized*. The update step negates the
surrogate gradient before handing it to Adam.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, fields
from typing import Protocol, Sequence

import numpy as np

from .config import PpoHyper
from .mlp import AdamState, AgentSpec, ParamVector, adam_step, backward, flatten, forward, forward_cached, init_params, unflatten

_LOG_2PI = math.log(2.0 * math.pi)


class TrainingError(RuntimeError):
    pass


class PpoEnv(Protocol):
    def reset(self, seed=None): ...
    def observe(self, state) -> np.ndarray: ...
    def step_unit(self, unit_action): ...


def gae(rewards: Sequence[float], values: Sequence[float], gamma: float, lam: float) -> np.ndarray:
    """Advantages by the backward recursion ``A_t = delta_t + gamma*lam*A_{t+1}``.

    ``values`` carries one bootstrap entry past the last reward (0 at a
    terminal state).
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.shape != (r.size + 1,):
        raise ValueError(f"need {r.size + 1} values for {r.size} rewards, got {v.size}")
    deltas = r + gamma * v[1:] - v[:-1]
    adv = np.empty_like(r)
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        adv[t] = acc
    return adv


def gaussian_log_prob(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (u - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=-1)


def squash_correction(u: np.ndarray) -> np.ndarray:
    """log |d tanh(u)/du| summed over action dimensions."""
    return np.sum(2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u)), axis=-1)


def _policy_head(spec: AgentSpec, actor: np.ndarray, hyper: PpoHyper):
    raw = actor[spec.actor.n_params :]
    log_std = np.clip(raw, hyper.log_std_min, hyper.log_std_max)
    free = (raw >= hyper.log_std_min) & (raw <= hyper.log_std_max)
    return log_std, free


def actor_loss(
    spec: AgentSpec,
    actor: np.ndarray,
    obs: np.ndarray,
    u: np.ndarray,
    old_logp: np.ndarray,
    adv: np.ndarray,
    clip_eps: float,
    hyper: PpoHyper = PpoHyper(),
) -> tuple[float, np.ndarray]:
    """Clipped surrogate ``mean(min(rho*A, clip(rho, 1-eps, 1+eps)*A))`` and its gradient.

    ``old_logp`` are Gaussian log-densities of ``u`` under the behaviour
    policy. Advantages are constants.
    """
    n = obs.shape[0]
    net = actor[: spec.actor.n_params]
    mean, acts = forward_cached(spec.actor, net, obs)
    log_std, free = _policy_head(spec, actor, hyper)
    logp = gaussian_log_prob(u, mean, log_std)
    with np.errstate(over="ignore"):
        ratio = np.exp(logp - old_logp)
    if not np.all(np.isfinite(ratio)):
        raise TrainingError("non-finite probability ratio in actor loss")
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    objective = float(np.mean(np.minimum(unclipped, clipped)))

    # gradient flows only where the unclipped branch is the minimum
    coef = np.where(unclipped <= clipped, ratio * adv, 0.0) / n
    inv_var = np.exp(-2.0 * log_std)
    d_mean = coef[:, None] * (u - mean) * inv_var
    g_net, _ = backward(spec.actor, net, obs, d_mean, acts)
    z2 = (u - mean) ** 2 * inv_var
    g_log_std = np.sum(coef[:, None] * (z2 - 1.0), axis=0) * free
    return objective, np.concatenate([g_net, g_log_std])


def critic_loss(
    spec: AgentSpec,
    critic: np.ndarray,
    obs: np.ndarray,
    next_obs: np.ndarray,
    rewards: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    faithful: bool = True,
) -> tuple[float, np.ndarray]:
    """Mean squared TD error ``(gamma*V(s') + r - V(s))^2``; ``V(s') = 0`` after a terminal step.

    With ``faithful=True`` the gradient also flows through ``V(s')``;
    otherwise the bootstrap target is held fixed.
    """
    n = obs.shape[0]
    v, acts = forward_cached(spec.critic, critic, obs)
    v = v[:, 0]
    live = 1.0 - np.asarray(dones, dtype=float)
    v_next, acts_next = forward_cached(spec.critic, critic, next_obs)
    v_next = v_next[:, 0] * live
    delta = gamma * v_next + rewards - v
    loss = float(np.mean(delta * delta))
    g, _ = backward(spec.critic, critic, obs, (-2.0 * delta / n)[:, None], acts)
    if faithful:
        g_next, _ = backward(spec.critic, critic, next_obs, (2.0 * gamma * delta * live / n)[:, None], acts_next)
        g = g + g_next
    return loss, g


class Agent:
    """Actor, critic and their optimizers. Owned by one learner."""

    def __init__(self, spec: AgentSpec, hyper: PpoHyper, rng: np.random.Generator | None = None):
        self.spec = spec
        self.hyper = hyper
        rng = rng if rng is not None else np.random.default_rng(0)
        self.actor = np.concatenate([init_params(spec.actor, rng), np.full(spec.n_log_std, hyper.log_std_init)])
        self.critic = init_params(spec.critic, rng)
        self.actor_opt = AdamState.zeros(spec.n_actor, hyper.lr_actor)
        self.critic_opt = AdamState.zeros(spec.critic.n_params, hyper.lr_critic)

    def params(self) -> ParamVector:
        return flatten(self.actor, self.critic, self.spec)

    def load(self, vec: ParamVector, reset_optim: bool = True) -> None:
        self.actor, self.critic = unflatten(vec, self.spec)
        if reset_optim:
            self.actor_opt.reset()
            self.critic_opt.reset()

    def clone(self) -> "Agent":
        return copy.deepcopy(self)

    def mean_and_log_std(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mean = forward(self.spec.actor, self.actor[: self.spec.actor.n_params], obs)
        log_std, _ = _policy_head(self.spec, self.actor, self.hyper)
        return mean, log_std

    def value(self, obs: np.ndarray) -> np.ndarray:
        out = forward(self.spec.critic, self.critic, obs)
        return out[..., 0]

    def sample(self, obs: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw pre-squash actions; returns ``(u, gaussian_log_prob)``."""
        mean, log_std = self.mean_and_log_std(obs)
        u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        return u, gaussian_log_prob(u, mean, log_std)

    def act_deterministic(self, obs: np.ndarray) -> np.ndarray:
        mean, _ = self.mean_and_log_std(obs)
        return np.tanh(mean)


@dataclass
class EpochStats:
    epoch: int
    mean_reward: float
    actor_loss: float
    critic_loss: float
    mean_abs_dev: float
    cost_cg: float
    cost_ba: float
    eval_reward: float
    eval_abs_dev: float


TRAINING_COLUMNS = tuple(f.name for f in fields(EpochStats))


@dataclass
class Rollout:
    obs: np.ndarray
    next_obs: np.ndarray
    u: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray  # raw, unscaled
    dones: np.ndarray
    episode_ids: np.ndarray
    episode_rewards: np.ndarray
    abs_dev: float
    cost_cg: float
    cost_ba: float

    def __len__(self) -> int:
        return self.rewards.size


def collect(agent: Agent, env, n_episodes: int, rng: np.random.Generator) -> Rollout:
    """Run ``n_episodes`` stochastic episodes in lockstep on copies of ``env``."""
    envs = [copy.copy(env) for _ in range(n_episodes)]
    states = [e.reset(int(rng.integers(2**63))) for e in envs]
    live = list(range(n_episodes))
    buf = {k: [] for k in ("obs", "next_obs", "u", "logp", "rewards", "dones", "episode_ids")}
    ep_reward = np.zeros(n_episodes)
    dev = cg = ba = 0.0
    while live:
        obs = np.stack([envs[i].observe(states[i]) for i in live])
        u, logp = agent.sample(obs, rng)
        a = np.tanh(u)
        still = []
        for row, i in enumerate(live):
            out = envs[i].step_unit(a[row])
            buf["obs"].append(obs[row])
            buf["next_obs"].append(envs[i].observe(out.next_state))
            buf["u"].append(u[row])
            buf["logp"].append(logp[row])
            buf["rewards"].append(out.reward)
            buf["dones"].append(out.done)
            buf["episode_ids"].append(i)
            ep_reward[i] += out.reward
            dev += abs(getattr(out, "deviation", 0.0))
            cg += getattr(out, "cost_cg", 0.0)
            ba += getattr(out, "cost_ba", 0.0)
            states[i] = out.next_state
            if not out.done:
                still.append(i)
        live = still
    arr = {k: np.asarray(v, dtype=float) for k, v in buf.items()}
    n = arr["rewards"].size
    # keep each episode contiguous for GAE
    order = np.argsort(arr["episode_ids"], kind="stable")
    arr = {k: v[order] for k, v in arr.items()}
    return Rollout(
        obs=arr["obs"],
        next_obs=arr["next_obs"],
        u=arr["u"],
        logp=arr["logp"],
        rewards=arr["rewards"],
        dones=arr["dones"],
        episode_ids=arr["episode_ids"].astype(int),
        episode_rewards=ep_reward,
        abs_dev=dev / n,
        cost_cg=cg / n_episodes,
        cost_ba=ba / n_episodes,
    )


def advantages(agent: Agent, roll: Rollout, hyper: PpoHyper) -> tuple[np.ndarray, np.ndarray]:
    """GAE per episode on scaled rewards. Returns ``(advantages, lambda_returns)``."""
    scale = hyper.reward_scale
    values = agent.value(roll.obs)
    adv = np.empty_like(values)
    for ep in np.unique(roll.episode_ids):
        idx = np.flatnonzero(roll.episode_ids == ep)
        last = idx[-1]
        boot = 0.0 if roll.dones[last] else float(agent.value(roll.next_obs[last]))
        v = np.append(values[idx], boot)
        adv[idx] = gae(roll.rewards[idx] * scale, v, hyper.gamma, hyper.gae_lambda)
    returns = adv + values
    if hyper.normalize_advantages and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


def return_loss(spec: AgentSpec, critic: np.ndarray, obs: np.ndarray, returns: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error against fixed lambda-return targets."""
    v, acts = forward_cached(spec.critic, critic, obs)
    err = v[:, 0] - returns
    g, _ = backward(spec.critic, critic, obs, (2.0 * err / err.size)[:, None], acts)
    return float(np.mean(err * err)), g


def update(agent: Agent, roll: Rollout, hyper: PpoHyper, rng: np.random.Generator | None = None) -> tuple[float, float]:
    """PPO passes over one rollout. Returns the first pass's losses.

    With ``hyper.minibatches > 1`` each pass visits a fresh permutation in
    that many chunks; this needs ``rng``.
    """
    adv, returns = advantages(agent, roll, hyper)
    rewards = roll.rewards * hyper.reward_scale
    n = len(roll)
    first = None
    for _ in range(hyper.epochs_per_update):
        if hyper.minibatches > 1:
            chunks = np.array_split(rng.permutation(n), hyper.minibatches)
        else:
            chunks = [slice(None)]
        for idx in chunks:
            obj, g_actor = actor_loss(
                agent.spec, agent.actor, roll.obs[idx], roll.u[idx], roll.logp[idx], adv[idx], hyper.clip_eps, hyper
            )
            if hyper.critic_target == "gae":
                c_loss, g_critic = return_loss(agent.spec, agent.critic, roll.obs[idx], returns[idx])
            else:
                c_loss, g_critic = critic_loss(
                    agent.spec, agent.critic, roll.obs[idx], roll.next_obs[idx], rewards[idx], roll.dones[idx],
                    hyper.gamma, hyper.faithful_critic,
                )
            if not (math.isfinite(obj) and math.isfinite(c_loss)):
                raise TrainingError(f"non-finite loss (actor {obj}, critic {c_loss})")
            if first is None:
                first = (-obj, c_loss)
            agent.actor, agent.actor_opt = adam_step(agent.actor_opt, agent.actor, -g_actor)
            agent.critic, agent.critic_opt = adam_step(agent.critic_opt, agent.critic, g_critic)
    return first if first is not None else (float("nan"), float("nan"))


def evaluate(agent: Agent, env, seeds: Sequence = (None,)) -> tuple[float, float, list]:
    """Deterministic (mean-action) episodes. Returns mean reward, mean |P_de| and the last trace."""
    rewards, devs, trace = [], [], []
    for seed in seeds:
        e = copy.copy(env)
        state = e.reset(seed)
        total, trace = 0.0, []
        while True:
            out = e.step_unit(agent.act_deterministic(e.observe(state)))
            trace.append(out)
            total += out.reward
            state = out.next_state
            if out.done:
                break
        rewards.append(total)
        devs.append(np.mean([abs(getattr(o, "deviation", 0.0)) for o in trace]))
    return float(np.mean(rewards)), float(np.mean(devs)), trace


def local_update(
    agent: Agent,
    env,
    hyper: PpoHyper,
    n_epochs: int,
    rng: np.random.Generator,
    first_epoch: int = 1,
) -> list[EpochStats]:
    """Run ``n_epochs`` of collect, GAE, and actor/critic Adam updates in place."""
    history = []
    for k in range(n_epochs):
        roll = collect(agent, env, hyper.episodes_per_epoch, rng)
        try:
            a_loss, c_loss = update(agent, roll, hyper, rng)
        except (TrainingError, ArithmeticError) as exc:
            raise TrainingError(f"epoch {first_epoch + k}: {exc}") from exc
        eval_reward, eval_dev, _ = evaluate(agent, env)
        history.append(
            EpochStats(
                epoch=first_epoch + k,
                mean_reward=float(roll.episode_rewards.mean()),
                actor_loss=a_loss,
                critic_loss=c_loss,
                mean_abs_dev=roll.abs_dev,
                cost_cg=roll.cost_cg,
                cost_ba=roll.cost_ba,
                eval_reward=eval_reward,
                eval_abs_dev=eval_dev,
            )
        )
    return history


def write_training_csv(history: Sequence[EpochStats], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(TRAINING_COLUMNS)
        for h in history:
            w.writerow([h.epoch, *(repr(float(getattr(h, c))) for c in TRAINING_COLUMNS[1:])])
