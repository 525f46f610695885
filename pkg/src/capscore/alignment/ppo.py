"""Clipped-surrogate policy optimization with KL-shaped rewards.

The loop follows the InstructGPT-style recipe: sample rollouts, shape
per-step rewards as -beta * (logpi - logpi_ref) with the sequence-level
reward-model score added at the terminal step, compute advantages with
GAE, then for a few inner epochs ascend the clipped surrogate (actor) and
descend a clipped L2 value loss (critic). Updates use Adam (eps 1e-8,
no weight decay). All gradients are analytic; tests check them against
central finite differences.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import NonFiniteLoss
from .policy import ToyPolicy, prompt_start_token, rollout_batch
from .reward_model import ToyRewardModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PPOConfig:
    """Hyper-parameters; defaults follow the reference recipe's table."""

    lr_actor: float = 1e-6
    lr_critic: float = 5e-6
    batch_size: int = 256
    kl_beta: float = 0.05
    gamma: float = 1.0
    lam: float = 0.95
    ppo_epochs: int = 1
    clip_eps: float = 0.2
    value_clip_eps: float = 0.2
    alpha_r: float = 0.5
    num_minibatches: int = 1

    def __post_init__(self):
        if not (0 < self.clip_eps < 1):
            raise ValueError("clip_eps must be in (0, 1)")
        if not (0 < self.value_clip_eps < 1):
            raise ValueError("value_clip_eps must be in (0, 1)")
        if not (0 <= self.gamma <= 1):
            raise ValueError("gamma must be in [0, 1]")
        if not (0 <= self.lam <= 1):
            raise ValueError("lam must be in [0, 1]")
        if self.batch_size < 1 or self.ppo_epochs < 1 or self.num_minibatches < 1:
            raise ValueError("batch_size, ppo_epochs and num_minibatches must be >= 1")


@dataclass
class Trajectory:
    """One rollout; all per-step arrays share the same length."""

    start_token: int
    tokens: np.ndarray
    logprobs: np.ndarray
    ref_logprobs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    advantages: Optional[np.ndarray] = None
    value_targets: Optional[np.ndarray] = None

    def __post_init__(self):
        lengths = {len(self.tokens), len(self.logprobs), len(self.ref_logprobs),
                   len(self.values), len(self.rewards)}
        if len(lengths) != 1:
            raise ValueError("per-step arrays must have equal lengths")

    @property
    def lasts(self) -> np.ndarray:
        """Last-token component of each visited state."""
        return np.concatenate(([self.start_token], self.tokens[:-1]))


class ValueFunction:
    """Linear critic over the same state features as the policy."""

    def __init__(self, max_len: int, vocab_size: int, params: Optional[np.ndarray] = None):
        self.max_len = max_len
        self.vocab_size = vocab_size
        n = max_len + vocab_size + 1
        self.params = np.zeros(n) if params is None else np.asarray(params, dtype=float)
        if self.params.shape != (n,):
            raise ValueError(f"critic params must have shape ({n},)")

    def copy(self) -> "ValueFunction":
        return ValueFunction(self.max_len, self.vocab_size, self.params.copy())

    def _last_row(self, last: np.ndarray) -> np.ndarray:
        idx = np.where(np.asarray(last) == -1, self.vocab_size, last)
        return self.max_len + idx

    def value(self, position: int, last: np.ndarray) -> np.ndarray:
        return self.params[position] + self.params[self._last_row(last)]

    def values_matrix(self, lasts: np.ndarray) -> np.ndarray:
        """(B, L) state values for a batch of last-token matrices."""
        _, length = lasts.shape
        cols = [self.value(t, lasts[:, t]) for t in range(length)]
        return np.stack(cols, axis=1)


def shaped_rewards(traj: Trajectory, kl_beta: float, terminal_reward: float) -> np.ndarray:
    """Per-step reward: -beta * (logpi - logpi_ref), terminal score at the end."""
    rewards = -kl_beta * (traj.logprobs - traj.ref_logprobs)
    rewards[-1] += terminal_reward
    return rewards


def gae_batch(
    rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation, vectorized over a (B, L) batch.

    delta_t = r_t + gamma * V_{t+1} - V_t with V_L = 0 (terminal bootstrap);
    A_t accumulates (gamma * lam)-discounted deltas; targets are A + V.
    """
    batch, length = rewards.shape
    advantages = np.zeros_like(rewards)
    next_values = np.zeros(batch)
    running = np.zeros(batch)
    for t in range(length - 1, -1, -1):
        delta = rewards[:, t] + gamma * next_values - values[:, t]
        running = delta + gamma * lam * running
        advantages[:, t] = running
        next_values = values[:, t]
    return advantages, advantages + values


def gae(traj: Trajectory, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    adv, targets = gae_batch(
        traj.rewards[None, :], traj.values[None, :], gamma, lam
    )
    return adv[0], targets[0]


# -- analytic objectives ----------------------------------------------------

def surrogate_and_grad(
    params: np.ndarray,
    policy_shape: tuple[int, int],
    batch: dict,
    clip_eps: float,
) -> tuple[float, np.ndarray, float]:
    """Mean clipped surrogate over tokens, its gradient, and the clip fraction.

    `batch` holds tokens/lasts/old_logprobs/advantages as (B, L) arrays.
    Gradient is zero on tokens where the clipped branch is active and binding.
    """
    max_len, vocab_size = policy_shape
    policy = ToyPolicy(vocab_size, max_len, params)
    tokens, lasts = batch["tokens"], batch["lasts"]
    old_logprobs, advantages = batch["old_logprobs"], batch["advantages"]
    n_batch, length = tokens.shape
    weight = 1.0 / (n_batch * length)

    total = 0.0
    clipped_tokens = 0
    grad = np.zeros_like(params)
    for t in range(length):
        last = lasts[:, t]
        logp_all = policy.log_probs(t, last)
        probs = np.exp(logp_all)
        actions = tokens[:, t]
        logp = logp_all[np.arange(n_batch), actions]
        ratio = np.exp(logp - old_logprobs[:, t])
        adv = advantages[:, t]
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * adv
        total += np.minimum(unclipped, clipped).sum() * weight
        clipped_tokens += int(((ratio < 1 - clip_eps) | (ratio > 1 + clip_eps)).sum())

        use_unclipped = unclipped <= clipped
        coeff = np.where(use_unclipped, adv * ratio, 0.0) * weight
        dlogits = -probs * coeff[:, None]
        dlogits[np.arange(n_batch), actions] += coeff
        grad[t] += dlogits.sum(axis=0)
        np.add.at(grad, max_len + np.where(last == -1, vocab_size, last), dlogits)
    clip_frac = clipped_tokens / (n_batch * length)
    return float(total), grad, clip_frac


def value_loss_and_grad(
    params: np.ndarray,
    critic_shape: tuple[int, int],
    batch: dict,
    value_clip_eps: float,
) -> tuple[float, np.ndarray]:
    """Mean clipped squared error against value targets, and its gradient.

    Per token the loss is max((V - T)^2, (clip(V, V_old +- eps) - T)^2); the
    active branch decides which error term backpropagates.
    """
    max_len, vocab_size = critic_shape
    critic = ValueFunction(max_len, vocab_size, params)
    lasts, targets, old_values = batch["lasts"], batch["value_targets"], batch["old_values"]
    n_batch, length = lasts.shape
    weight = 1.0 / (n_batch * length)

    total = 0.0
    grad = np.zeros_like(params)
    for t in range(length):
        last = lasts[:, t]
        v = critic.value(t, last)
        v_old = old_values[:, t]
        v_clip = v_old + np.clip(v - v_old, -value_clip_eps, value_clip_eps)
        err = v - targets[:, t]
        err_clip = v_clip - targets[:, t]
        use_unclipped = err**2 >= err_clip**2
        total += np.maximum(err**2, err_clip**2).sum() * weight

        inside = np.abs(v - v_old) <= value_clip_eps
        coeff = np.where(use_unclipped, 2 * err, np.where(inside, 2 * err_clip, 0.0)) * weight
        grad[t] += coeff.sum()
        np.add.at(grad, max_len + np.where(last == -1, vocab_size, last), coeff)
    return float(total), grad


# -- update and outer loop ----------------------------------------------------

class AdamState:
    """Adam moments for one parameter tensor (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray, lr: float) -> np.ndarray:
        """Returns the update to apply; caller picks the sign (ascent/descent)."""
        self.t += 1
        self.m = 0.9 * self.m + 0.1 * grad
        self.v = 0.999 * self.v + 0.001 * grad**2
        m_hat = self.m / (1 - 0.9**self.t)
        v_hat = self.v / (1 - 0.999**self.t)
        return lr * m_hat / (np.sqrt(v_hat) + 1e-8)


@dataclass(frozen=True)
class PPODiagnostics:
    actor_loss: float
    critic_loss: float
    clip_frac: float
    mean_kl: float


def _stack_batch(trajs: Sequence[Trajectory]) -> dict:
    return {
        "tokens": np.stack([t.tokens for t in trajs]),
        "lasts": np.stack([t.lasts for t in trajs]),
        "old_logprobs": np.stack([t.logprobs for t in trajs]),
        "advantages": np.stack([t.advantages for t in trajs]),
        "value_targets": np.stack([t.value_targets for t in trajs]),
        "old_values": np.stack([t.values for t in trajs]),
    }


def _slice_batch(batch: dict, rows: np.ndarray) -> dict:
    return {key: value[rows] for key, value in batch.items()}


def ppo_update(
    trajs: Sequence[Trajectory],
    policy: ToyPolicy,
    critic: ValueFunction,
    cfg: PPOConfig,
    ref_policy: Optional[ToyPolicy] = None,
    actor_opt: Optional[AdamState] = None,
    critic_opt: Optional[AdamState] = None,
) -> tuple[ToyPolicy, ValueFunction, PPODiagnostics]:
    """One PPO step: `ppo_epochs` inner epochs over the collected batch.

    Advantages must have been computed under the rollout policy. Optimizer
    states persist across steps when the caller passes them in. Raises
    NonFiniteLoss (leaving inputs untouched) if either objective blows up.
    """
    if any(t.advantages is None or t.value_targets is None for t in trajs):
        raise ValueError("run GAE before ppo_update")
    batch = _stack_batch(trajs)
    shape = (policy.max_len, policy.vocab_size)
    new_policy = policy.copy()
    new_critic = critic.copy()
    actor_opt = actor_opt or AdamState(policy.params.shape)
    critic_opt = critic_opt or AdamState(new_critic.params.shape)

    n = len(trajs)
    splits = np.array_split(np.arange(n), min(cfg.num_minibatches, n))
    surrogate, clip_frac, vloss = 0.0, 0.0, 0.0
    for _ in range(cfg.ppo_epochs):
        for rows in splits:
            minibatch = batch if len(splits) == 1 else _slice_batch(batch, rows)
            surrogate, grad_a, clip_frac = surrogate_and_grad(
                new_policy.params, shape, minibatch, cfg.clip_eps
            )
            vloss, grad_c = value_loss_and_grad(
                new_critic.params, shape, minibatch, cfg.value_clip_eps
            )
            if not (np.isfinite(surrogate) and np.isfinite(vloss)
                    and np.isfinite(grad_a).all() and np.isfinite(grad_c).all()):
                raise NonFiniteLoss(
                    f"non-finite update: surrogate={surrogate}, value_loss={vloss}"
                )
            new_policy.params = new_policy.params + actor_opt.step(grad_a, cfg.lr_actor)
            new_critic.params = new_critic.params - critic_opt.step(grad_c, cfg.lr_critic)

    anchor = ref_policy if ref_policy is not None else policy
    kls = [
        new_policy.kl_from(anchor, t, batch["lasts"][:, t]).mean()
        for t in range(policy.max_len)
    ]
    diags = PPODiagnostics(
        actor_loss=-surrogate,
        critic_loss=vloss,
        clip_frac=clip_frac,
        mean_kl=float(np.mean(kls)),
    )
    return new_policy, new_critic, diags


@dataclass(frozen=True)
class StepStats:
    step: int
    mean_reward: float
    mean_kl: float
    clip_frac: float
    actor_loss: float
    critic_loss: float


CURVE_COLUMNS = ("step", "mean_reward", "mean_kl", "clip_frac", "actor_loss", "critic_loss")


def write_curve_csv(rows: Sequence[StepStats], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for row in rows:
            writer.writerow([getattr(row, c) for c in CURVE_COLUMNS])


def run_ppo(
    prompts: Sequence[str],
    cfg: PPOConfig,
    rm_p: ToyRewardModel,
    rm_r: ToyRewardModel,
    steps: int,
    seed: int = 0,
    policy: Optional[ToyPolicy] = None,
) -> tuple[list[StepStats], ToyPolicy, ValueFunction]:
    """Sample -> shape -> GAE -> update, for `steps` iterations.

    The mean combined reward in the curve is measured on each step's fresh
    rollouts, i.e. before that step's parameter update.
    """
    if not prompts:
        raise ValueError("prompt pool is empty")
    if rm_p.vocab_size != rm_r.vocab_size or rm_p.max_len != rm_r.max_len:
        raise ValueError("reward models disagree on toy dimensions")
    vocab_size, max_len = rm_p.vocab_size, rm_p.max_len
    rng = np.random.default_rng(seed)
    policy = policy.copy() if policy is not None else ToyPolicy.zeros(vocab_size, max_len)
    ref = policy.copy()
    critic = ValueFunction(max_len, vocab_size)
    actor_opt = AdamState(policy.params.shape)
    critic_opt = AdamState(critic.params.shape)

    start_pool = np.array([prompt_start_token(p, vocab_size) for p in prompts])
    curve: list[StepStats] = []
    for step in range(steps):
        starts = start_pool[rng.integers(0, len(start_pool), size=cfg.batch_size)]
        tokens, logprobs, lasts = rollout_batch(policy, starts, rng)
        ref_logprobs = np.stack(
            [ref.action_log_probs(t, lasts[:, t], tokens[:, t]) for t in range(max_len)],
            axis=1,
        )
        terminal = rm_p.score_batch(tokens) + cfg.alpha_r * rm_r.score_batch(tokens)
        rewards = -cfg.kl_beta * (logprobs - ref_logprobs)
        rewards[:, -1] += terminal
        values = critic.values_matrix(lasts)
        advantages, targets = gae_batch(rewards, values, cfg.gamma, cfg.lam)

        trajs = [
            Trajectory(
                start_token=int(starts[b]),
                tokens=tokens[b],
                logprobs=logprobs[b],
                ref_logprobs=ref_logprobs[b],
                values=values[b],
                rewards=rewards[b],
                advantages=advantages[b],
                value_targets=targets[b],
            )
            for b in range(cfg.batch_size)
        ]
        policy, critic, diags = ppo_update(
            trajs, policy, critic, cfg,
            ref_policy=ref, actor_opt=actor_opt, critic_opt=critic_opt,
        )
        curve.append(
            StepStats(
                step=step,
                mean_reward=float(terminal.mean()),
                mean_kl=diags.mean_kl,
                clip_frac=diags.clip_frac,
                actor_loss=diags.actor_loss,
                critic_loss=diags.critic_loss,
            )
        )
        if steps >= 10 and (step + 1) % max(1, steps // 10) == 0:
            log.info("ppo step %d/%d: mean reward %.4f, kl %.5f",
                     step + 1, steps, curve[-1].mean_reward, curve[-1].mean_kl)
    return curve, policy, critic
