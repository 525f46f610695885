"""Desk-scale policy-optimization testbed with dual channel rewards.

A tiny softmax token policy stands in for the captioning model so every
piece of the optimization loop (pairwise reward-model training, KL-shaped
rewards, generalized advantage estimation, the clipped surrogate update)
runs and can be verified numerically without any VLM.
"""

from .policy import ToyPolicy, prompt_start_token, rollout_batch
from .reward_model import (
    RMTrainReport,
    ToyRewardModel,
    combined_reward,
    rm_loss_and_grad,
    sequence_features,
    tokenize_text,
    train_rm,
    train_rm_features,
)
from .ppo import (
    PPOConfig,
    PPODiagnostics,
    StepStats,
    Trajectory,
    ValueFunction,
    gae,
    gae_batch,
    ppo_update,
    run_ppo,
    shaped_rewards,
    write_curve_csv,
)

__all__ = [
    "ToyPolicy",
    "prompt_start_token",
    "rollout_batch",
    "ToyRewardModel",
    "RMTrainReport",
    "combined_reward",
    "rm_loss_and_grad",
    "sequence_features",
    "tokenize_text",
    "train_rm",
    "train_rm_features",
    "PPOConfig",
    "PPODiagnostics",
    "StepStats",
    "Trajectory",
    "ValueFunction",
    "gae",
    "gae_batch",
    "ppo_update",
    "run_ppo",
    "shaped_rewards",
    "write_curve_csv",
]
