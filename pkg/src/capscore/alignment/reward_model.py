"""Linear reward models trained with the pairwise comparison loss.

A sequence is summarized by hand-coded features (bias, per-token
frequencies, normalized length); the model's score is a dot product. The
loss for a (preferred, rejected) pair is -log sigmoid(score+ - score-),
whose gradient is analytic and cheap, so training is plain SGD.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import NoPairsForChannel

log = logging.getLogger(__name__)

DEFAULT_RM_LR = 0.1


def feature_dim(vocab_size: int) -> int:
    return vocab_size + 2


def sequence_features(tokens: Sequence[int], vocab_size: int, max_len: int) -> np.ndarray:
    """[bias, freq(token 0..V-1), length/max_len]; safe on empty sequences."""
    tokens = np.asarray(tokens, dtype=np.int64)
    out = np.zeros(feature_dim(vocab_size))
    out[0] = 1.0
    if tokens.size:
        counts = np.bincount(tokens, minlength=vocab_size)[:vocab_size]
        out[1 : 1 + vocab_size] = counts / tokens.size
    out[-1] = tokens.size / max_len
    return out


def batch_features(tokens: np.ndarray, vocab_size: int, max_len: int) -> np.ndarray:
    """sequence_features for a (B, L) token matrix, vectorized. (B, V+2)."""
    batch, length = tokens.shape
    feats = np.zeros((batch, feature_dim(vocab_size)))
    feats[:, 0] = 1.0
    flat = tokens + vocab_size * np.arange(batch)[:, None]
    counts = np.bincount(flat.ravel(), minlength=batch * vocab_size)
    feats[:, 1 : 1 + vocab_size] = counts.reshape(batch, vocab_size) / length
    feats[:, -1] = length / max_len
    return feats


def tokenize_text(text: str, vocab_size: int, max_len: int) -> list[int]:
    """Map whitespace tokens into the toy vocabulary, platform-stable."""
    words = text.split()
    return [zlib.crc32(w.encode("utf-8")) % vocab_size for w in words[:max_len]]


@dataclass
class ToyRewardModel:
    params: np.ndarray
    channel: str
    vocab_size: int
    max_len: int

    @classmethod
    def zeros(cls, channel: str, vocab_size: int, max_len: int) -> "ToyRewardModel":
        return cls(np.zeros(feature_dim(vocab_size)), channel, vocab_size, max_len)

    def score_features(self, features: np.ndarray) -> float:
        return float(self.params @ features)

    def score(self, tokens: Sequence[int]) -> float:
        return self.score_features(sequence_features(tokens, self.vocab_size, self.max_len))

    def score_batch(self, tokens: np.ndarray) -> np.ndarray:
        return batch_features(tokens, self.vocab_size, self.max_len) @ self.params

    def to_dict(self) -> dict:
        return {
            "channel": self.channel,
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ToyRewardModel":
        return cls(
            np.asarray(data["params"], dtype=float),
            data["channel"],
            int(data["vocab_size"]),
            int(data["max_len"]),
        )


def rm_loss_and_grad(
    model: ToyRewardModel, preferred: np.ndarray, rejected: np.ndarray
) -> tuple[float, np.ndarray]:
    """-log sigmoid(delta) and its exact gradient w.r.t. the weight vector."""
    diff = preferred - rejected
    delta = float(model.params @ diff)
    loss = float(np.logaddexp(0.0, -delta))
    sigmoid = 1.0 / (1.0 + np.exp(-delta))
    grad = -(1.0 - sigmoid) * diff
    return loss, grad


def combined_reward(
    tokens: Sequence[int],
    rm_p: ToyRewardModel,
    rm_r: ToyRewardModel,
    alpha_r: float = 0.5,
) -> float:
    """Dual-channel reward: precision score plus alpha_r times richness score."""
    return rm_p.score(tokens) + alpha_r * rm_r.score(tokens)


@dataclass(frozen=True)
class RMTrainReport:
    channel: str
    n_train: int
    n_holdout: int
    final_mean_loss: float
    holdout_accuracy: float


def train_rm_features(
    feature_pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    model: ToyRewardModel,
    epochs: int = 1,
    lr: float = DEFAULT_RM_LR,
    holdout_frac: float = 0.2,
    rng: Optional[np.random.Generator] = None,
) -> tuple[ToyRewardModel, RMTrainReport]:
    """SGD on the pairwise loss over (preferred, rejected) feature pairs."""
    if not feature_pairs:
        raise NoPairsForChannel(model.channel)
    rng = rng or np.random.default_rng(0)
    order = rng.permutation(len(feature_pairs))
    n_holdout = int(len(feature_pairs) * holdout_frac) if len(feature_pairs) > 1 else 0
    holdout_idx = order[:n_holdout]
    train_idx = order[n_holdout:]

    params = model.params.copy()
    trained = ToyRewardModel(params, model.channel, model.vocab_size, model.max_len)
    for _ in range(epochs):
        for i in rng.permutation(train_idx):
            pos, neg = feature_pairs[i]
            _, grad = rm_loss_and_grad(trained, pos, neg)
            params -= lr * grad

    train_losses = [
        rm_loss_and_grad(trained, *feature_pairs[i])[0] for i in train_idx
    ]
    if len(holdout_idx):
        correct = sum(
            1
            for i in holdout_idx
            if trained.score_features(feature_pairs[i][0])
            > trained.score_features(feature_pairs[i][1])
        )
        accuracy = correct / len(holdout_idx)
    else:
        accuracy = float("nan")
    report = RMTrainReport(
        channel=model.channel,
        n_train=len(train_idx),
        n_holdout=len(holdout_idx),
        final_mean_loss=float(np.mean(train_losses)) if train_losses else float("nan"),
        holdout_accuracy=accuracy,
    )
    log.info(
        "trained %s reward model: mean loss %.4f, holdout accuracy %s",
        model.channel, report.final_mean_loss, report.holdout_accuracy,
    )
    return trained, report


def train_rm(
    pair_records: Sequence[dict],
    channel: str,
    vocab_size: int,
    max_len: int,
    epochs: int = 1,
    lr: float = DEFAULT_RM_LR,
    holdout_frac: float = 0.2,
    rng: Optional[np.random.Generator] = None,
) -> tuple[ToyRewardModel, RMTrainReport]:
    """Train from preference JSONL records ({"chosen", "rejected", "channel"})."""
    selected = [r for r in pair_records if r.get("channel", channel) == channel]
    if not selected:
        raise NoPairsForChannel(channel)
    feature_pairs = [
        (
            sequence_features(tokenize_text(r["chosen"], vocab_size, max_len), vocab_size, max_len),
            sequence_features(tokenize_text(r["rejected"], vocab_size, max_len), vocab_size, max_len),
        )
        for r in selected
    ]
    model = ToyRewardModel.zeros(channel, vocab_size, max_len)
    return train_rm_features(feature_pairs, model, epochs, lr, holdout_frac, rng)
