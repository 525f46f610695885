"""Linear-softmax token policy over hand-coded state features.

A state is (position, last token); its feature vector is the concatenation
of a position one-hot and a last-token one-hot (with a BOS slot), so the
logit of each action is the sum of two parameter rows. That keeps every
gradient analytic while still giving the policy enough capacity to prefer
particular tokens.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

MAX_VOCAB = 32
MAX_SEQ_LEN = 16


def prompt_start_token(prompt: str, vocab_size: int) -> int:
    """Deterministic, platform-stable mapping of a prompt to a context token."""
    return zlib.crc32(prompt.encode("utf-8")) % vocab_size


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class ToyPolicy:
    """Softmax policy; params has one row per state feature, one column per token."""

    vocab_size: int
    max_len: int
    params: np.ndarray

    BOS: int = -1  # sentinel meaning "no previous token"

    def __post_init__(self):
        if not (1 <= self.vocab_size <= MAX_VOCAB):
            raise ValueError(f"vocab_size must be in [1, {MAX_VOCAB}]")
        if not (1 <= self.max_len <= MAX_SEQ_LEN):
            raise ValueError(f"max_len must be in [1, {MAX_SEQ_LEN}]")
        expected = (self.n_features, self.vocab_size)
        if self.params.shape != expected:
            raise ValueError(f"params shape {self.params.shape} != {expected}")

    @property
    def n_features(self) -> int:
        # position one-hot + last-token one-hot (vocab tokens plus BOS slot)
        return self.max_len + self.vocab_size + 1

    @classmethod
    def zeros(cls, vocab_size: int, max_len: int) -> "ToyPolicy":
        n_features = max_len + vocab_size + 1
        return cls(vocab_size, max_len, np.zeros((n_features, vocab_size)))

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.vocab_size, self.max_len, self.params.copy())

    def _last_row(self, last: np.ndarray) -> np.ndarray:
        # BOS occupies the final feature row
        idx = np.where(last == self.BOS, self.vocab_size, last)
        return self.max_len + idx

    def logits(self, position: int, last: np.ndarray) -> np.ndarray:
        """Action logits for a batch of states sharing one position. (B, V)."""
        last = np.asarray(last)
        return self.params[position] + self.params[self._last_row(last)]

    def log_probs(self, position: int, last: np.ndarray) -> np.ndarray:
        return log_softmax(self.logits(position, last))

    def action_log_probs(self, position: int, last: np.ndarray, actions: np.ndarray) -> np.ndarray:
        logp = self.log_probs(position, last)
        return logp[np.arange(len(actions)), actions]

    def kl_from(self, other: "ToyPolicy", position: int, last: np.ndarray) -> np.ndarray:
        """Exact per-state KL(self || other) over the action distribution."""
        logp = self.log_probs(position, last)
        logq = other.log_probs(position, last)
        return (np.exp(logp) * (logp - logq)).sum(axis=-1)


def rollout_batch(
    policy: ToyPolicy, start_tokens: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample fixed-length sequences for a batch of start contexts.

    Returns (tokens, logprobs, lasts), each (B, max_len); lasts[:, t] is the
    token preceding step t (the state's last-token component).
    """
    batch = len(start_tokens)
    length = policy.max_len
    tokens = np.zeros((batch, length), dtype=np.int64)
    logprobs = np.zeros((batch, length))
    lasts = np.zeros((batch, length), dtype=np.int64)
    last = np.asarray(start_tokens, dtype=np.int64).copy()
    for t in range(length):
        logp = policy.log_probs(t, last)
        probs = np.exp(logp)
        u = rng.random(batch)
        actions = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
        actions = np.clip(actions, 0, policy.vocab_size - 1)
        tokens[:, t] = actions
        logprobs[:, t] = logp[np.arange(batch), actions]
        lasts[:, t] = last
        last = actions
    return tokens, logprobs, lasts
