"""Agreement statistics between a metric and human judgments, plus
arena-style ratings from pairwise votes.

Correlations: Pearson r, Kendall tau-b (tie corrected), Spearman rho
(Pearson over average ranks), an identity-predictor 1-R^2, and a
sample-wise tau (mean per-sample Kendall over system rankings).

Ratings: sequential Elo (K=32, base-10 logistic, 400 scale) and
Bradley-Terry maximum likelihood via minorization-maximization, anchored
to mean 1000 on the Elo scale. Elo is order-dependent by construction;
Bradley-Terry is not.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInput, NoValidSamples, SingleSystem

ELO_INITIAL = 1000.0
ELO_K = 32.0
ELO_SCALE = 400.0
BT_TOLERANCE = 1e-8
BT_MAX_ITERATIONS = 100_000


def _paired(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or len(x) != len(y):
        raise DegenerateInput("inputs must be 1-d vectors of equal length")
    if len(x) < 2:
        raise DegenerateInput("need at least 2 observations")
    return x, y


def pearson(x, y) -> float:
    x, y = _paired(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0:
        raise DegenerateInput("zero variance in at least one vector")
    return float(dx @ dy) / denom


def one_minus_r2(metric, human) -> float:
    """Residual ratio of the identity predictor: sum (h-m)^2 / sum (h-hbar)^2.

    No regression is fitted, so a badly scaled metric can (and should)
    score far above 1.
    """
    m, h = _paired(metric, human)
    denom = float(((h - h.mean()) ** 2).sum())
    if denom == 0:
        raise DegenerateInput("human scores are constant")
    return float(((h - m) ** 2).sum()) / denom


def kendall_tau(x, y) -> float:
    """Tau-b: (C - D) / sqrt((n0 - tx) * (n0 - ty)) with tie corrections."""
    x, y = _paired(x, y)
    dx = np.sign(np.subtract.outer(x, x))
    dy = np.sign(np.subtract.outer(y, y))
    upper = np.triu_indices(len(x), k=1)
    concordance = float((dx[upper] * dy[upper]).sum())
    n0 = len(x) * (len(x) - 1) / 2
    tx = n0 - float((dx[upper] != 0).sum())
    ty = n0 - float((dy[upper] != 0).sum())
    denom = math.sqrt((n0 - tx) * (n0 - ty))
    if denom == 0:
        raise DegenerateInput("all pairs tied in at least one vector")
    return concordance / denom


def average_ranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average position."""
    v = np.asarray(v, dtype=float)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    x, y = _paired(x, y)
    return pearson(average_ranks(x), average_ranks(y))


def per_sample_tau(metric: np.ndarray, human: np.ndarray) -> float:
    """Mean per-sample Kendall tau between system rankings.

    Inputs are (n_samples, n_systems) matrices. Samples whose human scores
    are all tied carry no ranking signal and are skipped; samples where
    only the metric is all-tied contribute tau = 0 (the metric failed to
    rank them).
    """
    metric = np.asarray(metric, dtype=float)
    human = np.asarray(human, dtype=float)
    if metric.shape != human.shape or metric.ndim != 2:
        raise DegenerateInput("score matrices must share the same 2-d shape")
    if metric.shape[1] < 2:
        raise DegenerateInput("need at least 2 systems")
    taus = []
    for m_row, h_row in zip(metric, human):
        if np.all(h_row == h_row[0]):
            continue
        if np.all(m_row == m_row[0]):
            taus.append(0.0)
            continue
        taus.append(kendall_tau(m_row, h_row))
    if not taus:
        raise NoValidSamples("every sample had fully tied human scores")
    return float(np.mean(taus))


# -- pairwise-vote ratings -----------------------------------------------------

def _vote_systems(votes: Sequence[tuple]) -> list[str]:
    systems: list[str] = []
    for a, b, _ in votes:
        for s in (a, b):
            if s not in systems:
                systems.append(s)
    return systems


def _check_votes(votes) -> list[tuple[str, str, str]]:
    votes = list(votes)
    if not votes:
        raise DegenerateInput("no votes given")
    for a, b, outcome in votes:
        if outcome not in ("a", "b", "tie"):
            raise ValueError(f"outcome must be 'a', 'b' or 'tie', got {outcome!r}")
        if a == b:
            raise SingleSystem(f"a system cannot play itself: {a}")
    return votes


def elo_online(votes: Iterable[tuple[str, str, str]]) -> dict[str, float]:
    """Sequential Elo: start 1000, K=32, tie counts as half a point."""
    votes = _check_votes(votes)
    systems = _vote_systems(votes)
    if len(systems) < 2:
        raise SingleSystem("ratings need at least two systems")
    ratings = {s: ELO_INITIAL for s in systems}
    for a, b, outcome in votes:
        expected_a = 1.0 / (1.0 + 10 ** ((ratings[b] - ratings[a]) / ELO_SCALE))
        score_a = {"a": 1.0, "b": 0.0, "tie": 0.5}[outcome]
        ratings[a] += ELO_K * (score_a - expected_a)
        ratings[b] += ELO_K * ((1.0 - score_a) - (1.0 - expected_a))
    return ratings


def bradley_terry(votes: Iterable[tuple[str, str, str]]) -> dict[str, float]:
    """Maximum-likelihood strengths by minorization-maximization.

    Ties award half a win to each side. Iterates until the largest rating
    movement drops below 1e-8; ratings are 1000 + (400/ln 10) * centered
    log-strengths, so the mean rating is exactly 1000.
    """
    votes = _check_votes(votes)
    systems = _vote_systems(votes)
    if len(systems) < 2:
        raise SingleSystem("ratings need at least two systems")
    index = {s: i for i, s in enumerate(systems)}
    n = len(systems)
    wins = np.zeros(n)
    games = np.zeros((n, n))
    for a, b, outcome in votes:
        i, j = index[a], index[b]
        games[i, j] += 1
        games[j, i] += 1
        if outcome == "a":
            wins[i] += 1
        elif outcome == "b":
            wins[j] += 1
        else:
            wins[i] += 0.5
            wins[j] += 0.5

    scale = ELO_SCALE / math.log(10)
    floor = 1e-12
    strengths = np.ones(n)

    def to_ratings(p: np.ndarray) -> np.ndarray:
        logs = np.log(p)
        return ELO_INITIAL + scale * (logs - logs.mean())

    ratings = to_ratings(strengths)
    for _ in range(BT_MAX_ITERATIONS):
        denom = np.zeros(n)
        for i in range(n):
            js = np.nonzero(games[i])[0]
            denom[i] = (games[i, js] / (strengths[i] + strengths[js])).sum()
        updated = np.where(denom > 0, np.maximum(wins, floor) / np.maximum(denom, floor), strengths)
        updated /= np.exp(np.log(updated).mean())  # fix the scale invariance
        new_ratings = to_ratings(updated)
        movement = np.abs(new_ratings - ratings).max()
        strengths, ratings = updated, new_ratings
        if movement < BT_TOLERANCE:
            break
    return {s: float(ratings[index[s]]) for s in systems}


def elo_ratings(votes: Iterable[tuple[str, str, str]], mode: str = "bradley-terry") -> dict[str, float]:
    """Ratings from (system_a, system_b, outcome) votes, outcome in {a, b, tie}."""
    if mode == "online-elo":
        return elo_online(votes)
    if mode == "bradley-terry":
        return bradley_terry(votes)
    raise ValueError(f"unknown rating mode {mode!r}")
