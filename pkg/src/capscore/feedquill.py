"""Preference-pair construction from sampled candidate captions.

For each input sample the pipeline draws several candidate captions via
nucleus sampling, decomposes every candidate into primitive units,
verifies each unit with a yes/no vote across an ensemble of backends, and
derives two preference scores per candidate:

    c_p - fraction of units judged correct (anti-hallucination channel)
    c_r - number of units (richness channel)

Candidate pairs whose score gap strictly exceeds the margin become
preference records; the two channels are written to separate files and
never merged.
"""

from __future__ import annotations

import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .datafiles import load_image
from .decompose import DecompositionConfig, decompose
from .errors import CapscoreError, EmptyDecomposition, TooFewCandidates
from .gateway import BackendSpec, ChatRequest, Gateway, ImageAttachment, SamplingParams
from .units import CaptionSample
from .verify import verify_feedquill

log = logging.getLogger(__name__)

PRECISION = "precision"
RICHNESS = "richness"
CHANNELS = (PRECISION, RICHNESS)


@dataclass(frozen=True)
class CandidateScore:
    candidate_index: int
    c_p: float
    c_r: int
    per_unit_verdicts: tuple[bool, ...]
    degenerate: bool = False

    def channel_score(self, channel: str) -> float:
        if channel == PRECISION:
            return self.c_p
        if channel == RICHNESS:
            return float(self.c_r)
        raise ValueError(f"unknown channel {channel!r}")


@dataclass(frozen=True)
class PreferencePair:
    context: CaptionSample
    preferred: str
    rejected: str
    channel: str
    margin: float
    preferred_score: float
    rejected_score: float

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("preference pairs require a positive margin")

    def to_record(self) -> dict:
        return {
            "sample_id": self.context.sample_id,
            "prompt": self.context.prompt,
            "image_ref": self.context.image_ref,
            "chosen": self.preferred,
            "rejected": self.rejected,
            "channel": self.channel,
            "margin": self.margin,
            "chosen_score": self.preferred_score,
            "rejected_score": self.rejected_score,
        }


def stable_offset(text: str, modulus: int = 1_000_000) -> int:
    """Platform-stable hash used to diversify per-sample seeds."""
    return zlib.crc32(text.encode("utf-8")) % modulus


def score_candidate(
    candidate: str,
    sample: CaptionSample,
    gateway: Gateway,
    ensemble: Sequence[BackendSpec],
    decomp_cfg: DecompositionConfig,
    decomp_backend: BackendSpec,
    image: Optional[ImageAttachment] = None,
) -> CandidateScore:
    """Decompose one candidate and vote on every unit. c_p = mean, c_r = count."""
    try:
        units = decompose(candidate, decomp_cfg, gateway, decomp_backend)
    except EmptyDecomposition:
        log.warning("candidate for sample %s decomposed to zero units", sample.sample_id)
        return CandidateScore(-1, 0.0, 0, (), degenerate=True)
    verdicts = tuple(
        verify_feedquill(u.fact, list(ensemble), gateway, image=image) for u in units
    )
    c_p = sum(verdicts) / len(verdicts)
    return CandidateScore(-1, c_p, len(verdicts), verdicts)


def build_pairs(
    sample: CaptionSample,
    candidates: Sequence[str],
    scores: Sequence[CandidateScore],
    channel: str,
    min_margin: float = 0.0,
) -> list[PreferencePair]:
    """All unordered candidate pairs whose score gap strictly beats the margin."""
    if len(scores) < 2:
        raise TooFewCandidates(f"need at least 2 scored candidates, got {len(scores)}")
    if min_margin < 0:
        raise ValueError("min_margin must be >= 0")
    pairs = []
    for i in range(len(scores)):
        for j in range(i + 1, len(scores)):
            a, b = scores[i].channel_score(channel), scores[j].channel_score(channel)
            if abs(a - b) <= min_margin:
                continue
            hi, lo = (i, j) if a > b else (j, i)
            pairs.append(
                PreferencePair(
                    context=sample,
                    preferred=candidates[hi],
                    rejected=candidates[lo],
                    channel=channel,
                    margin=abs(a - b),
                    preferred_score=max(a, b),
                    rejected_score=min(a, b),
                )
            )
    return pairs


@dataclass(frozen=True)
class GenerationStats:
    n_samples: int
    n_scored: int
    skipped: tuple[str, ...]
    pair_counts: dict


def generate_dataset(
    samples: Sequence[CaptionSample],
    gateway: Gateway,
    gen_backend: BackendSpec,
    decomp_backend: BackendSpec,
    ensemble: Sequence[BackendSpec],
    decomp_cfg: DecompositionConfig,
    out_precision: str | Path,
    out_richness: str | Path,
    n_candidates: int = 4,
    min_margin: float = 0.0,
    seed: int = 0,
    precision_floor: Optional[float] = None,
    max_workers: int = 4,
) -> GenerationStats:
    """Run the full feedback pipeline and write one JSONL file per channel.

    Samples are processed concurrently but written in input order, so a
    warm-cache rerun reproduces the files byte for byte. Individual sample
    failures are logged and skipped; only a fully failed run raises.
    """
    if n_candidates < 2:
        raise TooFewCandidates("preference construction needs n_candidates >= 2")

    def process(sample: CaptionSample):
        base_seed = seed + stable_offset(sample.sample_id)
        image = load_image(sample.image_ref)
        req = ChatRequest(user=sample.prompt, image=image,
                          sampling=SamplingParams(seed=base_seed))
        candidates = gateway.sample_candidates(gen_backend, req, n_candidates)
        scores = []
        for idx, cand in enumerate(candidates):
            score = score_candidate(
                cand, sample, gateway, ensemble, decomp_cfg, decomp_backend, image=image
            )
            scores.append(CandidateScore(idx, score.c_p, score.c_r,
                                         score.per_unit_verdicts, score.degenerate))
        by_channel = {}
        for channel in CHANNELS:
            cands, chan_scores = candidates, scores
            if channel == RICHNESS and precision_floor is not None:
                keep = [i for i, s in enumerate(scores) if s.c_p >= precision_floor]
                cands = [candidates[i] for i in keep]
                chan_scores = [scores[i] for i in keep]
                if len(chan_scores) < 2:
                    by_channel[channel] = []
                    continue
            by_channel[channel] = build_pairs(sample, cands, chan_scores, channel, min_margin)
        return by_channel

    results: list[Optional[dict]] = [None] * len(samples)
    skipped = []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(process, s): i for i, s in enumerate(samples)}
        for future, i in futures.items():
            try:
                results[i] = future.result()
            except CapscoreError as exc:
                log.warning("skipping sample %s: %s", samples[i].sample_id, exc)
                skipped.append(samples[i].sample_id)

    if samples and len(skipped) == len(samples):
        raise CapscoreError("every sample failed during preference generation")

    counts = {PRECISION: 0, RICHNESS: 0}
    outs = {PRECISION: Path(out_precision), RICHNESS: Path(out_richness)}
    handles = {}
    try:
        for channel, path in outs.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            handles[channel] = path.open("w", encoding="utf-8")
        for per_sample in results:
            if per_sample is None:
                continue
            for channel in CHANNELS:
                for pair in per_sample[channel]:
                    handles[channel].write(
                        json.dumps(pair.to_record(), ensure_ascii=False, sort_keys=True)
                    )
                    handles[channel].write("\n")
                    counts[channel] += 1
    finally:
        for fh in handles.values():
            fh.close()

    return GenerationStats(
        n_samples=len(samples),
        n_scored=len(samples) - len(skipped),
        skipped=tuple(skipped),
        pair_counts=counts,
    )
