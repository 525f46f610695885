"""Verification stage: assign a correct/incorrect verdict to every unit.

Two flavors exist. The scoring pipeline verifies the whole unit set in one
batched JSON call against the image and reference caption. The feedback
pipeline asks a yes/no question per statement across an ensemble of
backends and takes a strict-majority vote.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

from .errors import CapscoreError, EmptyUnitSet
from .gateway import BackendSpec, ChatRequest, Gateway, ImageAttachment, SamplingParams
from .match import align_records_to_units, serialize_pred_units
from .prompts import REFERENCE_SLOT, UNITS_SLOT, VERIFICATION, load_template, render
from .units import UnitSet

log = logging.getLogger(__name__)

JUDGE_SAMPLING = SamplingParams(temperature=0.0, top_p=1.0)
STATEMENT_QUESTION = "Is the statement correct? Please only answer 'yes' or 'no'"

_FIRST_WORD = re.compile(r"[A-Za-z]+")


@dataclass(frozen=True)
class VerifyConfig:
    backend: str
    template_id: str = VERIFICATION
    templates_dir: Optional[str] = None


def build_verification_prompt(
    pred: UnitSet,
    reference: str,
    template_id: str = VERIFICATION,
    templates_dir: Optional[str] = None,
) -> str:
    template = load_template(template_id, templates_dir)
    return render(
        template,
        {REFERENCE_SLOT: reference, UNITS_SLOT: serialize_pred_units(pred)},
    )


def apply_verdicts(pred: UnitSet, raw) -> UnitSet:
    """Fill `verified` from a batch reply; unreported units count as wrong."""
    if isinstance(raw, str):
        from .json_extract import extract_json_value

        raw = extract_json_value(raw)
    if isinstance(raw, dict):
        raw = [raw]
    aligned = align_records_to_units(pred.units, raw)
    updated = []
    for unit, record in zip(pred.units, aligned):
        if record is None or "verification" not in record:
            log.warning("no verdict for unit %r, defaulting to incorrect", unit.fact)
            updated.append(replace(unit, verified=False))
            continue
        try:
            verdict = int(record["verification"]) == 1
        except (TypeError, ValueError):
            log.warning("bad verdict %r for unit %r, defaulting to incorrect",
                        record["verification"], unit.fact)
            verdict = False
        updated.append(replace(unit, verified=verdict))
    return pred.with_units(updated)


def verify_dcscore(
    pred: UnitSet,
    reference: str,
    cfg: VerifyConfig,
    gateway: Gateway,
    backend: BackendSpec,
    image: Optional[ImageAttachment] = None,
) -> UnitSet:
    if len(pred) == 0:
        raise EmptyUnitSet("nothing to verify: unit set is empty")
    prompt = build_verification_prompt(pred, reference, cfg.template_id, cfg.templates_dir)
    req = ChatRequest(user=prompt, image=image, decode="json-expected", sampling=JUDGE_SAMPLING)
    reply = gateway.complete_json(backend, req)
    return apply_verdicts(pred, reply)


def is_yes(reply: str) -> bool:
    """True iff the first alphabetic token is "yes" (any case)."""
    m = _FIRST_WORD.search(reply)
    return m is not None and m.group(0).lower() == "yes"


def statement_prompt(statement: str) -> str:
    return f"{statement} {STATEMENT_QUESTION}"


def verify_feedquill(
    statement: str,
    backends: list[BackendSpec],
    gateway: Gateway,
    image: Optional[ImageAttachment] = None,
) -> bool:
    """Strict-majority yes vote across the ensemble; ties count as incorrect.

    Backends that fail are excluded from the vote with a warning, so the
    quorum is whoever answered.
    """
    if not backends:
        raise ValueError("ensemble must contain at least one backend")
    req = ChatRequest(user=statement_prompt(statement), image=image, sampling=JUDGE_SAMPLING)
    errors: list[CapscoreError] = []

    def ask(backend: BackendSpec) -> Optional[bool]:
        try:
            return is_yes(gateway.complete(backend, req))
        except CapscoreError as exc:
            log.warning("ensemble backend %s failed, excluding from vote: %s",
                        backend.name, exc)
            errors.append(exc)
            return None

    if len(backends) == 1:
        votes = [ask(backends[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(backends)) as pool:
            votes = list(pool.map(ask, backends))
    counted = [v for v in votes if v is not None]
    if not counted:
        raise errors[-1]
    yes = sum(counted)
    return yes * 2 > len(counted)
