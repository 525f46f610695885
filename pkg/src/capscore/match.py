"""Matching stage: link predicted units to oracle units via the judge.

The judge sees both unit sets serialized as JSON and echoes the predicted
list with a "matched_oracle_id" per item ("None" for no match). Semantic
similarity is entirely the judge's call; this module only renders the
prompt and applies the returned id mapping.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Optional

from .gateway import BackendSpec, ChatRequest, Gateway, SamplingParams
from .prompts import MATCHING, ORACLE_UNITS_SLOT, PRED_UNITS_SLOT, load_template, render
from .units import OracleSet, UnitSet

log = logging.getLogger(__name__)

JUDGE_SAMPLING = SamplingParams(temperature=0.0, top_p=1.0)


@dataclass(frozen=True)
class MatchConfig:
    backend: str
    template_id: str = MATCHING
    templates_dir: Optional[str] = None


def _prompt_record(unit) -> dict:
    record = {"fact": unit.fact}
    if unit.identifier is not None:
        record["identifier"] = unit.identifier
    return record


def serialize_pred_units(pred: UnitSet) -> str:
    return json.dumps([_prompt_record(u) for u in pred.units], ensure_ascii=False)


def serialize_oracle_units(oracle: OracleSet) -> str:
    records = []
    for u in oracle.units:
        record = {"id": u.id, "fact": u.fact}
        if u.identifier is not None:
            record["identifier"] = u.identifier
        records.append(record)
    return json.dumps(records, ensure_ascii=False)


def build_matching_prompt(
    pred: UnitSet,
    oracle: OracleSet,
    template_id: str = MATCHING,
    templates_dir: Optional[str] = None,
) -> str:
    template = load_template(template_id, templates_dir)
    return render(
        template,
        {
            PRED_UNITS_SLOT: serialize_pred_units(pred),
            ORACLE_UNITS_SLOT: serialize_oracle_units(oracle),
        },
    )


def align_records_to_units(units: tuple, records: list) -> list[Optional[dict]]:
    """Pair reply records with units, one slot per unit (None if unreported).

    Alignment is by exact trimmed fact string; when fact strings are not
    unique across the units, alignment falls back to list position.
    """
    records = [r for r in records if isinstance(r, dict)]
    facts = [u.fact.strip() for u in units]
    if len(set(facts)) == len(facts):
        by_fact: dict[str, dict] = {}
        for record in records:
            fact = record.get("fact")
            if not isinstance(fact, str):
                continue
            fact = fact.strip()
            if fact in by_fact:
                log.warning("reply repeats fact %r, keeping the first occurrence", fact)
                continue
            by_fact[fact] = record
        aligned = [by_fact.get(f) for f in facts]
        # positional rescue for paraphrased echoes only when nothing matched
        if any(a is not None for a in aligned):
            return aligned
    if records and len(records) != len(units):
        log.warning(
            "reply has %d items for %d units, aligning by position", len(records), len(units)
        )
    return [records[i] if i < len(records) else None for i in range(len(units))]


def apply_matches(pred: UnitSet, raw, oracle: OracleSet) -> UnitSet:
    """Set matched_oracle_id per unit from the judge reply.

    "None"/null means no match; ids that do not exist in the oracle are
    demoted to no-match with a warning; units the reply omitted keep their
    matched_oracle_id unset.
    """
    if isinstance(raw, str):
        from .json_extract import extract_json_value

        raw = extract_json_value(raw)
    if isinstance(raw, dict):
        raw = [raw]
    aligned = align_records_to_units(pred.units, raw)
    known = oracle.ids()
    updated = []
    for unit, record in zip(pred.units, aligned):
        if record is None:
            updated.append(unit)
            continue
        matched = record.get("matched_oracle_id")
        if matched is not None:
            matched = str(matched)
            if matched.lower() == "none":
                matched = None
            elif matched not in known:
                log.warning(
                    "matched_oracle_id %r not in oracle, treating %r as unmatched",
                    matched, unit.fact,
                )
                matched = None
        updated.append(replace(unit, matched_oracle_id=matched))
    return pred.with_units(updated)


def match(
    pred: UnitSet,
    oracle: OracleSet,
    cfg: MatchConfig,
    gateway: Gateway,
    backend: BackendSpec,
) -> UnitSet:
    prompt = build_matching_prompt(pred, oracle, cfg.template_id, cfg.templates_dir)
    req = ChatRequest(user=prompt, decode="json-expected", sampling=JUDGE_SAMPLING)
    reply = gateway.complete_json(backend, req)
    return apply_matches(pred, reply, oracle)
