"""Decomposition stage: caption -> UnitSet via a judge backend.

The backend receives the shipped decomposition template with the caption
substituted in, and must answer with a JSON list of
{"fact", "identifier", "relevance"} dicts. Reference captions are
normally decomposed by humans and ingested from files; `decompose_oracle`
offers a model-assisted fallback that reuses this stage and assigns ids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from .errors import EmptyCaption, EmptyDecomposition
from .gateway import BackendSpec, ChatRequest, Gateway, SamplingParams
from .prompts import CAPTION_SLOT, DECOMPOSITION, load_template, render
from .units import OracleSet, OracleUnit, PrimitiveUnit, UnitSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecompositionConfig:
    backend: str
    max_units: Optional[int] = None
    template_id: str = DECOMPOSITION
    templates_dir: Optional[str] = None


def build_decomposition_prompt(
    caption: str, template_id: str = DECOMPOSITION, templates_dir: Optional[str] = None
) -> str:
    if not caption or not caption.strip():
        raise EmptyCaption("cannot decompose an empty caption")
    template = load_template(template_id, templates_dir)
    return render(template, {CAPTION_SLOT: caption})


def units_from_records(records) -> list[PrimitiveUnit]:
    """Map reply dicts onto units; items without a usable fact are dropped."""
    units = []
    for i, record in enumerate(records):
        if not isinstance(record, dict):
            log.warning("decomposition item %d is not an object, dropping: %r", i, record)
            continue
        fact = record.get("fact")
        if not isinstance(fact, str) or not fact.strip():
            log.warning("decomposition item %d has no fact, dropping", i)
            continue
        relevance = record.get("relevance", 1)
        try:
            descriptive = int(relevance) == 1
        except (TypeError, ValueError):
            log.warning("decomposition item %d has bad relevance %r, assuming 1", i, relevance)
            descriptive = True
        identifier = record.get("identifier")
        if identifier is not None:
            identifier = str(identifier) or None
        units.append(PrimitiveUnit(fact=fact, identifier=identifier, descriptive=descriptive))
    return units


def parse_units(raw, source_caption: str = "") -> UnitSet:
    """Turn a decomposition reply (parsed list or raw text) into a UnitSet."""
    if isinstance(raw, str):
        from .json_extract import extract_json_value

        raw = extract_json_value(raw)
    if isinstance(raw, dict):
        raw = [raw]
    units = units_from_records(raw)
    if not units:
        raise EmptyDecomposition("decomposition reply contained no valid units")
    return UnitSet(units, source_caption)


def decompose(
    caption: str,
    cfg: DecompositionConfig,
    gateway: Gateway,
    backend: BackendSpec,
    sampling: Optional[SamplingParams] = None,
) -> UnitSet:
    prompt = build_decomposition_prompt(caption, cfg.template_id, cfg.templates_dir)
    if sampling is None:
        # judge calls are greedy; the nucleus defaults are for candidate generation
        sampling = SamplingParams(temperature=0.0, top_p=1.0)
    req = ChatRequest(user=prompt, decode="json-expected", sampling=sampling)
    reply = gateway.complete_json(backend, req)
    unit_set = parse_units(reply, source_caption=caption)
    if cfg.max_units is not None and len(unit_set) > cfg.max_units:
        log.warning(
            "decomposition produced %d units, capping at %d", len(unit_set), cfg.max_units
        )
        unit_set = unit_set.with_units(unit_set.units[: cfg.max_units])
    return unit_set


def decompose_oracle(
    caption: str,
    cfg: DecompositionConfig,
    gateway: Gateway,
    backend: BackendSpec,
    id_prefix: str = "o",
) -> OracleSet:
    """Model-assisted reference decomposition; ids assigned in order."""
    pred = decompose(caption, cfg, gateway, backend)
    units = [
        OracleUnit(id=f"{id_prefix}{i + 1}", fact=u.fact, identifier=u.identifier,
                   descriptive=u.descriptive)
        for i, u in enumerate(pred.units)
    ]
    return OracleSet(units, source_caption=caption)
