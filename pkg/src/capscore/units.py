"""Core domain types: primitive information units and their collections.

A *primitive information unit* is the smallest self-sufficient statement
extracted from a caption. Generated captions decompose into a `UnitSet`
(units may later carry match links and verification verdicts); reference
captions decompose into an `OracleSet` whose units are id-addressable so
matches can point at them.

All types are immutable values; every pipeline stage returns new objects.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import Iterable, Optional


def nfc(text: str) -> str:
    """NFC-normalize text. Applied before hashing/caching so keys are stable."""
    return unicodedata.normalize("NFC", text)


@dataclass(frozen=True, slots=True)
class PrimitiveUnit:
    """One atomic verifiable statement from a generated caption.

    `descriptive` mirrors the decomposition reply's "relevance" flag: 1 when
    the unit directly describes image content, 0 for inference/context.
    `verified` stays None until the verification stage runs; likewise
    `matched_oracle_id` until matching runs (None afterwards means no match).
    """

    fact: str
    identifier: Optional[str] = None
    descriptive: bool = True
    verified: Optional[bool] = None
    matched_oracle_id: Optional[str] = None

    def __post_init__(self):
        if not self.fact or not self.fact.strip():
            raise ValueError("unit fact must be non-empty after trimming")

    def to_record(self) -> dict:
        return {
            "fact": self.fact,
            "identifier": self.identifier,
            "relevance": 1 if self.descriptive else 0,
            "verification": None if self.verified is None else int(self.verified),
            "matched_oracle_id": self.matched_oracle_id,
        }

    @classmethod
    def from_record(cls, record: dict) -> "PrimitiveUnit":
        verification = record.get("verification")
        return cls(
            fact=record["fact"],
            identifier=record.get("identifier"),
            descriptive=int(record.get("relevance", 1)) == 1,
            verified=None if verification is None else bool(int(verification)),
            matched_oracle_id=record.get("matched_oracle_id"),
        )


@dataclass(frozen=True, slots=True)
class OracleUnit:
    """A unit of the reference decomposition, addressable by its unique id."""

    id: str
    fact: str
    identifier: Optional[str] = None
    descriptive: bool = True

    def __post_init__(self):
        if not self.id:
            raise ValueError("oracle unit id must be non-empty")
        if not self.fact or not self.fact.strip():
            raise ValueError("oracle fact must be non-empty after trimming")

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "fact": self.fact,
            "identifier": self.identifier,
            "relevance": 1 if self.descriptive else 0,
        }

    @classmethod
    def from_record(cls, record: dict) -> "OracleUnit":
        # Sources without relevance flags default to descriptive.
        return cls(
            id=str(record["id"]),
            fact=record["fact"],
            identifier=record.get("identifier"),
            descriptive=int(record.get("relevance", 1)) == 1,
        )


@dataclass(frozen=True, slots=True)
class UnitSet:
    """Ordered units decomposed from one generated caption."""

    units: tuple[PrimitiveUnit, ...]
    source_caption: str = ""

    def __init__(self, units: Iterable[PrimitiveUnit], source_caption: str = ""):
        object.__setattr__(self, "units", tuple(units))
        object.__setattr__(self, "source_caption", source_caption)

    def __len__(self) -> int:
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    def with_units(self, units: Iterable[PrimitiveUnit]) -> "UnitSet":
        return UnitSet(units, self.source_caption)

    def to_records(self) -> list[dict]:
        return [u.to_record() for u in self.units]

    @classmethod
    def from_records(cls, records: Iterable[dict], source_caption: str = "") -> "UnitSet":
        return cls((PrimitiveUnit.from_record(r) for r in records), source_caption)


@dataclass(frozen=True, slots=True)
class OracleSet:
    """Ordered reference units with unique ids."""

    units: tuple[OracleUnit, ...]
    source_caption: str = ""

    def __init__(self, units: Iterable[OracleUnit], source_caption: str = ""):
        units = tuple(units)
        ids = [u.id for u in units]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate oracle ids: {dupes}")
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "source_caption", source_caption)

    def __len__(self) -> int:
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    def ids(self) -> set[str]:
        return {u.id for u in self.units}

    def to_records(self) -> list[dict]:
        return [u.to_record() for u in self.units]

    @classmethod
    def from_records(cls, records: Iterable[dict], source_caption: str = "") -> "OracleSet":
        return cls((OracleUnit.from_record(r) for r in records), source_caption)


@dataclass(frozen=True)
class CaptionSample:
    """One dataset row: a prompt/caption pair plus provenance."""

    sample_id: str
    prompt: str
    caption: str
    system_tag: str = ""
    image_ref: Optional[str] = None

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "image_ref": self.image_ref,
            "prompt": self.prompt,
            "caption": self.caption,
            "system_tag": self.system_tag,
        }

    @classmethod
    def from_record(cls, record: dict) -> "CaptionSample":
        return cls(
            sample_id=str(record["sample_id"]),
            prompt=record.get("prompt", ""),
            caption=record["caption"],
            system_tag=record.get("system_tag", ""),
            image_ref=record.get("image_ref"),
        )


def partition_descriptive(unit_set: UnitSet) -> tuple[UnitSet, UnitSet]:
    """Split a set into (descriptive, non-descriptive), order preserved."""
    descriptive = [u for u in unit_set.units if u.descriptive]
    rest = [u for u in unit_set.units if not u.descriptive]
    return unit_set.with_units(descriptive), unit_set.with_units(rest)


def count_matched_oracle_ids(unit_set: UnitSet) -> int:
    """Number of DISTINCT oracle ids referenced by matched units.

    Distinct-id counting keeps duplicated predicted statements from
    inflating the overlap past the oracle size.
    """
    return len({u.matched_oracle_id for u in unit_set.units if u.matched_oracle_id})


__all__ = [
    "PrimitiveUnit",
    "OracleUnit",
    "UnitSet",
    "OracleSet",
    "CaptionSample",
    "partition_descriptive",
    "count_matched_oracle_ids",
    "nfc",
]
