"""Unit-level caption scoring arithmetic.

Given a decomposed, matched and verified prediction set P against an
oracle set O, the stage computes

    s_p = |P_true| / |P|
    s_r = (|Q| + |X|) / (|O| + |X|)

where P_true are the verified-correct units, Q is the set of DISTINCT
oracle ids the prediction covers, and X = P_true \\ Q are correct units
the oracle omits. s_f is the harmonic mean of the two. The same three
numbers are recomputed on the descriptive-only restriction of both sets,
and the final score averages the two F1 values.

Degenerate inputs (no predicted units, or an empty denominator on the
recall side) score 0 and 1 respectively and are flagged rather than
raised so batch runs stay total.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Iterable

from .errors import EmptyInput
from .units import OracleSet, UnitSet, count_matched_oracle_ids

SCORE_FIELDS = ("s_p", "s_r", "s_f", "s_p_desc", "s_r_desc", "s_f_desc", "final_f")


@dataclass(frozen=True, slots=True)
class ScoreCounts:
    n_pred: int
    n_pred_true: int
    n_matched: int
    n_oracle: int
    n_pred_desc: int
    n_pred_true_desc: int
    n_matched_desc: int
    n_oracle_desc: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, slots=True)
class ScoreReport:
    s_p: float
    s_r: float
    s_f: float
    s_p_desc: float
    s_r_desc: float
    s_f_desc: float
    final_f: float
    counts: ScoreCounts
    degenerate: bool = False

    def __post_init__(self):
        for name in SCORE_FIELDS:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} out of [0, 1]: {value}")
        if self.final_f != (self.s_f + self.s_f_desc) / 2:
            raise ValueError("final_f must equal (s_f + s_f_desc) / 2 exactly")

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in SCORE_FIELDS}
        out["counts"] = self.counts.to_dict()
        out["degenerate"] = self.degenerate
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScoreReport":
        return cls(
            counts=ScoreCounts(**data["counts"]),
            degenerate=bool(data.get("degenerate", False)),
            **{name: float(data[name]) for name in SCORE_FIELDS},
        )


def precision(pred: UnitSet) -> float:
    """Fraction of predicted units judged correct; 0 on an empty set."""
    if len(pred) == 0:
        return 0.0
    n_true = sum(1 for u in pred.units if u.verified)
    return n_true / len(pred)


def _effective(pred: UnitSet, oracle_ids: set[str]) -> UnitSet:
    """Drop match links pointing outside the oracle id universe."""
    cleaned = []
    for u in pred.units:
        if u.matched_oracle_id is not None and u.matched_oracle_id not in oracle_ids:
            cleaned.append(replace(u, matched_oracle_id=None))
        else:
            cleaned.append(u)
    return pred.with_units(cleaned)


def _recall_parts(pred: UnitSet, oracle: OracleSet) -> tuple[int, int, int]:
    """(|Q|, |X|, |O|) for an already match-normalized prediction set."""
    n_q = count_matched_oracle_ids(pred)
    n_x = sum(1 for u in pred.units if u.verified and u.matched_oracle_id is None)
    return n_q, n_x, len(oracle)


def recall(pred: UnitSet, oracle: OracleSet) -> float:
    """Coverage of the oracle, crediting correct units the oracle omits.

    (|Q| + |X|) / (|O| + |X|) with X the verified-correct unmatched units.
    Both sets empty of signal (|O| = |X| = 0) scores 1.
    """
    n_q, n_x, n_o = _recall_parts(_effective(pred, oracle.ids()), oracle)
    if n_o + n_x == 0:
        return 1.0
    return (n_q + n_x) / (n_o + n_x)


def f1(p: float, r: float) -> float:
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def score_caption(pred: UnitSet, oracle: OracleSet) -> ScoreReport:
    # Single pass over the units computing the full view and the
    # descriptive-only view together (this runs inside large enumeration
    # sweeps, so no intermediate sets are built). In the descriptive view
    # both sides restrict to descriptive units; a match pointing at a
    # non-descriptive oracle unit is severed there, which is what keeps
    # the descriptive recall <= 1.
    all_ids = oracle.ids()
    desc_ids = {u.id for u in oracle.units if u.descriptive}
    n_oracle, n_oracle_desc = len(oracle), len(desc_ids)

    n_pred = len(pred)
    n_true = 0
    n_x = 0
    q: set[str] = set()
    n_pred_d = 0
    n_true_d = 0
    n_x_d = 0
    q_d: set[str] = set()
    for u in pred.units:
        verified = bool(u.verified)
        matched = u.matched_oracle_id if u.matched_oracle_id in all_ids else None
        n_true += verified
        if matched is not None:
            q.add(matched)
        elif verified:
            n_x += 1
        if u.descriptive:
            n_pred_d += 1
            n_true_d += verified
            matched_d = matched if matched in desc_ids else None
            if matched_d is not None:
                q_d.add(matched_d)
            elif verified:
                n_x_d += 1

    s_p = n_true / n_pred if n_pred else 0.0
    s_r = (len(q) + n_x) / (n_oracle + n_x) if n_oracle + n_x else 1.0
    s_p_d = n_true_d / n_pred_d if n_pred_d else 0.0
    s_r_d = (len(q_d) + n_x_d) / (n_oracle_desc + n_x_d) if n_oracle_desc + n_x_d else 1.0
    s_f = f1(s_p, s_r)
    s_f_d = f1(s_p_d, s_r_d)

    counts = ScoreCounts(
        n_pred=n_pred,
        n_pred_true=n_true,
        n_matched=len(q),
        n_oracle=n_oracle,
        n_pred_desc=n_pred_d,
        n_pred_true_desc=n_true_d,
        n_matched_desc=len(q_d),
        n_oracle_desc=n_oracle_desc,
    )
    # flag any score that took its empty-input fallback value
    degenerate = (
        n_pred == 0
        or n_pred_d == 0
        or n_oracle + n_x == 0
        or n_oracle_desc + n_x_d == 0
    )
    return ScoreReport(
        s_p=s_p,
        s_r=s_r,
        s_f=s_f,
        s_p_desc=s_p_d,
        s_r_desc=s_r_d,
        s_f_desc=s_f_d,
        final_f=(s_f + s_f_d) / 2,
        counts=counts,
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class ScoreSummary:
    n_reports: int
    n_degenerate: int
    means: dict

    def to_dict(self) -> dict:
        return {
            "n_reports": self.n_reports,
            "n_degenerate": self.n_degenerate,
            "means": dict(self.means),
        }


def aggregate(reports: Iterable[ScoreReport]) -> ScoreSummary:
    """Arithmetic mean of every score across samples (per-sample averaging)."""
    reports = list(reports)
    if not reports:
        raise EmptyInput("cannot aggregate zero score reports")
    means = {
        name: sum(getattr(r, name) for r in reports) / len(reports)
        for name in SCORE_FIELDS
    }
    return ScoreSummary(
        n_reports=len(reports),
        n_degenerate=sum(1 for r in reports if r.degenerate),
        means=means,
    )
