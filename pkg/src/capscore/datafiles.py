"""Reading and writing the pipeline's file formats.

Samples and oracles are JSONL (one record per line); score reports are
JSONL keyed by sample_id with a JSON summary alongside; metric/human
scores and votes are CSV. Writers emit sorted-key JSON so reruns are byte
comparable.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import EmptyInput, IdMismatch
from .gateway import ImageAttachment
from .units import CaptionSample, OracleSet

log = logging.getLogger(__name__)

_MEDIA_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".webp": "image/webp",
}


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: bad JSON: {exc}") from exc
    return records


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def write_json(path: str | Path, data: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(data, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def load_samples(path: str | Path) -> list[CaptionSample]:
    records = read_jsonl(path)
    if not records:
        raise EmptyInput(f"no samples in {path}")
    samples = [CaptionSample.from_record(r) for r in records]
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate sample ids in {path}: {dupes}")
    return samples


def load_oracles(path: str | Path) -> dict[str, OracleSet]:
    """Oracle file: one record per sample with its reference decomposition."""
    oracles = {}
    for record in read_jsonl(path):
        sample_id = str(record["sample_id"])
        oracles[sample_id] = OracleSet.from_records(
            record.get("units", []), source_caption=record.get("caption", "")
        )
    if not oracles:
        raise EmptyInput(f"no oracle entries in {path}")
    return oracles


def load_image(image_ref: Optional[str]) -> Optional[ImageAttachment]:
    """Local image paths become attachments; missing/remote refs are skipped."""
    if not image_ref:
        return None
    path = Path(image_ref)
    if not path.is_file():
        log.warning("image %s not found, continuing text-only", image_ref)
        return None
    media_type = _MEDIA_TYPES.get(path.suffix.lower(), "application/octet-stream")
    return ImageAttachment(data=path.read_bytes(), media_type=media_type)


def read_score_csv(path: str | Path) -> dict[tuple[str, str], float]:
    """CSV with columns sample_id, system, score -> {(sample, system): score}."""
    scores = {}
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["sample_id"], row["system"])
            scores[key] = float(row["score"])
    if not scores:
        raise EmptyInput(f"no score rows in {path}")
    return scores


def aligned_score_vectors(
    metric: dict[tuple[str, str], float], human: dict[tuple[str, str], float]
) -> tuple[list[float], list[float], list[str], list[str]]:
    """Flattened aligned vectors plus the (sorted) sample and system axes."""
    if set(metric) != set(human):
        raise IdMismatch(set(metric) ^ set(human))
    keys = sorted(metric)
    samples = sorted({k[0] for k in keys})
    systems = sorted({k[1] for k in keys})
    return [metric[k] for k in keys], [human[k] for k in keys], samples, systems


def score_matrices(
    metric: dict[tuple[str, str], float], human: dict[tuple[str, str], float]
):
    """(n_samples, n_systems) matrices for sample-wise statistics.

    Requires a complete grid; partially covered samples are dropped with a
    warning because a per-sample ranking needs every system's score.
    """
    _, _, samples, systems = aligned_score_vectors(metric, human)
    rows_m, rows_h, kept = [], [], []
    for sample in samples:
        keys = [(sample, system) for system in systems]
        if all(k in metric for k in keys):
            rows_m.append([metric[k] for k in keys])
            rows_h.append([human[k] for k in keys])
            kept.append(sample)
        else:
            log.warning("sample %s lacks scores for some systems, dropped", sample)
    return np.array(rows_m), np.array(rows_h), kept, systems


def read_votes_csv(path: str | Path) -> list[tuple[str, str, str]]:
    """CSV with columns sample_id, system_a, system_b, outcome in {a, b, tie}."""
    votes = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            votes.append((row["system_a"], row["system_b"], row["outcome"]))
    if not votes:
        raise EmptyInput(f"no votes in {path}")
    return votes
