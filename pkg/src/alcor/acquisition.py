"""Acquisition scores over pool entries and deterministic batch selection.

CIL scores a single pixel by how little probability the model puts on its
current label. The look-ahead variants value a candidate by the effect of
expanding its answer across the superpixel: LCIL averages CIL uniformly,
SIM weights each pixel's CIL by cosine similarity to the representative's
prediction. Entropy and BvSB baselines are aggregated the same way as LCIL
so every kind competes on the same pool.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .core import LabelMap, ProbMap
from .pool import EmptySegment, PoolEntry, Superpixel, cosine_to, segment_rows


class IgnoreLabel(Exception):
    pass


class EmptyPool(Exception):
    pass


class AcquisitionKind(str, Enum):
    CIL = "cil"
    LCIL = "lcil"
    SIM = "sim"
    ENTROPY = "entropy"
    BVSB = "bvsb"
    RANDOM = "random"  # requires an explicitly seeded generator


def cil(prob_row: np.ndarray, given_label: int, ignore_id: int | None = None) -> float:
    """1 minus the probability mass on the current label."""
    if ignore_id is not None and given_label == ignore_id:
        raise IgnoreLabel(f"label {given_label} is the ignore id")
    return float(1.0 - np.float64(prob_row[given_label]))


def _segment_cils(segment: Superpixel, probs: ProbMap, labels: LabelMap) -> np.ndarray:
    if len(segment) == 0:
        raise EmptySegment(f"segment {segment.segment_id} of {segment.image_id}")
    rows = segment_rows(segment, probs).astype(np.float64)
    given = labels.data[segment.ys, segment.xs]
    return 1.0 - rows[np.arange(len(segment)), given]


def lcil(segment: Superpixel, probs: ProbMap, labels: LabelMap) -> float:
    """Mean CIL over the segment."""
    return float(_segment_cils(segment, probs, labels).mean())


def sim(entry: PoolEntry, segment: Superpixel, probs: ProbMap, labels: LabelMap) -> float:
    """Sum over the segment of cosine(representative row, pixel row) * CIL."""
    cils = _segment_cils(segment, probs, labels)
    rep_row = probs.row(entry.pixel)
    cosines = cosine_to(rep_row, segment_rows(segment, probs))
    return float(np.dot(cosines, cils))


def entropy_score(prob_row: np.ndarray) -> float:
    """Shannon entropy in bits, with 0 * log 0 taken as 0."""
    row = np.asarray(prob_row, dtype=np.float64)
    nz = row[row > 0.0]
    return float(-(nz * np.log2(nz)).sum())


def bvsb_score(prob_row: np.ndarray) -> float:
    """1 - (top1 - top2); near 1 means the model cannot separate its top picks."""
    row = np.sort(np.asarray(prob_row, dtype=np.float64))[::-1]
    return float(1.0 - (row[0] - row[1]))


def score_entry(entry: PoolEntry, kind: AcquisitionKind, probs: ProbMap,
                labels: LabelMap, ignore_id: int | None = None) -> float:
    segment = entry.segment
    if kind is AcquisitionKind.CIL:
        return cil(probs.row(entry.pixel), labels.at(entry.pixel), ignore_id)
    if kind is AcquisitionKind.LCIL:
        return lcil(segment, probs, labels)
    if kind is AcquisitionKind.SIM:
        return sim(entry, segment, probs, labels)
    if kind is AcquisitionKind.ENTROPY:
        rows = segment_rows(segment, probs)
        return float(np.mean([entropy_score(r) for r in rows]))
    if kind is AcquisitionKind.BVSB:
        rows = segment_rows(segment, probs)
        return float(np.mean([bvsb_score(r) for r in rows]))
    raise ValueError(f"kind {kind} needs score_pool with a generator")


def score_pool(entries: list[PoolEntry], kind: AcquisitionKind,
               probs: dict[str, ProbMap], labels: dict[str, LabelMap],
               ignore_id: int | None = None,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Score every entry once; RANDOM draws one uniform value per entry."""
    if kind is AcquisitionKind.RANDOM:
        if rng is None:
            raise ValueError("random acquisition requires a seeded generator")
        return rng.random(len(entries))
    return np.array(
        [score_entry(e, kind, probs[e.image_id], labels[e.image_id], ignore_id)
         for e in entries],
        dtype=np.float64,
    )


def select_batch(entries: list[PoolEntry], scores: np.ndarray, batch_size: int,
                 ) -> list[tuple[PoolEntry, float]]:
    """Top-min(B, |pool|) entries by descending score, computed once; ties
    break by (image_id, segment_id) ascending."""
    if batch_size < 1:
        raise ValueError(f"batch size {batch_size} < 1")
    if not entries:
        raise EmptyPool("no eligible segments to select from")
    if len(scores) != len(entries):
        raise ValueError("scores and entries disagree in length")
    order = sorted(range(len(entries)),
                   key=lambda i: (-scores[i],) + entries[i].sort_key())
    return [(entries[i], float(scores[i])) for i in order[:batch_size]]


def dump_scores_csv(entries: list[PoolEntry], scores: np.ndarray,
                    kind: AcquisitionKind) -> str:
    ranked = sorted(range(len(entries)),
                    key=lambda i: (-scores[i],) + entries[i].sort_key())
    rank_of = {i: r for r, i in enumerate(ranked)}
    lines = ["image_id,segment_id,kind,score,rank"]
    for i, e in enumerate(entries):
        lines.append(f"{e.image_id},{e.segment_id},{kind.value},"
                     f"{float(scores[i])!r},{rank_of[i]}")
    return "\n".join(lines) + "\n"
