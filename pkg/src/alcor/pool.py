"""Diversified pixel pool: one representative pixel per superpixel.

Each eligible segment contributes a single candidate, chosen as the pixel
whose predicted class distribution has the highest cosine similarity to the
mean prediction over the segment's dominant-label subset. Pixels whose
working label is the ignore id never take part.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .core import NO_SEGMENT, PixelRef, ProbMap, Superpixel, SuperpixelPartition


class EmptySegment(Exception):
    pass


class EmptySubset(Exception):
    pass


class DegenerateVector(Exception):
    """A probability row with zero norm; impossible for valid maps, guarded."""


class MissingProbMap(Exception):
    pass


class ResidualPolicy(str, Enum):
    """What to do with pixels no ingested superpixel covers."""

    COMPONENTS = "components"  # one segment per 4-connected uncovered component
    SINGLE = "single"          # all uncovered pixels as one segment
    EXCLUDE = "exclude"        # keep them out of pooling entirely


@dataclass
class PoolEntry:
    pixel: PixelRef
    image_id: str
    segment_id: int
    dominant_label: int
    subset_size: int
    mean_prediction: np.ndarray
    segment: Superpixel

    def sort_key(self) -> tuple[str, int]:
        return (self.image_id, self.segment_id)


def apply_residual_policy(partition: SuperpixelPartition,
                          policy: ResidualPolicy = ResidualPolicy.COMPONENTS,
                          ) -> SuperpixelPartition:
    """Assign uncovered pixels to fresh segment ids according to *policy*."""
    data = partition.data
    uncovered = data == NO_SEGMENT
    if not uncovered.any() or policy is ResidualPolicy.EXCLUDE:
        return partition

    covered = data[~uncovered]
    base = int(covered.max()) + 1 if covered.size else 0
    out = data.copy()
    if policy is ResidualPolicy.SINGLE:
        out[uncovered] = base
    else:
        structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
        comps, n = ndimage.label(uncovered, structure=structure)
        for k in range(1, n + 1):
            out[comps == k] = base + k - 1
    return SuperpixelPartition(partition.image_id, out)


def segment_view(segment: Superpixel, keep: np.ndarray) -> Superpixel:
    """Subset of a segment's pixels (row-major order preserved)."""
    return Superpixel(segment.segment_id, segment.image_id,
                      segment.ys[keep], segment.xs[keep])


def scorable_segment(segment: Superpixel, ignore_mask: np.ndarray | None) -> Superpixel:
    """Drop pixels whose working label is the ignore id."""
    if ignore_mask is None:
        return segment
    keep = ~ignore_mask[segment.ys, segment.xs]
    return segment_view(segment, keep)


def segment_rows(segment: Superpixel, probs: ProbMap) -> np.ndarray:
    """Probability rows of a segment's pixels, |s| x C."""
    return probs.data[segment.ys, segment.xs]


def dominant_label(segment: Superpixel, probs: ProbMap) -> int:
    """Class predicted for the plurality of the segment; ties to lowest id."""
    if len(segment) == 0:
        raise EmptySegment(f"segment {segment.segment_id} of {segment.image_id}")
    est = np.argmax(segment_rows(segment, probs), axis=1)
    counts = np.bincount(est, minlength=probs.num_classes)
    return int(np.argmax(counts))


def dominant_subset(segment: Superpixel, probs: ProbMap) -> Superpixel:
    """Pixels whose estimated label equals the segment's dominant label."""
    if len(segment) == 0:
        raise EmptySegment(f"segment {segment.segment_id} of {segment.image_id}")
    est = np.argmax(segment_rows(segment, probs), axis=1)
    dom = int(np.argmax(np.bincount(est, minlength=probs.num_classes)))
    return segment_view(segment, est == dom)


def mean_prediction(subset: Superpixel, probs: ProbMap) -> np.ndarray:
    """Arithmetic mean of the subset's probability rows (float64)."""
    if len(subset) == 0:
        raise EmptySubset(f"segment {subset.segment_id} of {subset.image_id}")
    return segment_rows(subset, probs).astype(np.float64).mean(axis=0)


def cosine_to(reference: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Cosine similarity of each row against *reference* (float64)."""
    rows = rows.astype(np.float64)
    ref = reference.astype(np.float64)
    ref_norm = np.linalg.norm(ref)
    row_norms = np.linalg.norm(rows, axis=1)
    if ref_norm == 0.0 or np.any(row_norms == 0.0):
        raise DegenerateVector("zero-norm probability row")
    return (rows @ ref) / (row_norms * ref_norm)


def representative_pixel(segment: Superpixel, probs: ProbMap) -> PoolEntry:
    """Pool entry for one segment: the pixel most aligned with the mean
    prediction of the dominant-label subset; ties go to row-major order."""
    if len(segment) == 0:
        raise EmptySegment(f"segment {segment.segment_id} of {segment.image_id}")
    dom = dominant_label(segment, probs)
    subset = dominant_subset(segment, probs)
    mean_pred = mean_prediction(subset, probs)
    sims = cosine_to(mean_pred, segment_rows(segment, probs))
    best = int(np.argmax(sims))  # first occurrence = row-major tie-break
    return PoolEntry(
        pixel=segment.pixel(best),
        image_id=segment.image_id,
        segment_id=segment.segment_id,
        dominant_label=dom,
        subset_size=len(subset),
        mean_prediction=mean_pred,
        segment=segment,
    )


def build_pool(partitions: dict[str, SuperpixelPartition],
               probs: dict[str, ProbMap],
               corrected: dict[str, set[int]] | None = None,
               ignore_masks: dict[str, np.ndarray] | None = None,
               ) -> list[PoolEntry]:
    """One entry per eligible segment, ordered by (image_id, segment_id).

    Segments corrected in prior rounds and segments with no scorable pixel
    are skipped.
    """
    corrected = corrected or {}
    entries: list[PoolEntry] = []
    for image_id in sorted(partitions):
        if image_id not in probs:
            raise MissingProbMap(image_id)
        partition = partitions[image_id]
        done = corrected.get(image_id, set())
        mask = ignore_masks.get(image_id) if ignore_masks else None
        for seg_id in partition.segment_ids():
            if seg_id in done:
                continue
            effective = scorable_segment(partition.segment(seg_id), mask)
            if len(effective) == 0:
                continue
            entries.append(representative_pixel(effective, probs[image_id]))
    return entries


def dump_pool_csv(entries: list[PoolEntry]) -> str:
    lines = ["image_id,segment_id,x,y,dominant_label,subset_size"]
    for e in entries:
        lines.append(f"{e.image_id},{e.segment_id},{e.pixel.x},{e.pixel.y},"
                     f"{e.dominant_label},{e.subset_size}")
    return "\n".join(lines) + "\n"
