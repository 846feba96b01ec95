"""Shared domain types: pixels, label maps, probability maps, superpixels,
budget ledger, and per-round state.

Argmax ties break toward the lowest class id everywhere so that runs are
reproducible across platforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Sentinel in superpixel maps for pixels no ingested segment covers.
NO_SEGMENT = np.uint32(0xFFFFFFFF)

LABEL_ROLES = ("ground_truth", "pseudo", "corrected")


class OutOfBounds(Exception):
    pass


@dataclass(frozen=True, order=True)
class PixelRef:
    image_id: str
    x: int
    y: int


@dataclass
class LabelMap:
    image_id: str
    role: str
    data: np.ndarray  # H x W integer class ids

    def __post_init__(self) -> None:
        if self.role not in LABEL_ROLES:
            raise ValueError(f"unknown label role {self.role!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    def at(self, pixel: PixelRef) -> int:
        _check_bounds(pixel, self.shape)
        return int(self.data[pixel.y, pixel.x])


@dataclass
class ProbMap:
    image_id: str
    data: np.ndarray  # H x W x C, rows sum to 1 within 1e-5

    @property
    def num_classes(self) -> int:
        return self.data.shape[2]

    def row(self, pixel: PixelRef) -> np.ndarray:
        _check_bounds(pixel, self.data.shape[:2])
        return self.data[pixel.y, pixel.x]


def _check_bounds(pixel: PixelRef, shape: tuple[int, int]) -> None:
    h, w = shape
    if not (0 <= pixel.x < w and 0 <= pixel.y < h):
        raise OutOfBounds(f"({pixel.x}, {pixel.y}) outside {w}x{h} image {pixel.image_id}")


def estimated_label(prob_map: ProbMap, pixel: PixelRef) -> int:
    """Most probable class for one pixel; ties go to the lowest class id."""
    return int(np.argmax(prob_map.row(pixel)))


def estimated_labels(prob_map: ProbMap) -> np.ndarray:
    """Per-pixel argmax over the whole map (H x W)."""
    return np.argmax(prob_map.data, axis=2)


@dataclass
class Superpixel:
    """One segment of a partition: pixel coordinates in row-major order."""

    segment_id: int
    image_id: str
    ys: np.ndarray
    xs: np.ndarray

    def __len__(self) -> int:
        return len(self.ys)

    def pixel(self, i: int) -> PixelRef:
        return PixelRef(self.image_id, int(self.xs[i]), int(self.ys[i]))

    def pixels(self) -> list[PixelRef]:
        return [self.pixel(i) for i in range(len(self.ys))]


@dataclass
class SuperpixelPartition:
    image_id: str
    data: np.ndarray  # H x W segment ids; NO_SEGMENT marks uncovered pixels

    def __post_init__(self) -> None:
        self._segments: dict[int, Superpixel] | None = None

    def segment_ids(self) -> list[int]:
        return sorted(self.segments().keys())

    def segments(self) -> dict[int, Superpixel]:
        if self._segments is None:
            segs: dict[int, Superpixel] = {}
            flat = self.data.ravel()
            order = np.argsort(flat, kind="stable")
            sorted_vals = flat[order]
            boundaries = np.flatnonzero(np.diff(sorted_vals)) + 1
            starts = np.concatenate(([0], boundaries))
            ends = np.concatenate((boundaries, [flat.size]))
            w = self.data.shape[1]
            for s, e in zip(starts, ends):
                seg_id = int(sorted_vals[s])
                if seg_id == int(NO_SEGMENT):
                    continue
                idx = np.sort(order[s:e])  # row-major within the segment
                segs[seg_id] = Superpixel(seg_id, self.image_id, idx // w, idx % w)
            self._segments = segs
        return self._segments

    def segment(self, segment_id: int) -> Superpixel:
        return self.segments()[segment_id]


@dataclass
class BudgetLedger:
    """Click and information-theoretic spend for one run.

    bits are derived from the confirm/correct counters instead of being
    accumulated, so totals do not depend on answer arrival order.
    """

    num_classes: int
    clicks_limit: int = 0
    confirmations: int = 0
    corrections: int = 0

    @property
    def clicks_spent(self) -> int:
        return self.confirmations + self.corrections

    @property
    def bits_spent(self) -> float:
        return self.confirmations * 1.0 + self.corrections * math.log2(self.num_classes)

    @property
    def empirical_confirm_rate(self) -> float:
        return self.confirmations / self.clicks_spent if self.clicks_spent else 0.0

    def as_dict(self) -> dict:
        return {
            "clicks_spent": self.clicks_spent,
            "bits_spent": self.bits_spent,
            "clicks_limit": self.clicks_limit,
            "confirmations": self.confirmations,
            "corrections": self.corrections,
        }

    @classmethod
    def from_dict(cls, doc: dict, num_classes: int) -> "BudgetLedger":
        ledger = cls(num_classes=num_classes, clicks_limit=int(doc["clicks_limit"]),
                     confirmations=int(doc["confirmations"]), corrections=int(doc["corrections"]))
        return ledger


@dataclass
class RoundState:
    """Checkpoint written after every completed round."""

    round_index: int
    ledger: BudgetLedger
    corrected: dict[str, list[int]]            # image_id -> segment ids already expanded
    batch: list[dict] = field(default_factory=list)   # this round's issued queries
    scores: list[dict] = field(default_factory=list)  # pool scores, f32 precision
    label_paths: dict[str, str] = field(default_factory=dict)
    touched_paths: dict[str, str] = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        doc = {
            "round_index": self.round_index,
            "ledger": self.ledger.as_dict(),
            "corrected": {k: sorted(v) for k, v in sorted(self.corrected.items())},
            "batch": self.batch,
            "scores": [
                {**s, "score": float(np.float32(s["score"]))} for s in self.scores
            ],
            "label_paths": dict(sorted(self.label_paths.items())),
            "touched_paths": dict(sorted(self.touched_paths.items())),
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, num_classes: int) -> "RoundState":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            round_index=int(doc["round_index"]),
            ledger=BudgetLedger.from_dict(doc["ledger"], num_classes),
            corrected={k: list(map(int, v)) for k, v in doc["corrected"].items()},
            batch=doc.get("batch", []),
            scores=doc.get("scores", []),
            label_paths=doc.get("label_paths", {}),
            touched_paths=doc.get("touched_paths", {}),
        )
