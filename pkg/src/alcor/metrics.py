"""Selection quality (mislabel detection) and dataset quality (IoU).

Detection treats a submitted pixel as a true positive when its working
label disagrees with ground truth there. Pixels at ignore positions (in
either map) are dropped from selected sets and denominators alike, so the
reported ``selected`` count is the post-exclusion one and TP + FP always
equals it.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .core import LabelMap, PixelRef


class ImageMismatch(Exception):
    pass


@dataclass
class DetectionReport:
    selected: int
    true_positives: int
    false_positives: int
    false_negatives: int

    @property
    def precision(self) -> float:
        denom = self.true_positives + self.false_positives
        return self.true_positives / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.true_positives + self.false_negatives
        return self.true_positives / denom if denom else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if (p + r) else 0.0


@dataclass
class IoUReport:
    per_class_iou: dict[int, float]  # classes present in either map
    mean_iou: float
    pixel_accuracy: float


def _valid_mask(a: np.ndarray, b: np.ndarray, ignore_id: int | None) -> np.ndarray:
    if a.shape != b.shape:
        raise ImageMismatch(f"label maps disagree in shape: {a.shape} vs {b.shape}")
    mask = np.ones(a.shape, dtype=bool)
    if ignore_id is not None:
        mask &= (a != ignore_id) & (b != ignore_id)
    return mask


def detection_report(selected_pixels: set[PixelRef],
                     pseudo: dict[str, LabelMap],
                     gt: dict[str, LabelMap],
                     ignore_id: int | None = None) -> DetectionReport:
    """Precision/recall of flagging mislabeled pixels over a whole dataset."""
    if set(pseudo) != set(gt):
        raise ImageMismatch("pseudo and ground-truth cover different images")

    tp = fp = 0
    mislabeled_total = 0
    selected_by_image: dict[str, set[tuple[int, int]]] = {}
    for ref in selected_pixels:
        selected_by_image.setdefault(ref.image_id, set()).add((ref.y, ref.x))

    for image_id in sorted(pseudo):
        p, g = pseudo[image_id].data, gt[image_id].data
        valid = _valid_mask(p, g, ignore_id)
        wrong = (p != g) & valid
        mislabeled_total += int(wrong.sum())
        for (y, x) in selected_by_image.get(image_id, ()):
            if not valid[y, x]:
                continue
            if wrong[y, x]:
                tp += 1
            else:
                fp += 1

    return DetectionReport(
        selected=tp + fp,
        true_positives=tp,
        false_positives=fp,
        false_negatives=mislabeled_total - tp,
    )


def iou_report(pred: LabelMap, gt: LabelMap, num_classes: int,
               ignore_id: int | None = None) -> IoUReport:
    """Per-class IoU plus the mean over classes present in either map."""
    valid = _valid_mask(pred.data, gt.data, ignore_id)
    p = pred.data[valid]
    g = gt.data[valid]

    per_class: dict[int, float] = {}
    for c in range(num_classes):
        if ignore_id is not None and c == ignore_id:
            continue
        pc = p == c
        gc = g == c
        union = int(np.count_nonzero(pc | gc))
        if union == 0:
            continue  # class absent from both maps
        per_class[c] = int(np.count_nonzero(pc & gc)) / union

    mean = sum(per_class.values()) / len(per_class) if per_class else 0.0
    acc = float(np.count_nonzero(p == g) / p.size) if p.size else 0.0
    return IoUReport(per_class_iou=per_class, mean_iou=mean, pixel_accuracy=acc)


def dataset_iou_report(pred: dict[str, LabelMap], gt: dict[str, LabelMap],
                       num_classes: int, ignore_id: int | None = None) -> IoUReport:
    """IoU over the concatenation of all images (single confusion pool)."""
    if set(pred) != set(gt):
        raise ImageMismatch("prediction and ground-truth cover different images")
    inter = np.zeros(num_classes, dtype=np.int64)
    union = np.zeros(num_classes, dtype=np.int64)
    agree = 0
    total = 0
    for image_id in sorted(pred):
        valid = _valid_mask(pred[image_id].data, gt[image_id].data, ignore_id)
        p = pred[image_id].data[valid]
        g = gt[image_id].data[valid]
        agree += int(np.count_nonzero(p == g))
        total += int(p.size)
        for c in range(num_classes):
            if ignore_id is not None and c == ignore_id:
                continue
            pc = p == c
            gc = g == c
            inter[c] += int(np.count_nonzero(pc & gc))
            union[c] += int(np.count_nonzero(pc | gc))

    per_class = {c: inter[c] / union[c] for c in range(num_classes) if union[c] > 0}
    mean = sum(per_class.values()) / len(per_class) if per_class else 0.0
    return IoUReport(per_class_iou=per_class, mean_iou=mean,
                     pixel_accuracy=agree / total if total else 0.0)


def corrected_class_histogram(query_log: list[dict]) -> dict[int, int]:
    """Counts of corrected-to classes over all corrected verdicts."""
    counts: Counter[int] = Counter()
    for record in query_log:
        if record.get("verdict") == "corrected":
            counts[int(record["corrected_label"])] += 1
    return dict(counts)
