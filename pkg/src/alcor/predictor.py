"""Per-pixel class probabilities from the current working labels.

The built-in model is a Gaussian naive Bayes over five features per pixel:
normalized r, g, b and the relative image coordinates u = x/width,
v = y/height. It is deliberately simple scaffolding: closed-form fit, a
single variance floor, fixed summation order so refits are bit-identical.

Heavier models plug in through the round-directory exchange: the loop
writes labels/, an external command (or a human) writes probs/, and the
loop ingests and validates them.
"""

from __future__ import annotations

import shlex
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor_io
from .core import LabelMap, ProbMap
from .tensor_io import PROB_ROW_TOL

VARIANCE_FLOOR = 1e-4
NUM_FEATURES = 5


class NoLabeledPixels(Exception):
    pass


class CommandFailed(Exception):
    pass


class MissingProbs(Exception):
    pass


class ValidationFailed(Exception):
    pass


def pixel_features(image: np.ndarray) -> np.ndarray:
    """H x W x 5 feature tensor: r, g, b in [0,1] plus u, v in [0,1)."""
    h, w = image.shape[:2]
    feats = np.empty((h, w, NUM_FEATURES), dtype=np.float64)
    feats[:, :, :3] = image.astype(np.float64) / 255.0
    feats[:, :, 3] = np.arange(w, dtype=np.float64)[None, :] / w
    feats[:, :, 4] = np.arange(h, dtype=np.float64)[:, None] / h
    return feats


@dataclass
class NaiveBayesModel:
    priors: np.ndarray  # C
    means: np.ndarray   # C x 5
    variances: np.ndarray  # C x 5, floored

    @property
    def num_classes(self) -> int:
        return len(self.priors)


def fit(images: dict[str, np.ndarray], labels: dict[str, LabelMap],
        num_classes: int, ignore_id: int | None = None) -> NaiveBayesModel:
    """Class-conditional diagonal Gaussians with empirical priors.

    Per-image partial sums are merged in sorted image order, so identical
    inputs produce bit-identical parameters.
    """
    counts = np.zeros(num_classes, dtype=np.int64)
    sums = np.zeros((num_classes, NUM_FEATURES), dtype=np.float64)
    sq_sums = np.zeros((num_classes, NUM_FEATURES), dtype=np.float64)

    for image_id in sorted(images):
        feats = pixel_features(images[image_id]).reshape(-1, NUM_FEATURES)
        lab = labels[image_id].data.ravel()
        for c in range(num_classes):
            mask = lab == c
            if ignore_id is not None and c == ignore_id:
                continue
            n = int(mask.sum())
            if n == 0:
                continue
            rows = feats[mask]
            counts[c] += n
            sums[c] += rows.sum(axis=0)
            sq_sums[c] += (rows * rows).sum(axis=0)

    total = int(counts.sum())
    if total == 0:
        raise NoLabeledPixels("no non-ignore labeled pixels to fit on")

    priors = counts / total
    means = np.zeros_like(sums)
    variances = np.full_like(sums, VARIANCE_FLOOR)
    present = counts > 0
    means[present] = sums[present] / counts[present, None]
    raw_var = sq_sums[present] / counts[present, None] - means[present] ** 2
    variances[present] = np.maximum(raw_var, VARIANCE_FLOOR)
    return NaiveBayesModel(priors=priors, means=means, variances=variances)


def predict(model: NaiveBayesModel, image: np.ndarray, image_id: str) -> ProbMap:
    """Posterior per pixel, computed in log space and normalized to f32."""
    feats = pixel_features(image)
    h, w = feats.shape[:2]
    log_post = np.full((h, w, model.num_classes), -np.inf, dtype=np.float64)
    for c in range(model.num_classes):
        if model.priors[c] == 0.0:
            continue
        var = model.variances[c]
        diff = feats - model.means[c]
        loglik = -0.5 * (np.log(2.0 * np.pi * var).sum()
                         + ((diff * diff) / var).sum(axis=2))
        log_post[:, :, c] = np.log(model.priors[c]) + loglik

    log_post -= log_post.max(axis=2, keepdims=True)
    post = np.exp(log_post)
    post /= post.sum(axis=2, keepdims=True)
    return ProbMap(image_id, post.astype(np.float32))


def validate_prob_map(prob: ProbMap, expected_hw: tuple[int, int], num_classes: int) -> None:
    data = prob.data
    if data.ndim != 3 or data.shape != (*expected_hw, num_classes):
        raise ValidationFailed(
            f"{prob.image_id}: shape {data.shape}, expected {(*expected_hw, num_classes)}")
    if np.any(data < 0):
        raise ValidationFailed(f"{prob.image_id}: negative probabilities")
    sums = data.astype(np.float64).sum(axis=2)
    worst = float(np.abs(sums - 1.0).max())
    if worst > PROB_ROW_TOL:
        raise ValidationFailed(
            f"{prob.image_id}: row sums off by {worst:.3g} (tolerance {PROB_ROW_TOL})")


def write_round_labels(round_dir: Path, labels: dict[str, LabelMap]) -> None:
    label_dir = round_dir / "labels"
    label_dir.mkdir(parents=True, exist_ok=True)
    for image_id in sorted(labels):
        tensor_io.write_tensor(label_dir / f"{image_id}.alct",
                               labels[image_id].data.astype("<u2"))


def external_round_exchange(round_dir: str | Path,
                            image_ids: list[str],
                            expected_hw: dict[str, tuple[int, int]],
                            num_classes: int,
                            command: str | None = None,
                            poll_seconds: float = 0.5) -> dict[str, ProbMap]:
    """Run one out-of-process prediction round.

    Corrected labels must already sit in round_dir/labels/. With a command,
    it is invoked as ``<command> <round_dir>`` and must leave one
    probs/<image_id>.alct per image. Without one, we print instructions and
    poll until round_dir/probs/READY appears.
    """
    round_dir = Path(round_dir)
    probs_dir = round_dir / "probs"

    if command is not None:
        argv = shlex.split(command) + [str(round_dir)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise CommandFailed(
                f"{argv} exited {proc.returncode}: {proc.stderr.strip()[:500]}")
    else:
        ready = probs_dir / "READY"
        print(
            f"external predictor: labels written to {round_dir / 'labels'}/\n"
            f"write probability maps to {probs_dir}/<image_id>.alct "
            f"(f32, H x W x {num_classes}) and create {ready} to resume",
            file=sys.stderr,
        )
        while not ready.exists():
            time.sleep(poll_seconds)

    if not probs_dir.is_dir():
        raise MissingProbs(f"{probs_dir} does not exist")

    out: dict[str, ProbMap] = {}
    for image_id in image_ids:
        path = probs_dir / f"{image_id}.alct"
        if not path.exists():
            raise MissingProbs(f"{path} missing")
        prob = ProbMap(image_id, tensor_io.read_tensor(path))
        validate_prob_map(prob, expected_hw[image_id], num_classes)
        out[image_id] = prob
    return out
