from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from alcor.core import ProbMap, Superpixel


def random_prob_rows(rng: np.random.Generator, n: int, num_classes: int) -> np.ndarray:
    """n random probability rows as f32, strictly positive, normalized."""
    raw = rng.random((n, num_classes)) + 1e-3
    rows = raw / raw.sum(axis=1, keepdims=True)
    return rows.astype(np.float32)


def segment_from_rows(rows: np.ndarray, image_id: str = "img",
                      width: int = 6, segment_id: int = 0,
                      ) -> tuple[Superpixel, ProbMap]:
    """Lay n probability rows out row-major in a width-6 image."""
    n, c = rows.shape
    height = (n + width - 1) // width
    data = np.full((height, width, c), 1.0 / c, dtype=np.float32)
    ys = np.arange(n) // width
    xs = np.arange(n) % width
    data[ys, xs] = rows
    return Superpixel(segment_id, image_id, ys, xs), ProbMap(image_id, data)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
