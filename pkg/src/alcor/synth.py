"""Desk-scale synthetic datasets for exercising the correction loop.

Each image is a g x g grid of superpixel blocks. Ground truth assigns every
block the class of its nearest anchor cell (one anchor per class), giving
blocky contiguous regions that are single-class per superpixel. Images get
class-conditional colors plus small Gaussian noise. Pseudo labels equal
ground truth except for an exact fraction of blocks flipped to a wrong
class, standing in for foundation-model labeling errors.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor_io
from .tensor_io import DatasetManifest, ImageEntry


class InvalidSpec(ValueError):
    pass


@dataclass
class SynthSpec:
    images: int = 10
    height: int = 64
    width: int = 64
    classes: int = 4
    noise: float = 0.4
    grid: int = 8
    seed: int = 0
    color_sigma: float = 0.02

    def __post_init__(self) -> None:
        if min(self.images, self.height, self.width, self.classes, self.grid) < 1:
            raise InvalidSpec("images, size, classes, and grid must all be >= 1")
        if not 0.0 <= self.noise <= 1.0:
            raise InvalidSpec(f"noise {self.noise} outside [0, 1]")
        if self.classes > self.grid * self.grid:
            raise InvalidSpec("need at least one grid cell per class")


def class_palette(num_classes: int) -> np.ndarray:
    """Well-separated RGB colors in [0, 1], one row per class."""
    colors = []
    for c in range(num_classes):
        colors.append(colorsys.hsv_to_rgb(c / num_classes, 0.75, 0.95))
    return np.array(colors, dtype=np.float64)


def grid_partition(height: int, width: int, grid: int) -> np.ndarray:
    """Row-major block ids for a g x g grid partition (u32 H x W)."""
    row_edges = np.linspace(0, height, grid + 1).astype(int)
    col_edges = np.linspace(0, width, grid + 1).astype(int)
    out = np.zeros((height, width), dtype=np.uint32)
    for bi in range(grid):
        for bj in range(grid):
            out[row_edges[bi]:row_edges[bi + 1], col_edges[bj]:col_edges[bj + 1]] = bi * grid + bj
    return out


def _block_classes(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """g x g class assignment: nearest-anchor blobs, every class present."""
    g = spec.grid
    cells = rng.choice(g * g, size=spec.classes, replace=False)
    anchors = np.stack([cells // g, cells % g], axis=1).astype(np.float64)
    bi, bj = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
    coords = np.stack([bi.ravel(), bj.ravel()], axis=1).astype(np.float64)
    d2 = ((coords[:, None, :] - anchors[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1).astype(np.uint16).reshape(g, g)


def generate_dataset(out_dir: str | Path, spec: SynthSpec) -> Path:
    """Write tensors and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    for sub in ("images", "labels_gt", "labels_pseudo", "superpixels"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(spec.seed)
    palette = class_palette(spec.classes)
    spx = grid_partition(spec.height, spec.width, spec.grid)
    row_edges = np.linspace(0, spec.height, spec.grid + 1).astype(int)
    col_edges = np.linspace(0, spec.width, spec.grid + 1).astype(int)

    image_ids = [f"img_{i:03d}" for i in range(spec.images)]
    gt_blocks: dict[str, np.ndarray] = {}
    entries: list[ImageEntry] = []

    for iid in image_ids:
        blocks = _block_classes(spec, rng)
        gt_blocks[iid] = blocks
        gt = np.zeros((spec.height, spec.width), dtype=np.uint16)
        for bi in range(spec.grid):
            for bj in range(spec.grid):
                gt[row_edges[bi]:row_edges[bi + 1],
                   col_edges[bj]:col_edges[bj + 1]] = blocks[bi, bj]

        base = palette[gt]  # H x W x 3 in [0,1]
        noisy = base + rng.normal(0.0, spec.color_sigma, size=base.shape)
        image = (np.clip(noisy, 0.0, 1.0) * 255.0).round().astype(np.uint8)

        tensor_io.write_tensor(out_dir / "images" / f"{iid}.alct", image)
        tensor_io.write_tensor(out_dir / "labels_gt" / f"{iid}.alct", gt)
        tensor_io.write_tensor(out_dir / "superpixels" / f"{iid}.alct", spx)
        entries.append(ImageEntry(
            image_id=iid,
            image_path=f"images/{iid}.alct",
            pseudo_label_path=f"labels_pseudo/{iid}.alct",
            superpixel_path=f"superpixels/{iid}.alct",
            width=spec.width, height=spec.height,
            gt_label_path=f"labels_gt/{iid}.alct",
        ))

    # Flip an exact global fraction of blocks to a wrong class.
    blocks_per_image = spec.grid * spec.grid
    total_blocks = spec.images * blocks_per_image
    num_flips = int(round(spec.noise * total_blocks))
    flips = set(rng.choice(total_blocks, size=num_flips, replace=False).tolist()) \
        if num_flips else set()

    for i, iid in enumerate(image_ids):
        blocks = gt_blocks[iid]
        pseudo_blocks = blocks.copy()
        for b in range(blocks_per_image):
            if i * blocks_per_image + b not in flips:
                continue
            bi, bj = b // spec.grid, b % spec.grid
            wrong = int(rng.integers(spec.classes - 1))
            if wrong >= blocks[bi, bj]:
                wrong += 1  # uniform over classes != ground truth
            pseudo_blocks[bi, bj] = wrong
        pseudo = np.zeros((spec.height, spec.width), dtype=np.uint16)
        for bi in range(spec.grid):
            for bj in range(spec.grid):
                pseudo[row_edges[bi]:row_edges[bi + 1],
                       col_edges[bj]:col_edges[bj + 1]] = pseudo_blocks[bi, bj]
        tensor_io.write_tensor(out_dir / "labels_pseudo" / f"{iid}.alct", pseudo)

    manifest = DatasetManifest(
        class_names=[f"class_{c:02d}" for c in range(spec.classes)],
        ignore_id=None,
        images=entries,
        root=out_dir,
    )
    manifest_path = out_dir / "manifest.json"
    tensor_io.save_manifest(manifest_path, manifest)
    return manifest_path
