"""Binary tensor files and dataset manifests.

All dense arrays (images, label maps, superpixel maps, probability maps)
travel through one minimal container so that round-trips are bit-exact and
readable from any language: a fixed header followed by raw little-endian
payload bytes.

Layout::

    magic    4 bytes  b"ALCT"
    version  u8       currently 1
    dtype    u8       0=u8, 1=u16, 2=u32, 3=f32
    ndim     u8       1..4
    dims     ndim x u32 (little-endian)
    payload  row-major little-endian scalars, prod(dims) * itemsize bytes
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ALCT"
VERSION = 1

DTYPE_CODES = {0: np.dtype("<u1"), 1: np.dtype("<u2"), 2: np.dtype("<u4"), 3: np.dtype("<f4")}
CODE_FOR_DTYPE = {v: k for k, v in DTYPE_CODES.items()}

MAX_NDIM = 4


class TensorFormatError(Exception):
    """Base class for malformed tensor files."""


class BadMagic(TensorFormatError):
    pass


class UnsupportedVersion(TensorFormatError):
    pass


class TruncatedPayload(TensorFormatError):
    """Payload length disagrees with the header (short or trailing bytes)."""


class DimMismatch(TensorFormatError):
    """ndim outside 1..4, a zero dim, or an unsupported dtype code."""


class IoFailure(Exception):
    pass


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor file, rejecting any deviation from the declared layout."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(raw) < 7:
        raise TruncatedPayload(f"{path}: file shorter than fixed header")
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: magic {raw[:4]!r} != {MAGIC!r}")
    version, dtype_code, ndim = raw[4], raw[5], raw[6]
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    if dtype_code not in DTYPE_CODES:
        raise DimMismatch(f"{path}: unknown dtype code {dtype_code}")
    if not 1 <= ndim <= MAX_NDIM:
        raise DimMismatch(f"{path}: ndim {ndim} outside 1..{MAX_NDIM}")

    header_len = 7 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedPayload(f"{path}: header cut off before dims")
    dims = struct.unpack_from(f"<{ndim}I", raw, 7)
    if any(d == 0 for d in dims):
        raise DimMismatch(f"{path}: zero-length dim in {dims}")

    dtype = DTYPE_CODES[dtype_code]
    expected = int(np.prod(dims, dtype=np.uint64)) * dtype.itemsize
    payload = raw[header_len:]
    if len(payload) != expected:
        raise TruncatedPayload(f"{path}: payload {len(payload)} bytes, header declares {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def write_tensor(path: str | Path, tensor: np.ndarray) -> None:
    """Write *tensor* so that ``read_tensor`` returns it bit-exactly."""
    arr = np.asarray(tensor)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f4", copy=False)
    dtype = arr.dtype.newbyteorder("<")
    if dtype not in CODE_FOR_DTYPE:
        raise DimMismatch(f"unsupported dtype {arr.dtype}")
    if not 1 <= arr.ndim <= MAX_NDIM:
        raise DimMismatch(f"ndim {arr.ndim} outside 1..{MAX_NDIM}")
    if any(d == 0 for d in arr.shape) or any(d > 0xFFFFFFFF for d in arr.shape):
        raise DimMismatch(f"dims {arr.shape} not representable")

    header = MAGIC + struct.pack("<BBB", VERSION, CODE_FOR_DTYPE[dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    try:
        Path(path).write_bytes(header + arr.astype(dtype, copy=False).tobytes("C"))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Dataset manifest

IGNORE_NONE = "none"


@dataclass
class ImageEntry:
    image_id: str
    image_path: str
    pseudo_label_path: str
    superpixel_path: str
    width: int
    height: int
    gt_label_path: str | None = None
    prob_path: str | None = None


@dataclass
class DatasetManifest:
    class_names: list[str]
    ignore_id: int | None
    images: list[ImageEntry]
    root: Path = field(default_factory=Path)
    corrected_segments: dict[str, list[int]] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def entry(self, image_id: str) -> ImageEntry:
        for img in self.images:
            if img.image_id == image_id:
                return img
        raise KeyError(image_id)


class ManifestError(Exception):
    pass


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a manifest JSON file; paths stay relative to its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: {exc}") from exc

    try:
        class_names = list(doc["class_names"])
        raw_ignore = doc.get("ignore_id", IGNORE_NONE)
        ignore_id = None if raw_ignore in (IGNORE_NONE, None) else int(raw_ignore)
        images = [
            ImageEntry(
                image_id=str(item["image_id"]),
                image_path=item["image_path"],
                pseudo_label_path=item["pseudo_label_path"],
                superpixel_path=item["superpixel_path"],
                width=int(item["width"]),
                height=int(item["height"]),
                gt_label_path=item.get("gt_label_path"),
                prob_path=item.get("prob_path"),
            )
            for item in doc["images"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: malformed manifest: {exc}") from exc

    corrected = {str(k): [int(s) for s in v] for k, v in doc.get("corrected_segments", {}).items()}
    return DatasetManifest(
        class_names=class_names, ignore_id=ignore_id, images=images,
        root=path.parent, corrected_segments=corrected,
    )


def save_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    doc = {
        "class_names": manifest.class_names,
        "ignore_id": IGNORE_NONE if manifest.ignore_id is None else manifest.ignore_id,
        "images": [
            {
                "image_id": img.image_id,
                "image_path": img.image_path,
                "gt_label_path": img.gt_label_path,
                "pseudo_label_path": img.pseudo_label_path,
                "superpixel_path": img.superpixel_path,
                "prob_path": img.prob_path,
                "width": img.width,
                "height": img.height,
            }
            for img in manifest.images
        ],
    }
    if manifest.corrected_segments:
        doc["corrected_segments"] = manifest.corrected_segments
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class Violation:
    image_id: str | None
    kind: str
    detail: str

    def as_dict(self) -> dict:
        return {"image_id": self.image_id, "kind": self.kind, "detail": self.detail}


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.violations

    def add(self, image_id: str | None, kind: str, detail: str) -> None:
        self.violations.append(Violation(image_id, kind, detail))

    def as_dict(self) -> dict:
        return {"clean": self.clean, "violations": [v.as_dict() for v in self.violations]}


PROB_ROW_TOL = 1e-5


def validate_manifest(manifest: DatasetManifest) -> ValidationReport:
    """Check the dataset behind a manifest; violations are data, not errors."""
    report = ValidationReport()
    if manifest.num_classes < 2:
        report.add(None, "class_count", f"{manifest.num_classes} classes, need >= 2")

    seen: set[str] = set()
    for img in manifest.images:
        if img.image_id in seen:
            report.add(img.image_id, "duplicate_image_id", "image_id appears more than once")
        seen.add(img.image_id)

    for img in manifest.images:
        _validate_image(manifest, img, report)
    return report


def _validate_image(manifest: DatasetManifest, img: ImageEntry, report: ValidationReport) -> None:
    shapes: dict[str, tuple[int, ...]] = {}
    tensors: dict[str, np.ndarray] = {}
    paths = {
        "image": img.image_path,
        "pseudo_label": img.pseudo_label_path,
        "superpixel": img.superpixel_path,
        "gt_label": img.gt_label_path,
        "prob": img.prob_path,
    }
    for role, rel in paths.items():
        if rel is None:
            continue
        full = manifest.resolve(rel)
        if not full.exists():
            report.add(img.image_id, "missing_file", f"{role}: {rel}")
            continue
        try:
            tensors[role] = read_tensor(full)
            shapes[role] = tensors[role].shape
        except (TensorFormatError, IoFailure) as exc:
            report.add(img.image_id, "unreadable_tensor", f"{role}: {exc}")

    expected_hw = (img.height, img.width)
    for role, shape in shapes.items():
        if shape[:2] != expected_hw:
            report.add(img.image_id, "dim_mismatch",
                       f"{role} is {shape[:2]}, manifest says {expected_hw}")

    ignore = manifest.ignore_id
    for role in ("pseudo_label", "gt_label"):
        labels = tensors.get(role)
        if labels is None:
            continue
        bad = np.unique(labels[(labels >= manifest.num_classes)
                               & (labels != (ignore if ignore is not None else -1))])
        if bad.size:
            report.add(img.image_id, "label_out_of_range",
                       f"{role} ids {bad.tolist()} >= {manifest.num_classes} classes")

    probs = tensors.get("prob")
    if probs is not None:
        if probs.ndim != 3 or probs.shape[2] != manifest.num_classes:
            report.add(img.image_id, "prob_shape",
                       f"prob map shape {probs.shape}, expected (H, W, {manifest.num_classes})")
        else:
            if np.any(probs < 0):
                report.add(img.image_id, "prob_negative", "negative probability entries")
            sums = probs.astype(np.float64).sum(axis=2)
            worst = float(np.abs(sums - 1.0).max()) if sums.size else 0.0
            if worst > PROB_ROW_TOL:
                report.add(img.image_id, "prob_row_sum",
                           f"row sum off by {worst:.3g} (tolerance {PROB_ROW_TOL})")

    spx = tensors.get("superpixel")
    if spx is not None and img.image_id in manifest.corrected_segments:
        present = set(int(v) for v in np.unique(spx))
        for seg in manifest.corrected_segments[img.image_id]:
            if seg not in present:
                report.add(img.image_id, "unknown_segment",
                           f"corrected segment {seg} has no pixels in the partition")
