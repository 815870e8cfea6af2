"""Manifest-driven corpus management: scanning, per-class caps,
deterministic splits, binary re-labeling, and batch iteration.

A manifest row is (path, label, split). Paths are stored relative to the
corpus root with POSIX separators and kept in lexicographic order, which
makes "the first N test images" well defined. Validation records remain
test members; pass holdout_validation=True to score without them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .image_core import Image, Rect, crop, decode_pnm, to_grayscale, to_input_tensor
from .seeds import MASK64

SPLITS = ("train", "test", "validation", "unassigned")
IMAGE_SUFFIXES = (".pgm", ".ppm")
VALIDATION_COUNT = 30

MANIFEST_HEADER = ["path", "label", "split"]
SIDECAR_HEADER = ["path", "x", "y", "w", "h"]
SIDECAR_NAME = "crops.csv"


class DatasetError(ValueError):
    """Corpus structure, manifest, or image loading failure."""


class LabelSchemaError(DatasetError):
    """Binary re-labeling left classes other than 'real' unmapped."""


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: str
    split: str = "unassigned"

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise DatasetError(f"illegal split {self.split!r} for {self.path}")
        if not self.path or not self.label:
            raise DatasetError(f"empty path or label in record {self!r}")


@dataclass
class DatasetManifest:
    """Ordered records plus the root they resolve against.

    root and crop_sidecar are runtime attachments, never serialized.
    skipped counts non-image files ignored during a directory scan.
    """

    records: list[ManifestRecord]
    root: Path | None = None
    crop_sidecar: dict[str, Rect] | None = None
    skipped: int = 0

    def __post_init__(self) -> None:
        paths = [r.path for r in self.records]
        if len(set(paths)) != len(paths):
            raise DatasetError("duplicate paths in manifest")
        if not self.records:
            raise DatasetError("manifest has no records")

    def classes(self) -> list[str]:
        return sorted({r.label for r in self.records})

    def class_to_index(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.classes())}

    def counts(self) -> dict[str, dict[str, int]]:
        """Per-class record counts keyed by class then split."""
        out: dict[str, dict[str, int]] = {}
        for r in self.records:
            out.setdefault(r.label, {}).setdefault(r.split, 0)
            out[r.label][r.split] += 1
        return out


def scan_directory(root: str | Path) -> DatasetManifest:
    """One record per PGM/PPM file under each class subdirectory of root.

    The class label is the subdirectory name; all splits start unassigned.
    Non-image files inside class directories are skipped and counted.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"not a directory: {root}")
    records: list[ManifestRecord] = []
    skipped = 0
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for entry in sorted(class_dir.rglob("*")):
            if not entry.is_file():
                continue
            if entry.suffix.lower() in IMAGE_SUFFIXES:
                rel = entry.relative_to(root).as_posix()
                records.append(ManifestRecord(rel, class_dir.name))
            else:
                skipped += 1
    if not records:
        raise DatasetError(f"no class subdirectories with PGM/PPM images under {root}")
    records.sort(key=lambda r: r.path)
    return DatasetManifest(records, root=root, skipped=skipped)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write the manifest CSV: header `path,label,split`, UTF-8, LF endings."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            writer.writerow([r.path, r.label, r.split])


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a manifest CSV; root becomes the manifest's directory.

    A crops.csv sidecar next to the manifest is attached automatically.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from None
    if not rows or rows[0] != MANIFEST_HEADER:
        raise DatasetError(f"{path}: missing manifest header {','.join(MANIFEST_HEADER)}")
    records = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise DatasetError(f"{path}:{i}: expected 3 fields, got {len(row)}")
        records.append(ManifestRecord(*row))
    manifest = DatasetManifest(records, root=path.parent)
    sidecar_path = path.parent / SIDECAR_NAME
    if sidecar_path.is_file():
        manifest.crop_sidecar = load_crop_sidecar(sidecar_path, manifest)
    return manifest


def load_crop_sidecar(
    path: str | Path, manifest: DatasetManifest | None = None
) -> dict[str, Rect]:
    """Read `path,x,y,w,h` crop rows; paths must exist in the manifest if given."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or rows[0] != SIDECAR_HEADER:
        raise DatasetError(f"{path}: missing sidecar header {','.join(SIDECAR_HEADER)}")
    known = {r.path for r in manifest.records} if manifest is not None else None
    rects: dict[str, Rect] = {}
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 5:
            raise DatasetError(f"{path}:{i}: expected 5 fields, got {len(row)}")
        rec_path = row[0]
        if known is not None and rec_path not in known:
            raise DatasetError(f"{path}:{i}: {rec_path} not present in the manifest")
        try:
            rects[rec_path] = Rect(*(int(v) for v in row[1:]))
        except ValueError as exc:
            raise DatasetError(f"{path}:{i}: bad crop rect: {exc}") from None
    return rects


def save_crop_sidecar(rects: dict[str, Rect], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SIDECAR_HEADER)
        for rec_path in sorted(rects):
            r = rects[rec_path]
            writer.writerow([rec_path, r.x, r.y, r.w, r.h])


def _by_class(records: Sequence[ManifestRecord]) -> dict[str, list[ManifestRecord]]:
    grouped: dict[str, list[ManifestRecord]] = {}
    for r in records:
        grouped.setdefault(r.label, []).append(r)
    return grouped


def cap_per_class(manifest: DatasetManifest, cap: int, seed: int) -> DatasetManifest:
    """Reduce each class to at most cap records via a seeded shuffle."""
    if cap < 1:
        raise DatasetError(f"cap must be >= 1, got {cap}")
    rng = np.random.Generator(np.random.PCG64(seed & MASK64))
    kept: list[ManifestRecord] = []
    grouped = _by_class(manifest.records)
    for label in sorted(grouped):
        group = grouped[label]
        order = rng.permutation(len(group))
        kept.extend(group[i] for i in order[: min(cap, len(group))])
    kept.sort(key=lambda r: r.path)
    return replace(manifest, records=kept)


def split_half(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    """Per class: seeded shuffle, first ceil(n/2) records to train, rest to
    test; then the first 30 test records in path order become validation.

    Validation records stay test members for final scoring.
    """
    rng = np.random.Generator(np.random.PCG64(seed & MASK64))
    assigned: dict[str, str] = {}
    grouped = _by_class(manifest.records)
    for label in sorted(grouped):
        group = grouped[label]
        if len(group) < 2:
            raise DatasetError(f"class {label!r} has {len(group)} record(s), needs >= 2")
        order = rng.permutation(len(group))
        n_train = math.ceil(len(group) / 2)
        for rank, i in enumerate(order):
            assigned[group[i].path] = "train" if rank < n_train else "test"
    records = [replace(r, split=assigned[r.path]) for r in manifest.records]
    test_paths = [r.path for r in records if r.split == "test"]
    promote = set(sorted(test_paths)[:VALIDATION_COUNT])
    records = [
        replace(r, split="validation") if r.path in promote else r for r in records
    ]
    return replace(manifest, records=records)


@dataclass(frozen=True)
class LabelSchema:
    """multiclass keeps labels; binary merges fake_classes into 'fake'."""

    mode: str
    fake_classes: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.mode not in ("multiclass", "binary"):
            raise DatasetError(f"unknown label schema mode {self.mode!r}")


def apply_label_schema(manifest: DatasetManifest, schema: LabelSchema) -> DatasetManifest:
    """Rewrite labels per schema; binary mode must leave exactly {'real'}
    outside the fake set."""
    if schema.mode == "multiclass":
        return manifest
    residual = {r.label for r in manifest.records} - set(schema.fake_classes)
    if residual != {"real"}:
        raise LabelSchemaError(
            f"binary schema must map every class but 'real' to 'fake'; "
            f"residual classes: {sorted(residual)}"
        )
    records = [
        replace(r, label="fake") if r.label in schema.fake_classes else r
        for r in manifest.records
    ]
    return replace(manifest, records=records)


def select_records(
    manifest: DatasetManifest, split: str, holdout_validation: bool = False
) -> list[ManifestRecord]:
    """Records of a split in canonical order.

    split='test' includes validation records unless holdout_validation;
    split='all' returns everything.
    """
    if split == "all":
        return list(manifest.records)
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}")
    wanted = {split}
    if split == "test" and not holdout_validation:
        wanted.add("validation")
    return [r for r in manifest.records if r.split in wanted]


def load_image(manifest: DatasetManifest, record: ManifestRecord) -> Image:
    """Decode one record's image, applying its crop sidecar rect if present."""
    if manifest.root is None:
        raise DatasetError("manifest has no root directory to resolve paths against")
    full = Path(manifest.root) / record.path
    try:
        raw = full.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read image {record.path}: {exc}") from None
    try:
        image = decode_pnm(raw)
    except ValueError as exc:
        raise DatasetError(f"{record.path}: {exc}") from None
    if manifest.crop_sidecar and record.path in manifest.crop_sidecar:
        rect = manifest.crop_sidecar[record.path]
        try:
            image = crop(image, rect)
        except ValueError as exc:
            raise DatasetError(f"{record.path}: {exc}") from None
    return image


def _load_input(
    manifest: DatasetManifest,
    record: ManifestRecord,
    expected_hw: tuple[int, int] | None,
) -> np.ndarray:
    tensor = to_input_tensor(to_grayscale(load_image(manifest, record)))
    if expected_hw is not None and tensor.shape[:2] != tuple(expected_hw):
        raise DatasetError(
            f"{record.path}: image is {tensor.shape[0]}x{tensor.shape[1]}, "
            f"expected {expected_hw[0]}x{expected_hw[1]}"
        )
    return tensor


def iter_batches(
    manifest: DatasetManifest,
    split: str,
    batch_size: int,
    seed: int,
    epoch: int,
    expected_hw: tuple[int, int] | None = None,
    holdout_validation: bool = False,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Seeded per-epoch shuffled batches of (inputs, label indices).

    The shuffle stream is seeded with seed XOR epoch. Images are loaded,
    grayscaled, and scaled to [0, 1]; the final short batch is kept.
    """
    if batch_size < 1:
        raise DatasetError(f"batch size must be >= 1, got {batch_size}")
    records = select_records(manifest, split, holdout_validation)
    if not records:
        raise DatasetError(f"split {split!r} is empty")
    label_index = manifest.class_to_index()
    rng = np.random.Generator(np.random.PCG64((int(seed) ^ int(epoch)) & MASK64))
    order = rng.permutation(len(records))
    hw = expected_hw
    for start in range(0, len(records), batch_size):
        chunk = order[start : start + batch_size]
        tensors = []
        labels = []
        for i in chunk:
            tensor = _load_input(manifest, records[i], hw)
            if hw is None:
                hw = (tensor.shape[0], tensor.shape[1])
            tensors.append(tensor)
            labels.append(label_index[records[i].label])
        yield np.stack(tensors), np.array(labels, dtype=np.int64)


def load_split(
    manifest: DatasetManifest,
    split: str,
    expected_hw: tuple[int, int] | None = None,
    holdout_validation: bool = False,
) -> tuple[np.ndarray, np.ndarray, list[ManifestRecord]]:
    """Eagerly load a whole split in canonical order."""
    records = select_records(manifest, split, holdout_validation)
    if not records:
        raise DatasetError(f"split {split!r} is empty")
    label_index = manifest.class_to_index()
    tensors = []
    labels = []
    hw = expected_hw
    for record in records:
        tensor = _load_input(manifest, record, hw)
        if hw is None:
            hw = (tensor.shape[0], tensor.shape[1])
        tensors.append(tensor)
        labels.append(label_index[record.label])
    return np.stack(tensors), np.array(labels, dtype=np.int64), records
