"""Local binary pattern features and a chi-square nearest-neighbor classifier.

Each interior pixel is compared against its 8-neighborhood: a neighbor
strictly brighter than the center contributes a 1 bit, an equal or darker
neighbor a 0 bit. Bits are packed MSB-first starting at the top-left
neighbor and proceeding clockwise. Note the strictly-brighter convention:
it is the complement of the >=-center form common elsewhere, so raw codes
are not comparable across implementations (classification is unaffected).

Border pixels have no full neighborhood and are skipped, so a code map is
two pixels smaller than its source image in each dimension.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .image_core import Image

#: (dy, dx) neighbor offsets, top-left first, proceeding clockwise.
NEIGHBOR_OFFSETS = (
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
)

HISTOGRAM_BINS = 256


def lbp_code(center: int, neighbors: Sequence[int]) -> int:
    """8-bit code for one pixel; bit k (MSB = top-left, clockwise) is 1 iff
    neighbors[k] is strictly brighter than the center."""
    if len(neighbors) != 8:
        raise ValueError(f"expected exactly 8 neighbors, got {len(neighbors)}")
    code = 0
    for value in neighbors:
        code = (code << 1) | (1 if value > center else 0)
    return code


@dataclass(frozen=True, eq=False)
class LbpCodeMap:
    """Per-interior-pixel codes; dimensions are source minus the 1px border."""

    codes: np.ndarray

    def __post_init__(self) -> None:
        codes = np.asarray(self.codes)
        if codes.ndim != 2 or codes.dtype != np.uint8:
            raise ValueError(f"codes must be a 2-d uint8 array, got {codes.shape} {codes.dtype}")
        object.__setattr__(self, "codes", codes)

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    @property
    def width(self) -> int:
        return self.codes.shape[1]


def compute_code_map(image: Image) -> LbpCodeMap:
    """Vectorized code map over all interior pixels of a grayscale image."""
    if image.channels != 1:
        raise ValueError(f"expected a grayscale image, got {image.channels} channels")
    if image.width < 3 or image.height < 3:
        raise ValueError(
            f"image must be at least 3x3 to have interior pixels, got "
            f"{image.width}x{image.height}"
        )
    px = image.pixels[:, :, 0]
    h, w = px.shape
    center = px[1 : h - 1, 1 : w - 1]
    codes = np.zeros(center.shape, dtype=np.uint8)
    for dy, dx in NEIGHBOR_OFFSETS:
        neighbor = px[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
        codes = (codes << 1) | (neighbor > center).astype(np.uint8)
    return LbpCodeMap(codes)


@dataclass(frozen=True, eq=False)
class LbpFeature:
    """Concatenated per-patch 256-bin histograms, each block L1-normalized."""

    grid_rows: int
    grid_cols: int
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        expected = HISTOGRAM_BINS * self.grid_rows * self.grid_cols
        if values.shape != (expected,):
            raise ValueError(f"feature length {values.shape} != ({expected},)")
        object.__setattr__(self, "values", values)

    @property
    def grid(self) -> tuple[int, int]:
        return (self.grid_rows, self.grid_cols)


def extract_feature(image: Image, grid_rows: int = 1, grid_cols: int = 1) -> LbpFeature:
    """Patch-grid histogram feature.

    The code map is split into grid_rows x grid_cols contiguous patches
    (leading bands absorb the remainder rows/columns); each patch yields a
    normalized 256-bin histogram and blocks are concatenated row major.
    """
    if grid_rows < 1 or grid_cols < 1:
        raise ValueError(f"grid must be >= 1x1, got {grid_rows}x{grid_cols}")
    code_map = compute_code_map(image)
    if grid_rows > code_map.height or grid_cols > code_map.width:
        raise ValueError(
            f"grid {grid_rows}x{grid_cols} larger than code map "
            f"{code_map.height}x{code_map.width}"
        )
    blocks = []
    for band in np.array_split(code_map.codes, grid_rows, axis=0):
        for patch in np.array_split(band, grid_cols, axis=1):
            hist = np.bincount(patch.reshape(-1), minlength=HISTOGRAM_BINS)
            blocks.append(hist.astype(np.float64) / patch.size)
    return LbpFeature(grid_rows, grid_cols, np.concatenate(blocks))


def chi_square(a: LbpFeature, b: LbpFeature) -> float:
    """Chi-square histogram distance: sum((a-b)^2 / (a+b)) over bins with mass."""
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")
    total = a.values + b.values
    diff = a.values - b.values
    mask = total > 0.0
    return float(np.sum(diff[mask] ** 2 / total[mask]))


@dataclass(frozen=True, eq=False)
class LbpModel:
    """1-NN exemplar store; all features share one grid."""

    features: tuple[LbpFeature, ...]
    labels: tuple[str, ...]
    grid_rows: int
    grid_cols: int

    def classes(self) -> list[str]:
        return sorted(set(self.labels))


def fit(features: Sequence[LbpFeature], labels: Sequence[str]) -> LbpModel:
    """Build a 1-NN model from (feature, label) training exemplars."""
    if len(features) == 0:
        raise ValueError("cannot fit an LBP model with no exemplars")
    if len(features) != len(labels):
        raise ValueError(f"{len(features)} features but {len(labels)} labels")
    grid = features[0].grid
    for feature in features:
        if feature.grid != grid:
            raise ValueError(f"mixed grids in training features: {feature.grid} vs {grid}")
    return LbpModel(tuple(features), tuple(str(l) for l in labels), *grid)


def classify(model: LbpModel, feature: LbpFeature) -> tuple[str, float]:
    """Nearest exemplar under chi-square; ties go to the lowest exemplar index."""
    if len(model.features) == 0:
        raise ValueError("cannot classify with an empty model")
    if feature.grid != (model.grid_rows, model.grid_cols):
        raise ValueError(
            f"feature grid {feature.grid} does not match model grid "
            f"{(model.grid_rows, model.grid_cols)}"
        )
    best_index = 0
    best_distance = chi_square(model.features[0], feature)
    for index in range(1, len(model.features)):
        distance = chi_square(model.features[index], feature)
        if distance < best_distance:
            best_index = index
            best_distance = distance
    return model.labels[best_index], best_distance


def class_distances(model: LbpModel, feature: LbpFeature) -> dict[str, float]:
    """Minimum chi-square distance from the query to each class's exemplars."""
    if len(model.features) == 0:
        raise ValueError("cannot score with an empty model")
    best: dict[str, float] = {}
    for exemplar, label in zip(model.features, model.labels):
        distance = chi_square(exemplar, feature)
        if label not in best or distance < best[label]:
            best[label] = distance
    return best


def format_feature_record(path: str, label: str, feature: LbpFeature) -> str:
    """One dump line: path, label, RxC grid, then all values at 9 significant digits."""
    values = ",".join(f"{v:.9g}" for v in feature.values)
    return f"{path},{label},{feature.grid_rows}x{feature.grid_cols},{values}"
