"""Deterministic live/spoof image corpus generator.

Live images are procedural iris-like textures: concentric bands with
per-index phase, frequency, and center perturbations plus low-amplitude
noise. Spoofed images push an independently generated live-like source
through a print-and-rescan degradation: box downsample, bilinear upsample,
Gaussian noise, and an additive sinusoidal halftone grid.

The corpus is a pure function of its config: regeneration at the same
seed is byte identical, and per-index generation is independent.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, scan_directory
from .image_core import Image, encode_pnm, resize_bilinear, to_grayscale
from .seeds import make_rng

SIDECAR_NAME = "synth_config.json"
CLASS_REAL = "real"
CLASS_FAKE = "fake"

_LIVE_NOISE_SIGMA = 2.0
_MIN_DISTINCT_FRACTION = 0.01


class SynthError(RuntimeError):
    """Generator self-check failure."""


@dataclass(frozen=True)
class SynthConfig:
    width: int = 140
    height: int = 140
    count_per_class: int = 800
    seed: int = 0
    downsample_factor: int = 2
    blur_radius: int = 0
    noise_sigma: float = 8.0
    halftone_period: float = 4.0
    halftone_amplitude: float = 8.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")
        if self.count_per_class < 1:
            raise ValueError(f"count per class must be >= 1, got {self.count_per_class}")
        if self.downsample_factor < 2:
            raise ValueError(f"downsample factor must be >= 2, got {self.downsample_factor}")
        if self.blur_radius < 0:
            raise ValueError(f"blur radius must be >= 0, got {self.blur_radius}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        if self.halftone_period < 2:
            raise ValueError(f"halftone period must be >= 2, got {self.halftone_period}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        return cls(**data)


def gen_live(config: SynthConfig, index: int) -> Image:
    """Procedural live texture, deterministic in (config.seed, index)."""
    rng = make_rng(config.seed, f"synth:live:{index}")
    w, h = config.width, config.height

    cx = w / 2.0 + rng.uniform(-0.08, 0.08) * w
    cy = h / 2.0 + rng.uniform(-0.08, 0.08) * h
    base = rng.uniform(105.0, 140.0)
    period = rng.uniform(9.0, 16.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    amp = rng.uniform(35.0, 60.0)
    amp2 = rng.uniform(5.0, 15.0)
    lobes = int(rng.integers(3, 9))
    phase2 = rng.uniform(0.0, 2.0 * np.pi)
    pupil_radius = rng.uniform(0.10, 0.18) * min(w, h)

    ys, xs = np.mgrid[0:h, 0:w]
    r = np.hypot(xs - cx, ys - cy)
    theta = np.arctan2(ys - cy, xs - cx)
    tex = (
        base
        + amp * np.sin(2.0 * np.pi * r / period + phase)
        + amp2 * np.sin(4.0 * np.pi * r / period + phase2 + lobes * theta)
    )
    tex = np.where(r < pupil_radius, 28.0, tex)
    tex += rng.normal(0.0, _LIVE_NOISE_SIGMA, size=tex.shape)
    px = np.clip(np.floor(tex + 0.5), 0.0, 255.0).astype(np.uint8)
    return Image(px[:, :, None])


def _box_downsample(values: np.ndarray, factor: int) -> np.ndarray:
    """Block means over factor x factor cells; ragged edges average short blocks."""
    h, w = values.shape
    row_edges = np.arange(0, h, factor)
    col_edges = np.arange(0, w, factor)
    sums = np.add.reduceat(np.add.reduceat(values, row_edges, axis=0), col_edges, axis=1)
    row_sizes = np.diff(np.append(row_edges, h))
    col_sizes = np.diff(np.append(col_edges, w))
    return sums / np.outer(row_sizes, col_sizes)


def _box_blur(values: np.ndarray, radius: int) -> np.ndarray:
    """Separable mean filter with edge clamping."""
    size = 2 * radius + 1
    padded = np.pad(values, ((radius, radius), (0, 0)), mode="edge")
    csum = np.cumsum(padded, axis=0)
    csum = np.vstack([np.zeros((1, values.shape[1])), csum])
    out = (csum[size:] - csum[:-size]) / size
    padded = np.pad(out, ((0, 0), (radius, radius)), mode="edge")
    csum = np.cumsum(padded, axis=1)
    csum = np.hstack([np.zeros((values.shape[0], 1)), csum])
    return (csum[:, size:] - csum[:, :-size]) / size


def spoofify(live: Image, config: SynthConfig, index: int) -> Image:
    """Print-and-rescan degradation of a live image; deterministic in
    (config.seed, index)."""
    rng = make_rng(config.seed, f"synth:spoof:{index}")
    gray = to_grayscale(live)
    w, h = gray.width, gray.height

    small = _box_downsample(gray.pixels[:, :, 0].astype(np.float64), config.downsample_factor)
    small_img = Image(np.clip(np.floor(small + 0.5), 0.0, 255.0).astype(np.uint8)[:, :, None])
    up = resize_bilinear(small_img, w, h)
    values = up.pixels[:, :, 0].astype(np.float64)

    if config.blur_radius > 0:
        values = _box_blur(values, config.blur_radius)
    values += config.noise_sigma * rng.standard_normal(values.shape)
    ys, xs = np.mgrid[0:h, 0:w]
    values += config.halftone_amplitude * (
        np.sin(2.0 * np.pi * xs / config.halftone_period)
        * np.sin(2.0 * np.pi * ys / config.halftone_period)
    )
    px = np.clip(np.floor(values + 0.5), 0.0, 255.0).astype(np.uint8)
    return Image(px[:, :, None])


def _check_distinct(images: list[Image]) -> None:
    total = images[0].pixels.size
    for a, b in zip(images, images[1:]):
        differing = int(np.count_nonzero(a.pixels != b.pixels))
        if differing < _MIN_DISTINCT_FRACTION * total:
            raise SynthError(
                f"adjacent generated images differ in only {differing}/{total} pixels"
            )


def gen_corpus(config: SynthConfig, root: str | Path) -> DatasetManifest:
    """Write real/ and fake/ PGM trees under root and return a scanned manifest.

    Fake sources are generated at disjoint indices from the emitted real
    set, so no fake is a degraded copy of an emitted real image. Existing
    real/ and fake/ subtrees are replaced.
    """
    root = Path(root)
    real_dir = root / CLASS_REAL
    fake_dir = root / CLASS_FAKE
    for class_dir in (real_dir, fake_dir):
        if class_dir.exists():
            shutil.rmtree(class_dir)
        class_dir.mkdir(parents=True)

    n = config.count_per_class
    probe: list[Image] = []
    for i in range(n):
        live = gen_live(config, i)
        source = gen_live(config, n + i)
        fake = spoofify(source, config, i)
        (real_dir / f"img_{i:05d}.pgm").write_bytes(encode_pnm(live))
        (fake_dir / f"img_{i:05d}.pgm").write_bytes(encode_pnm(fake))
        if i < 8:
            probe.append(live)
    if len(probe) > 1:
        _check_distinct(probe)

    (root / SIDECAR_NAME).write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return scan_directory(root)


def corpus_matches(config: SynthConfig, root: str | Path) -> bool:
    """True when root already holds a corpus generated from this config."""
    root = Path(root)
    sidecar = root / SIDECAR_NAME
    if not sidecar.is_file():
        return False
    try:
        existing = json.loads(sidecar.read_text(encoding="utf-8"))
    except ValueError:
        return False
    if existing != config.to_dict():
        return False
    for class_name in (CLASS_REAL, CLASS_FAKE):
        class_dir = root / class_name
        if not class_dir.is_dir():
            return False
        if len(list(class_dir.glob("*.pgm"))) != config.count_per_class:
            return False
    return True
