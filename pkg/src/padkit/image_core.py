"""Image container, binary PGM/PPM codec, and pixel-level primitives.

Images are 8-bit throughout; floating point enters only at the tensor
conversion boundary. All operations are pure functions on immutable
inputs, so they are safe to call concurrently.

Only binary netpbm files (P5 grayscale, P6 RGB, maxval 255) are decoded.
Other formats are expected to be converted externally, e.g.::

    magick input.bmp output.pgm          # ImageMagick
    ffmpeg -i clip.mp4 frames/f%05d.ppm  # video to still frames
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_WHITESPACE = b" \t\r\n\v\f"

#: Rec. 601 luma weights used for RGB to grayscale reduction.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class PnmError(ValueError):
    """Base class for PGM/PPM codec failures."""


class PnmHeaderError(PnmError):
    """Magic number or header tokens are malformed."""


class PnmMaxvalError(PnmError):
    """Header maxval is not 255."""


class PnmTruncatedError(PnmError):
    """Pixel payload does not match the size the header declares."""


@dataclass(frozen=True, eq=False)
class Image:
    """8-bit image with ``pixels`` of shape (height, width, channels).

    channels is 1 (grayscale) or 3 (RGB); samples are row major uint8.
    The pixel array is made read-only so instances can be shared freely.
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"pixels must have shape (h, w, 1|3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image dimensions must be >= 1, got {px.shape}")
        if px.flags.writeable:
            px = px.copy()
            px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def data(self) -> np.ndarray:
        """Flat row-major sample vector of length width*height*channels."""
        return self.pixels.reshape(-1)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True)
class Rect:
    """Crop region: top-left offset (x, y) and extent (w, h) in pixels."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise ValueError(f"rect offset must be non-negative, got ({self.x}, {self.y})")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"rect extent must be >= 1, got ({self.w}, {self.h})")


def decode_pnm(data: bytes) -> Image:
    """Decode a binary PGM (P5) or PPM (P6) stream with maxval 255."""
    buf = bytes(data)
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise PnmHeaderError(f"not a binary PGM/PPM stream (magic {magic!r})")
    if len(buf) < 3 or buf[2] not in _WHITESPACE:
        raise PnmHeaderError("magic number not followed by whitespace")
    channels = 1 if magic == b"P5" else 3

    pos = 2
    tokens: list[bytes] = []
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos] in _WHITESPACE:
            pos += 1
        start = pos
        while pos < len(buf) and buf[pos] not in _WHITESPACE:
            pos += 1
        if start == pos:
            raise PnmHeaderError("unexpected end of header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates maxval from the pixel payload
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise PnmHeaderError("missing whitespace after maxval")
    pos += 1

    try:
        width, height, maxval = (int(tok) for tok in tokens)
    except ValueError:
        raise PnmHeaderError(f"non-numeric header token in {tokens!r}") from None
    if width < 1 or height < 1:
        raise PnmHeaderError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise PnmMaxvalError(f"unsupported maxval {maxval} (only 255)")

    expected = width * height * channels
    payload = buf[pos:]
    if len(payload) < expected:
        raise PnmTruncatedError(
            f"pixel payload truncated: expected {expected} bytes, got {len(payload)}"
        )
    if len(payload) > expected:
        raise PnmTruncatedError(
            f"trailing data after pixel payload: expected {expected} bytes, got {len(payload)}"
        )
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Image(px)


def encode_pnm(image: Image) -> bytes:
    """Encode with the canonical header ``P5\\n{w} {h}\\n255\\n`` (or P6)."""
    magic = b"P5" if image.channels == 1 else b"P6"
    header = magic + f"\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.pixels.tobytes()


def to_grayscale(image: Image) -> Image:
    """Reduce RGB to grayscale with Rec. 601 luma; grayscale passes through.

    Y = round(0.299 R + 0.587 G + 0.114 B), rounding half away from zero.
    """
    if image.channels == 1:
        return image
    rgb = image.pixels.astype(np.float64)
    wr, wg, wb = LUMA_WEIGHTS
    luma = wr * rgb[:, :, 0] + wg * rgb[:, :, 1] + wb * rgb[:, :, 2]
    gray = np.clip(np.floor(luma + 0.5), 0.0, 255.0).astype(np.uint8)
    return Image(gray[:, :, None])


def crop(image: Image, rect: Rect) -> Image:
    """Extract the sub-image covered by rect; rect must lie within bounds."""
    if rect.x + rect.w > image.width or rect.y + rect.h > image.height:
        raise ValueError(
            f"rect {rect} out of bounds for {image.width}x{image.height} image"
        )
    return Image(image.pixels[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w, :])


def center_rect(img_w: int, img_h: int, out_w: int, out_h: int) -> Rect:
    """Centered crop region; asymmetric margins floor toward the top-left."""
    if out_w > img_w or out_h > img_h:
        raise ValueError(
            f"crop target {out_w}x{out_h} larger than source {img_w}x{img_h}"
        )
    return Rect((img_w - out_w) // 2, (img_h - out_h) // 2, out_w, out_h)


def resize_bilinear(image: Image, out_w: int, out_h: int) -> Image:
    """Bilinear resample with half-pixel centers and edge clamping.

    Output pixel i samples source coordinate (i + 0.5) * (src / dst) - 0.5;
    interpolated values are rounded half away from zero.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output dimensions must be >= 1, got {out_w}x{out_h}")
    src = image.pixels.astype(np.float64)
    h, w = src.shape[:2]

    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    x0f = np.floor(xs)
    y0f = np.floor(ys)
    fx = xs - x0f
    fy = ys - y0f
    x0 = np.clip(x0f.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0f.astype(np.int64) + 1, 0, w - 1)
    y0 = np.clip(y0f.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0f.astype(np.int64) + 1, 0, h - 1)

    top = src[y0[:, None], x0[None, :]] * (1.0 - fx)[None, :, None] + src[
        y0[:, None], x1[None, :]
    ] * fx[None, :, None]
    bot = src[y1[:, None], x0[None, :]] * (1.0 - fx)[None, :, None] + src[
        y1[:, None], x1[None, :]
    ] * fx[None, :, None]
    out = top * (1.0 - fy)[:, None, None] + bot * fy[:, None, None]
    return Image(np.clip(np.floor(out + 0.5), 0.0, 255.0).astype(np.uint8))


def to_input_tensor(image: Image) -> np.ndarray:
    """Grayscale image to a float64 tensor of shape (height, width, 1) in [0, 1]."""
    if image.channels != 1:
        raise ValueError(f"expected a grayscale image, got {image.channels} channels")
    return image.pixels.astype(np.float64) / 255.0
