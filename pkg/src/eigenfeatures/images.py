"""Grayscale images, PGM I/O and image-space transforms.

All arithmetic is float64; 8-bit values only exist inside PGM files.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    MalformedHeaderError,
    PixelRangeError,
    TruncatedPayloadError,
    UnsupportedMaxvalError,
)


class GrayImage:
    """Immutable 2D intensity field stored row-major as ``pixels[row, col]``."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels):
        arr = np.array(pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"GrayImage needs a non-empty 2D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("GrayImage values must be finite")
        arr.setflags(write=False)
        self._pixels = arr

    @classmethod
    def from_flat(cls, width: int, height: int, data) -> GrayImage:
        data = np.asarray(data, dtype=np.float64)
        if data.size != width * height:
            raise DataError(f"expected {width * height} values, got {data.size}")
        return cls(data.reshape(height, width))

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self._pixels.shape

    @property
    def size(self) -> int:
        return self._pixels.size

    def flat(self) -> np.ndarray:
        return self._pixels.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._pixels, other._pixels)

    def __hash__(self):
        return hash((self.shape, self._pixels.tobytes()))

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


def as_image(img) -> GrayImage:
    return img if isinstance(img, GrayImage) else GrayImage(img)


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    for _ in range(count):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise MalformedHeaderError("PGM header ends prematurely")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def _header_int(token: bytes, what: str) -> int:
    if not token.isdigit():
        raise MalformedHeaderError(f"PGM {what} is not a non-negative integer: {token!r}")
    return int(token)


def read_pgm(path) -> GrayImage:
    """Read a P2 (ascii) or P5 (binary) PGM with maxval <= 255."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = _header_tokens(raw, 4)
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise MalformedHeaderError(f"not a P2/P5 PGM file (magic {magic[:8]!r})")
    width = _header_int(tokens[1], "width")
    height = _header_int(tokens[2], "height")
    maxval = _header_int(tokens[3], "maxval")
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"invalid PGM dimensions {width}x{height}")
    if maxval < 1:
        raise MalformedHeaderError("PGM maxval must be positive")
    if maxval > 255:
        raise UnsupportedMaxvalError(f"maxval {maxval} > 255 is not supported")

    n = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates maxval from the raster
        payload = raw[pos + 1:pos + 1 + n]
        if len(payload) < n:
            raise TruncatedPayloadError(f"expected {n} raster bytes, found {len(payload)}")
        values = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    else:
        body = re.sub(rb"#[^\n]*", b"", raw[pos:]).split()
        if len(body) < n:
            raise TruncatedPayloadError(f"expected {n} samples, found {len(body)}")
        try:
            values = np.array([int(tok) for tok in body[:n]], dtype=np.float64)
        except ValueError as exc:
            raise MalformedHeaderError(f"non-integer sample in P2 raster: {exc}") from None
    if values.max(initial=0) > maxval:
        raise MalformedHeaderError("sample exceeds declared maxval")
    if maxval != 255:
        values = values * (255.0 / maxval)
    return GrayImage.from_flat(width, height, values)


def to_uint8(img: GrayImage) -> np.ndarray:
    q = np.rint(img.pixels)
    if q.min() < 0 or q.max() > 255:
        raise PixelRangeError(
            f"pixel values round to [{q.min():g}, {q.max():g}], outside [0, 255]; rescale first"
        )
    return q.astype(np.uint8)


def write_pgm(img: GrayImage, path, mode: str = "binary") -> None:
    """Write ``img`` as PGM; ``mode`` is ``"binary"`` (P5) or ``"ascii"`` (P2)."""
    if mode not in ("binary", "ascii"):
        raise ConfigError(f"mode must be 'binary' or 'ascii', not {mode!r}")
    img = as_image(img)
    q = to_uint8(img)
    magic = "P5" if mode == "binary" else "P2"
    header = f"{magic}\n{img.width} {img.height}\n255\n".encode("ascii")
    if mode == "binary":
        body = q.tobytes()
    else:
        body = "\n".join(" ".join(str(v) for v in row) for row in q).encode("ascii") + b"\n"
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header + body)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def zero_center_normalize(img: GrayImage) -> GrayImage:
    """Subtract the mean and divide by the population standard deviation."""
    p = as_image(img).pixels
    if p.size < 2:
        raise DegenerateInputError("normalization needs at least two pixels")
    centered = p - p.mean()
    std = np.sqrt(np.mean(centered * centered))
    if std == 0.0:
        raise DegenerateInputError("cannot normalize a constant image (zero standard deviation)")
    return GrayImage(centered / std)


def mirror(img: GrayImage) -> GrayImage:
    return GrayImage(as_image(img).pixels[:, ::-1])


def flip(img: GrayImage) -> GrayImage:
    return GrayImage(as_image(img).pixels[::-1, :])


def augment(img: GrayImage) -> list[GrayImage]:
    """Return ``[identity, horizontal mirror, upside-down flip]``."""
    img = as_image(img)
    return [img, mirror(img), flip(img)]


def contrast_stretch(img: GrayImage, lo_frac: float = 0.01, hi_frac: float = 0.01,
                     out_max: float = 1.0) -> GrayImage:
    """Saturate the lowest ``lo_frac`` and highest ``hi_frac`` of pixels.

    Quantiles use the sorted-rank ``lower`` rule. Intended for rendering only.
    """
    if lo_frac < 0 or hi_frac < 0 or lo_frac + hi_frac >= 1:
        raise ConfigError("need 0 <= lo_frac, hi_frac and lo_frac + hi_frac < 1")
    p = as_image(img).pixels
    lo = np.quantile(p, lo_frac, method="lower")
    hi = np.quantile(p, 1.0 - hi_frac, method="lower")
    if hi <= lo:
        return GrayImage(np.zeros_like(p))
    return GrayImage(np.clip((p - lo) / (hi - lo), 0.0, 1.0) * out_max)


def _axis_weights(n_in: int, n_out: int):
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2.0])
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    return i0, i1, frac


def resize_bilinear(img: GrayImage, new_w: int, new_h: int) -> GrayImage:
    """Corner-aligned bilinear resampling (output corners hit input corners)."""
    if new_w < 1 or new_h < 1:
        raise ConfigError("target size must be at least 1x1")
    p = as_image(img).pixels
    h, w = p.shape
    if (new_h, new_w) == (h, w):
        return as_image(img)
    r0, r1, fr = _axis_weights(h, new_h)
    c0, c1, fc = _axis_weights(w, new_w)
    fr = fr[:, None]
    top = p[r0][:, c0] * (1 - fc) + p[r0][:, c1] * fc
    bottom = p[r1][:, c0] * (1 - fc) + p[r1][:, c1] * fc
    out = top * (1 - fr) + bottom * fr
    # convex combinations can overshoot by an ulp
    return GrayImage(np.clip(out, p.min(), p.max()))


def rescale01(img: GrayImage) -> GrayImage:
    """Affinely map min to 0 and max to 1; a constant image maps to zeros."""
    p = as_image(img).pixels
    lo, hi = p.min(), p.max()
    if hi == lo:
        return GrayImage(np.zeros_like(p))
    return GrayImage((p - lo) / (hi - lo))
