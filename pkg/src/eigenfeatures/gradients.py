"""Discrete gradient operators and the intensity statistics built on them.

Masks are stored in the z1..z9 layout (z1 top-left, rows left to right) and
applied as a true convolution, ``C(x, y) = sum Z(s, t) Y(x - s, y - t)``,
where ``x`` is the column and ``y`` the row. With this orientation the X
masks below give a positive response to intensity increasing to the right
and the Y masks to intensity increasing downwards.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .images import GrayImage, as_image

PREWITT_X = np.array([[1.0, 0.0, -1.0],
                      [1.0, 0.0, -1.0],
                      [1.0, 0.0, -1.0]])
PREWITT_Y = PREWITT_X.T.copy()
SOBEL_X = np.array([[1.0, 0.0, -1.0],
                    [2.0, 0.0, -2.0],
                    [1.0, 0.0, -1.0]])
SOBEL_Y = SOBEL_X.T.copy()
# forward difference f[i, j+1] - f[i, j] written as a 3x3 mask
FORWARD_X = np.array([[0.0, 0.0, 0.0],
                      [0.0, 1.0, -1.0],
                      [0.0, 0.0, 0.0]])
FORWARD_Y = FORWARD_X.T.copy()

METHODS = ("forward", "prewitt", "sobel")


class GradientPair(NamedTuple):
    gx: GrayImage
    gy: GrayImage


def _check_mask(mask) -> np.ndarray:
    z = np.asarray(mask, dtype=np.float64)
    if z.shape != (3, 3) or not np.all(np.isfinite(z)):
        raise ConfigError("mask must be a finite 3x3 array")
    return z


def mask_convolve(img: GrayImage, mask, boundary: str = "replicate") -> GrayImage:
    """Convolve ``img`` with a 3x3 mask, keeping the image size.

    ``boundary`` is ``"replicate"`` (edge pixels extended) or ``"zero"``.
    """
    z = _check_mask(mask)
    p = as_image(img).pixels
    if boundary == "replicate":
        padded = np.pad(p, 1, mode="edge")
    elif boundary == "zero":
        padded = np.pad(p, 1, mode="constant")
    else:
        raise ConfigError(f"unknown boundary policy {boundary!r}")
    h, w = p.shape
    out = np.zeros_like(p)
    # mask entry (row r, col c) holds offset (t, s) = (r - 1, c - 1);
    # it multiplies Y(x - s, y - t), i.e. padded[1 - t + row, 1 - s + col]
    for r in range(3):
        for c in range(3):
            coeff = z[r, c]
            if coeff == 0.0:
                continue
            dr, dc = 2 - r, 2 - c
            out += coeff * padded[dr:dr + h, dc:dc + w]
    return GrayImage(out)


def _require_2x2(img: GrayImage) -> GrayImage:
    img = as_image(img)
    if img.width < 2 or img.height < 2:
        raise ShapeMismatchError(f"gradient needs an image of at least 2x2, got {img.width}x{img.height}")
    return img


def gradient_forward(img: GrayImage) -> GradientPair:
    """Forward differences; the last column/row repeats the preceding difference."""
    p = _require_2x2(img).pixels
    gx = np.empty_like(p)
    gx[:, :-1] = p[:, 1:] - p[:, :-1]
    gx[:, -1] = gx[:, -2]
    gy = np.empty_like(p)
    gy[:-1, :] = p[1:, :] - p[:-1, :]
    gy[-1, :] = gy[-2, :]
    return GradientPair(GrayImage(gx), GrayImage(gy))


def gradient_prewitt(img: GrayImage) -> GradientPair:
    img = as_image(img)
    return GradientPair(mask_convolve(img, PREWITT_X), mask_convolve(img, PREWITT_Y))


def gradient_sobel(img: GrayImage) -> GradientPair:
    img = as_image(img)
    return GradientPair(mask_convolve(img, SOBEL_X), mask_convolve(img, SOBEL_Y))


def gradient(img: GrayImage, method: str = "sobel") -> GradientPair:
    try:
        fn = {"forward": gradient_forward, "prewitt": gradient_prewitt, "sobel": gradient_sobel}[method]
    except KeyError:
        raise ConfigError(f"unknown gradient method {method!r}; expected one of {METHODS}") from None
    return fn(img)


def gradient_magnitude(pair: GradientPair) -> GrayImage:
    gx, gy = as_image(pair[0]).pixels, as_image(pair[1]).pixels
    if gx.shape != gy.shape:
        raise ShapeMismatchError(f"gradient components differ in shape: {gx.shape} vs {gy.shape}")
    return GrayImage(np.hypot(gx, gy))


def gradient_module(img: GrayImage, method: str = "sobel") -> GrayImage:
    """``|grad Y|`` of ``img`` using the named discretization."""
    return gradient_magnitude(gradient(_require_2x2(img), method))


def total_variation(img: GrayImage, method: str = "forward") -> float:
    return float(gradient_module(img, method).pixels.sum())


def mean_gradient_module(img: GrayImage, method: str = "forward") -> float:
    img = as_image(img)
    return total_variation(img, method) / img.size


def mean_intensity(img: GrayImage) -> float:
    return float(as_image(img).pixels.mean())
