"""Grayscale rasters and the pixel-level primitives the attack is built on.

Images are plain numpy arrays: ``GrayImage`` is uint8 with shape (height,
width), ``BinaryMask`` is bool with the same shape (True = ink). Pixel
coordinates are (x, y) pairs; bulk coordinate sets are int arrays of shape
(n, 2) with columns (x, y). All operations are pure: inputs are never
mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from numpy.typing import NDArray
from PIL import Image

GrayImage = NDArray[np.uint8]
BinaryMask = NDArray[np.bool_]

PEAK = 255


@dataclass(frozen=True)
class Toggle:
    """Replace intensity i with 255 - i (an involution on uint8)."""


@dataclass(frozen=True)
class SetValue:
    """Write a fixed intensity into every perturbed pixel."""

    value: int

    def __post_init__(self):
        if not 0 <= self.value <= PEAK:
            raise ValueError(f"SetValue intensity {self.value} outside [0,255]")


PerturbModel = Union[Toggle, SetValue]


def as_gray_image(arr: np.ndarray) -> GrayImage:
    """Validate and coerce an array into a GrayImage."""
    a = np.asarray(arr)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"gray image must be 2D and non-empty, got shape {a.shape}")
    if a.dtype != np.uint8:
        if a.min() < 0 or a.max() > PEAK:
            raise ValueError("intensity values outside [0,255]")
        a = a.astype(np.uint8)
    return a


def coords_array(coords: Sequence) -> NDArray[np.int64]:
    """Coerce a coordinate sequence into an (n, 2) int array of (x, y)."""
    c = np.asarray(coords, dtype=np.int64)
    if c.size == 0:
        return c.reshape(0, 2)
    if c.ndim != 2 or c.shape[1] != 2:
        raise ValueError(f"coords must have shape (n, 2), got {c.shape}")
    return c


def binarize(img: GrayImage, threshold: int = 128) -> BinaryMask:
    """Foreground (ink) mask: pixel is ink iff intensity < threshold.

    Dark ink on a light background; threshold must lie in [0, 255].
    """
    if not 0 <= threshold <= PEAK:
        raise ValueError(f"threshold {threshold} outside [0,255]")
    img = as_gray_image(img)
    return img < threshold


def apply_perturbation(
    img: GrayImage,
    coords: Sequence,
    model: PerturbModel = Toggle(),
) -> GrayImage:
    """Return a copy of ``img`` with the listed pixels replaced.

    Duplicate coordinates are applied once (a toggle must not cancel
    itself). Out-of-bounds coordinates raise ValueError.
    """
    img = as_gray_image(img)
    c = coords_array(coords)
    out = img.copy()
    if len(c) == 0:
        return out
    h, w = img.shape
    xs, ys = c[:, 0], c[:, 1]
    if xs.min() < 0 or ys.min() < 0 or xs.max() >= w or ys.max() >= h:
        raise ValueError("perturbation coordinate out of image bounds")
    c = np.unique(c, axis=0)
    xs, ys = c[:, 0], c[:, 1]
    if isinstance(model, Toggle):
        out[ys, xs] = PEAK - out[ys, xs]
    else:
        out[ys, xs] = model.value
    return out


def psnr(a: GrayImage, b: GrayImage) -> float:
    """Peak signal-to-noise ratio in dB; math.inf for identical images."""
    a = as_gray_image(a)
    b = as_gray_image(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def load_png(path) -> GrayImage:
    """Load a PNG as 8-bit grayscale (color inputs via ITU-R BT.601 luma)."""
    with Image.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        return np.asarray(im, dtype=np.uint8).copy()


def save_png(img: GrayImage, path) -> None:
    img = as_gray_image(img)
    Image.fromarray(img, mode="L").save(path, format="PNG")
