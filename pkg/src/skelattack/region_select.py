"""Attack search-space construction: full image, character boxes, skeleton.

The three narrowing modes restrict which pixels an attack may touch, and
every mode serializes its pixels into one deterministic 1D ordering so
optimizer indices mean the same thing across runs:

* within a box, row-major (y ascending, then x);
* across boxes, top-to-bottom then left-to-right of the box origin.

Skeletonization is Zhang-Suen two-subiteration parallel thinning, iterated
until a full pass deletes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .image_core import BinaryMask, GrayImage, as_gray_image, binarize

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class Mode(str, Enum):
    FULL_IMAGE = "full"
    CHARACTER_AREA = "character"
    SKELETONIZED_AREA = "skeleton"


class EmptySearchSpaceError(ValueError):
    """Narrowed mode requested on an image with no ink."""


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Half-open pixel box: x0 <= x < x1, y0 <= y < y1."""

    y0: int
    x0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self!r}")

    def contains(self, x: int, y: int) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True)
class SearchSpace:
    """Ordered attackable pixels; ``coords`` is (n, 2) int with columns (x, y)."""

    mode: Mode
    coords: NDArray[np.int64]
    source_dims: tuple[int, int]  # (width, height)

    def __len__(self) -> int:
        return len(self.coords)


def detect_character_boxes(mask: BinaryMask) -> list[BoundingBox]:
    """Tight bounding box of every 8-connected foreground component.

    Boxes come back in canonical order: (y0, x0), ties by (x1, y1).
    An empty mask yields an empty list.
    """
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    boxes = []
    for sl in ndimage.find_objects(labels):
        if sl is None:
            continue
        ys, xs = sl
        boxes.append(BoundingBox(y0=ys.start, x0=xs.start, x1=xs.stop, y1=ys.stop))
    boxes.sort()  # dataclass field order is exactly the canonical key
    return boxes


def _neighbours(padded: np.ndarray):
    # Zhang-Suen neighbourhood, clockwise from north: P2..P9.
    p2 = padded[:-2, 1:-1]
    p3 = padded[:-2, 2:]
    p4 = padded[1:-1, 2:]
    p5 = padded[2:, 2:]
    p6 = padded[2:, 1:-1]
    p7 = padded[2:, :-2]
    p8 = padded[1:-1, :-2]
    p9 = padded[:-2, :-2]
    return p2, p3, p4, p5, p6, p7, p8, p9


def _thin_subpass(mask: np.ndarray, second: bool) -> np.ndarray:
    """One parallel subiteration; returns the deletion mask."""
    padded = np.pad(mask, 1, constant_values=0)
    p = _neighbours(padded.astype(np.uint8))
    p2, p3, p4, p5, p6, p7, p8, p9 = p
    b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
    ring = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
    a = np.zeros_like(b)
    for cur, nxt in zip(ring, ring[1:]):
        a += (cur == 0) & (nxt == 1)
    if not second:
        cond = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
    else:
        cond = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
    return mask & (b >= 2) & (b <= 6) & (a == 1) & cond


def skeletonize(mask: BinaryMask) -> BinaryMask:
    """Zhang-Suen thinning to (approximately) one-pixel-wide strokes.

    Output foreground is a subset of the input; iteration stops when a
    full pass (both subiterations) removes no pixel, which also makes the
    operation idempotent.
    """
    out = np.asarray(mask, dtype=bool).copy()
    while True:
        d1 = _thin_subpass(out, second=False)
        out &= ~d1
        d2 = _thin_subpass(out, second=True)
        out &= ~d2
        if not d1.any() and not d2.any():
            return out


def canonical_order(boxes: list[BoundingBox], coords: NDArray[np.int64]) -> NDArray[np.int64]:
    """Sort coords box-major: boxes in their canonical order, row-major inside.

    Every coordinate is assigned to the first canonically-ordered box that
    contains it; a coordinate outside all boxes is an internal error.
    """
    boxes = sorted(boxes)
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    if len(coords) == 0:
        return coords
    xs, ys = coords[:, 0], coords[:, 1]
    owner = np.full(len(coords), -1, dtype=np.int64)
    for i, bx in enumerate(reversed(boxes)):
        inside = (xs >= bx.x0) & (xs < bx.x1) & (ys >= bx.y0) & (ys < bx.y1)
        owner[inside] = len(boxes) - 1 - i
    if (owner < 0).any():
        bad = coords[owner < 0][0]
        raise RuntimeError(f"coordinate {tuple(bad)} outside every box")
    order = np.lexsort((xs, ys, owner))
    return coords[order]


def build_search_space(img: GrayImage, mode: Mode, threshold: int = 128) -> SearchSpace:
    """Assemble the attackable-pixel sequence for one narrowing mode."""
    img = as_gray_image(img)
    h, w = img.shape
    mode = Mode(mode)
    if mode is Mode.FULL_IMAGE:
        ys, xs = np.divmod(np.arange(h * w), w)
        coords = np.stack([xs, ys], axis=1)
        return SearchSpace(mode, coords, (w, h))

    mask = binarize(img, threshold)
    boxes = detect_character_boxes(mask)
    if not boxes:
        raise EmptySearchSpaceError(f"no ink at threshold {threshold}; {mode.value} mode needs characters")

    if mode is Mode.CHARACTER_AREA:
        member = np.zeros(img.shape, dtype=bool)
        for bx in boxes:
            member[bx.y0 : bx.y1, bx.x0 : bx.x1] = True
    else:
        member = skeletonize(mask)
        box_cover = np.zeros(img.shape, dtype=bool)
        for bx in boxes:
            box_cover[bx.y0 : bx.y1, bx.x0 : bx.x1] = True
        member &= box_cover
        if not member.any():
            raise EmptySearchSpaceError("skeleton is empty")

    ys, xs = np.nonzero(member)
    coords = canonical_order(boxes, np.stack([xs, ys], axis=1))
    return SearchSpace(mode, coords, (w, h))


def save_search_space_overlay(img: GrayImage, space: SearchSpace, path) -> None:
    """Debug PNG: attackable pixels forced to black, all else washed out."""
    from .image_core import save_png

    img = as_gray_image(img)
    overlay = (127 + img.astype(np.uint16) // 2).astype(np.uint8)
    xs, ys = space.coords[:, 0], space.coords[:, 1]
    overlay[ys, xs] = 0
    save_png(overlay, path)
