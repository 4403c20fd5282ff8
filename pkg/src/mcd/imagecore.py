"""
Pixel-level primitives shared by every stage of the pipeline.

Images are plain numpy arrays:

* gray image  -- 2-D ``uint8`` array, shape ``(height, width)``
* binary mask -- 2-D ``bool`` array of the same shape

Coordinates handed around between stages are ``(x, y)`` = ``(column, row)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "ComponentLabeling",
    "to_gray",
    "mean_threshold_mask",
    "connected_components",
    "histogram",
    "mask_and",
    "round_half_away",
    "check_gray",
    "check_mask",
]

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def round_half_away(value: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


def check_gray(g) -> np.ndarray:
    g = np.asarray(g)
    if g.ndim != 2 or g.size == 0:
        raise ValueError(f"expected a non-empty 2-D gray image, got shape {g.shape}")
    if g.dtype != np.uint8:
        if g.min() < 0 or g.max() > 255:
            raise ValueError("gray intensities must lie in [0, 255]")
        g = g.astype(np.uint8)
    return g


def check_mask(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {m.shape}")
    return m.astype(bool, copy=False)


def to_gray(image) -> np.ndarray:
    """Convert a single- or three-channel 8-bit raster to a gray image.

    Three-channel input uses the 0.299/0.587/0.114 luminance weights,
    rounded to the nearest integer (computed in integer arithmetic).
    Single-channel input passes through unchanged.
    """
    arr = np.asarray(image)
    if arr.size == 0:
        raise ValueError("empty image")
    if arr.ndim == 2:
        return check_gray(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        return check_gray(arr[:, :, 0])
    if arr.ndim == 3 and arr.shape[2] == 3:
        rgb = arr.astype(np.int64)
        lum = (299 * rgb[:, :, 0] + 587 * rgb[:, :, 1] + 114 * rgb[:, :, 2] + 500) // 1000
        return lum.astype(np.uint8)
    raise ValueError(f"unsupported channel layout {arr.shape}; need 1 or 3 channels")


def mean_threshold_mask(g) -> np.ndarray:
    """Pixels strictly brighter than the image mean.

    ``v > sum / n`` is evaluated as ``v * n > sum`` so no rounding enters.
    """
    g = check_gray(g)
    total = int(g.sum(dtype=np.int64))
    return g.astype(np.int64) * g.size > total


@dataclass(frozen=True)
class ComponentLabeling:
    """Labels in raster discovery order; index ``k - 1`` of ``areas`` and
    ``centroids`` describes label ``k``. Centroids are ``(x, y)``."""

    labels: np.ndarray
    component_count: int
    areas: np.ndarray
    centroids: np.ndarray

    def bounding_boxes(self) -> list[tuple[int, int, int, int]]:
        """Inclusive ``(x0, y0, x1, y1)`` per component."""
        out = []
        for sl in ndimage.find_objects(self.labels, self.component_count):
            out.append((sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1))
        return out


def connected_components(m, connectivity: int = 8) -> ComponentLabeling:
    m = check_mask(m)
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 4 or 8")
    labels, count = ndimage.label(m, structure=_STRUCTURES[connectivity])
    labels = labels.astype(np.int32, copy=False)
    if count == 0:
        return ComponentLabeling(labels, 0, np.zeros(0, np.int64), np.zeros((0, 2)))
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=count + 1)[1:].astype(np.int64)
    ys, xs = np.indices(labels.shape)
    sx = np.bincount(flat, weights=xs.ravel(), minlength=count + 1)[1:]
    sy = np.bincount(flat, weights=ys.ravel(), minlength=count + 1)[1:]
    centroids = np.column_stack([sx / areas, sy / areas])
    return ComponentLabeling(labels, int(count), areas, centroids)


def histogram(g) -> np.ndarray:
    """256-bin intensity histogram as int64 counts."""
    g = check_gray(g)
    return np.bincount(g.ravel(), minlength=256).astype(np.int64)


def mask_and(a, b) -> np.ndarray:
    a, b = check_mask(a), check_mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a & b
