"""
Field-of-Focus: locate the anterior chamber (AC).

The anterior segment is the largest bright component of the mean-threshold
mask (optionally merged with the runner-up when the two are of comparable
size). Its centroid, shifted by fixed offsets, gives prompt points for a
segmenter. The segmenter is pluggable:

``external-mask``
    masks produced elsewhere (e.g. by a foundation model) are loaded from
    disk via a ``{stem}`` path template.
``flood-fill-fallback``
    classical region growing over the below-mean pixels reachable from the
    prompts, followed by one 3x3 closing and (by default) filling of enclosed
    holes, so bright cells inside the chamber stay inside the mask.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError, NoAnteriorSegment, PromptsOutsideDarkRegion
from .imagecore import (
    check_gray,
    check_mask,
    connected_components,
    mean_threshold_mask,
    round_half_away,
)
from .imageio import RasterError, read_mask

log = logging.getLogger(__name__)

EXTERNAL_MASK = "external-mask"
FLOOD_FILL = "flood-fill-fallback"
SEGMENTER_KINDS = (EXTERNAL_MASK, FLOOD_FILL)


@dataclass(frozen=True)
class I2ACPConfig:
    merge_ratio: float = 0.65
    # (dx, dy) as fractions of the image width
    offsets: tuple = ((0.0, 0.1), (0.0, -0.1))
    connectivity: int = 8

    def __post_init__(self):
        if not 0 < self.merge_ratio <= 1:
            raise ValueError("merge_ratio must lie in (0, 1]")
        if not self.offsets:
            raise ValueError("at least one prompt offset is required")


@dataclass(frozen=True)
class SegmenterSpec:
    kind: str = FLOOD_FILL
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SEGMENTER_KINDS:
            raise ValueError(f"unknown segmenter kind {self.kind!r}; expected one of {SEGMENTER_KINDS}")
        if self.kind == EXTERNAL_MASK and "template" not in self.parameters:
            raise ValueError("external-mask segmenter needs a 'template' parameter")


def anterior_segment_mask(g, cfg: I2ACPConfig = I2ACPConfig()) -> np.ndarray:
    g = check_gray(g)
    cc = connected_components(mean_threshold_mask(g), cfg.connectivity)
    if cc.component_count == 0:
        raise NoAnteriorSegment()
    # stable sort keeps the lower label first among equal areas
    order = np.argsort(-cc.areas, kind="stable")
    keep = [order[0] + 1]
    if cc.component_count > 1:
        first, second = cc.areas[order[0]], cc.areas[order[1]]
        if second / first > cfg.merge_ratio:
            keep.append(order[1] + 1)
    return np.isin(cc.labels, keep)


def prompt_points(segment_mask, cfg: I2ACPConfig = I2ACPConfig()) -> list[tuple[int, int]]:
    m = check_mask(segment_mask)
    ys, xs = np.nonzero(m)
    if xs.size == 0:
        raise ValueError("cannot place prompts on an empty mask")
    height, width = m.shape
    xc, yc = xs.mean(), ys.mean()
    points = []
    for dx, dy in cfg.offsets:
        x = round_half_away(xc + dx * width)
        y = round_half_away(yc + dy * width)
        points.append((min(max(x, 0), width - 1), min(max(y, 0), height - 1)))
    return points


def _closing3(mask: np.ndarray) -> np.ndarray:
    # pad so the closing stays extensive at the image border
    padded = np.pad(mask, 2)
    closed = ndimage.binary_closing(padded, structure=np.ones((3, 3), bool))
    return closed[2:-2, 2:-2] | mask


def flood_fill_segment(g, prompts, fill_holes: bool = True) -> np.ndarray:
    g = check_gray(g)
    dark = ~mean_threshold_mask(g)
    labels, _ = ndimage.label(dark, structure=np.ones((3, 3), bool))
    seeds = []
    for x, y in prompts:
        if dark[y, x]:
            seeds.append(labels[y, x])
        else:
            log.warning("prompt (%d, %d) lies on an above-mean pixel; skipped", x, y)
    if not seeds:
        raise PromptsOutsideDarkRegion()
    region = _closing3(np.isin(labels, seeds))
    return ndimage.binary_fill_holes(region) if fill_holes else region


def _as_bool(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes", "on")
    return bool(v)


def load_external_mask(template: str, stem: str, shape) -> np.ndarray:
    path = Path(template.format(stem=stem))
    try:
        return read_mask(path, shape)
    except FileNotFoundError as exc:
        raise DataError(f"external mask not found: {path}") from exc
    except RasterError as exc:
        raise DataError(str(exc)) from exc


def segment_ac(g, prompts, spec: SegmenterSpec = SegmenterSpec(), stem: str | None = None) -> np.ndarray:
    g = check_gray(g)
    if not prompts:
        raise ValueError("at least one prompt point is required")
    if spec.kind == EXTERNAL_MASK:
        if stem is None:
            raise ValueError("external-mask segmentation needs the image stem")
        return load_external_mask(spec.parameters["template"], stem, g.shape)
    return flood_fill_segment(g, prompts, _as_bool(spec.parameters.get("fill_holes", True)))


def field_of_focus(g, cfg: I2ACPConfig = I2ACPConfig(), spec: SegmenterSpec = SegmenterSpec(),
                   stem: str | None = None) -> np.ndarray:
    """Whole image -> AC mask."""
    g = check_gray(g)
    if spec.kind == EXTERNAL_MASK:
        if stem is None:
            raise ValueError("external-mask segmentation needs the image stem")
        return load_external_mask(spec.parameters["template"], stem, g.shape)
    prompts = prompt_points(anterior_segment_mask(g, cfg), cfg)
    return segment_ac(g, prompts, spec, stem)
