"""
Minuscule region proposal.

Bright pixels above ``otsu * lambda`` are grouped into connected components;
components belonging to the anterior chamber whose area lies in
``[s_min, s_max]`` each yield one fixed-size box centred on the component
centroid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import CandidateBox, centered_box
from .imagecore import check_gray, check_mask, connected_components, histogram

CENTROID_RULE = "centroid"
CLIP_RULE = "clip"


@dataclass(frozen=True)
class MirpConfig:
    lam: float = 1.0
    s_min: int = 1
    s_max: int = 25
    box_w: int = 10
    box_h: int = 10
    # how the AC mask restricts components: keep whole components whose
    # centroid is in the AC, or clip component pixels to the AC
    ac_rule: str = CENTROID_RULE
    connectivity: int = 8

    def __post_init__(self):
        if not 0 < self.lam <= 1.5:
            raise ValueError("lambda must lie in (0, 1.5]")
        if not 1 <= self.s_min <= self.s_max:
            raise ValueError("need 1 <= s_min <= s_max")
        if self.box_w < 1 or self.box_h < 1:
            raise ValueError("box size must be positive")
        if self.ac_rule not in (CENTROID_RULE, CLIP_RULE):
            raise ValueError(f"unknown ac_rule {self.ac_rule!r}")


def otsu_threshold(h) -> int:
    """Level ``k`` maximising the between-class variance of ``{<= k}`` vs ``{> k}``.

    Evaluated exactly: with ``n1, s1`` the count and intensity sum of the
    lower class and ``N, S`` the totals,
    ``N^2 * var_between = (s1*N - S*n1)^2 / (n1 * (N - n1))``.
    Only strictly larger scores replace the incumbent, so the first maximiser
    wins; a one-class histogram returns 0.
    """
    counts = [int(c) for c in np.asarray(h).ravel()]
    if len(counts) != 256:
        raise ValueError("histogram must have 256 bins")
    total = sum(counts)
    if total <= 0:
        raise ValueError("empty histogram")
    weighted = sum(v * c for v, c in enumerate(counts))
    best_k, best_num, best_den = 0, 0, 1
    n1 = s1 = 0
    for k in range(256):
        n1 += counts[k]
        s1 += k * counts[k]
        n2 = total - n1
        if n1 == 0 or n2 == 0:
            continue
        num = (s1 * total - weighted * n1) ** 2
        den = n1 * n2
        if num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    return best_k


def effective_threshold(t_init: float, lam: float) -> float:
    return t_init * lam


def bright_mask(g, threshold: float) -> np.ndarray:
    return check_gray(g) > threshold


def components_to_boxes(g, ac_mask, threshold: float, s_min: int, s_max: int, box_w: int, box_h: int,
                        ac_rule: str = CENTROID_RULE, connectivity: int = 8):
    """Shared tail of the proposal and threshold-baseline detectors.

    Returns ``(boxes, areas)`` in component-label order.
    """
    g = check_gray(g)
    ac = check_mask(ac_mask)
    if g.shape != ac.shape:
        raise ValueError(f"image {g.shape} and AC mask {ac.shape} differ in size")
    height, width = g.shape
    cc = connected_components(bright_mask(g, threshold), connectivity)
    if cc.component_count == 0:
        return [], []

    if ac_rule == CLIP_RULE:
        labels = np.where(ac, cc.labels, 0).ravel()
        n = cc.component_count + 1
        areas = np.bincount(labels, minlength=n)[1:]
        ys, xs = np.indices(g.shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            cx = np.bincount(labels, weights=xs.ravel(), minlength=n)[1:] / areas
            cy = np.bincount(labels, weights=ys.ravel(), minlength=n)[1:] / areas
        centroids = np.column_stack([cx, cy])
        keep = areas > 0
    else:
        areas, centroids = cc.areas, cc.centroids
        # a component counts as inside when the pixel under its centroid is
        cols = np.floor(centroids[:, 0] + 0.5).astype(int).clip(0, width - 1)
        rows = np.floor(centroids[:, 1] + 0.5).astype(int).clip(0, height - 1)
        keep = ac[rows, cols]

    keep = keep & (areas >= s_min) & (areas <= s_max)
    boxes, kept_areas = [], []
    for k in np.flatnonzero(keep):
        xc, yc = centroids[k]
        boxes.append(centered_box(xc, yc, box_w, box_h, width, height))
        kept_areas.append(int(areas[k]))
    return boxes, kept_areas


def propose_with_areas(g, ac_mask, cfg: MirpConfig = MirpConfig()):
    g = check_gray(g)
    t_opt = effective_threshold(otsu_threshold(histogram(g)), cfg.lam)
    return components_to_boxes(g, ac_mask, t_opt, cfg.s_min, cfg.s_max, cfg.box_w, cfg.box_h,
                               cfg.ac_rule, cfg.connectivity)


def propose(g, ac_mask, cfg: MirpConfig = MirpConfig()) -> list[CandidateBox]:
    return propose_with_areas(g, ac_mask, cfg)[0]
