"""Global-threshold comparators (Otsu, Isodata) with component size filtering."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DegenerateHistogram
from .imagecore import check_gray, histogram
from .mirp import CENTROID_RULE, components_to_boxes, otsu_threshold

log = logging.getLogger(__name__)

METHODS = ("otsu", "isodata")
MAX_ISODATA_ITER = 256


@dataclass(frozen=True)
class BaselineConfig:
    method: str = "isodata"
    s_min: int = 1
    s_max: int = 25
    box_w: int = 10
    box_h: int = 10
    connectivity: int = 8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown baseline method {self.method!r}")
        if not 1 <= self.s_min <= self.s_max:
            raise ValueError("need 1 <= s_min <= s_max")

    @property
    def label(self) -> str:
        name = "Otsu" if self.method == "otsu" else "Isodata"
        return f"{name}(s_min={self.s_min})"


def _round_half_up(q: Fraction) -> int:
    return (q + Fraction(1, 2)).__floor__()


def isodata_threshold(h) -> int:
    """Ridler-Calvard iteration ``T <- round((mean(<= T) + mean(> T)) / 2)``
    from the rounded global mean, evaluated in exact rationals."""
    counts = [int(c) for c in np.asarray(h).ravel()]
    if len(counts) != 256:
        raise ValueError("histogram must have 256 bins")
    total = sum(counts)
    if total == 0 or sum(1 for c in counts if c) < 2:
        raise DegenerateHistogram()
    cum_n, cum_s = [], []
    n = s = 0
    for v, c in enumerate(counts):
        n += c
        s += v * c
        cum_n.append(n)
        cum_s.append(s)

    # rounding half up can land on the top occupied level (e.g. two adjacent
    # levels); clamp so both classes stay non-empty
    lowest = next(v for v, c in enumerate(counts) if c)
    highest = max(v for v, c in enumerate(counts) if c)

    def clamp(v):
        return min(max(v, lowest), highest - 1)

    t = clamp(_round_half_up(Fraction(s, total)))
    for _ in range(MAX_ISODATA_ITER):
        n_lo, s_lo = cum_n[t], cum_s[t]
        n_hi, s_hi = total - n_lo, s - s_lo
        t_next = clamp(_round_half_up((Fraction(s_lo, n_lo) + Fraction(s_hi, n_hi)) / 2))
        if t_next == t:
            return t
        t = t_next
    log.warning("isodata did not settle after %d iterations; using T=%d", MAX_ISODATA_ITER, t)
    return t


def baseline_threshold(g, method: str) -> int:
    h = histogram(g)
    return otsu_threshold(h) if method == "otsu" else isodata_threshold(h)


def detect_threshold_with_areas(g, ac_mask, cfg: BaselineConfig = BaselineConfig()):
    g = check_gray(g)
    try:
        t = baseline_threshold(g, cfg.method)
    except DegenerateHistogram:
        log.warning("%s: degenerate histogram, no detections", cfg.label)
        if np.asarray(ac_mask).shape != g.shape:
            raise ValueError("image and AC mask differ in size")
        return [], []
    return components_to_boxes(g, ac_mask, t, cfg.s_min, cfg.s_max, cfg.box_w, cfg.box_h,
                               CENTROID_RULE, cfg.connectivity)


def detect_threshold(g, ac_mask, cfg: BaselineConfig = BaselineConfig()):
    return detect_threshold_with_areas(g, ac_mask, cfg)[0]
