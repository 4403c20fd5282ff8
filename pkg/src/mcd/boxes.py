"""Axis-aligned pixel boxes, half-open: a box covers columns ``x_tl .. x_br - 1``."""
from __future__ import annotations

from dataclasses import dataclass

from .imagecore import round_half_away


@dataclass(frozen=True)
class CandidateBox:
    x_tl: int
    y_tl: int
    x_br: int
    y_br: int
    # centroid of the component (or click point) the box was built around
    source_centroid: tuple | None = None

    def __post_init__(self):
        if not (self.x_tl < self.x_br and self.y_tl < self.y_br):
            raise ValueError(f"degenerate box {self.coords}")

    @property
    def coords(self) -> tuple[int, int, int, int]:
        return (self.x_tl, self.y_tl, self.x_br, self.y_br)

    @property
    def width(self) -> int:
        return self.x_br - self.x_tl

    @property
    def height(self) -> int:
        return self.y_br - self.y_tl

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_tl + self.x_br) / 2, (self.y_tl + self.y_br) / 2)

    def contains_point(self, x: float, y: float) -> bool:
        """Boundary counts as inside."""
        return self.x_tl <= x <= self.x_br and self.y_tl <= y <= self.y_br

    def inside(self, width: int, height: int) -> bool:
        return self.x_tl >= 0 and self.y_tl >= 0 and self.x_br <= width and self.y_br <= height


def centered_box(xc: float, yc: float, w: int, h: int, width: int | None = None,
                 height: int | None = None) -> CandidateBox:
    """``w`` x ``h`` box with top-left at ``centre - size/2`` (rounded half away
    from zero), translated inward when it would leave a ``width`` x ``height``
    image. Size is always preserved."""
    x_tl = round_half_away(xc - w / 2)
    y_tl = round_half_away(yc - h / 2)
    if width is not None:
        if w > width:
            raise ValueError(f"box width {w} exceeds image width {width}")
        x_tl = min(max(x_tl, 0), width - w)
    if height is not None:
        if h > height:
            raise ValueError(f"box height {h} exceeds image height {height}")
        y_tl = min(max(y_tl, 0), height - h)
    return CandidateBox(x_tl, y_tl, x_tl + w, y_tl + h, (float(xc), float(yc)))


def box_iou(a: CandidateBox, b: CandidateBox) -> float:
    iw = min(a.x_br, b.x_br) - max(a.x_tl, b.x_tl)
    ih = min(a.y_br, b.y_br) - max(a.y_tl, b.y_tl)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)
