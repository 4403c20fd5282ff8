"""
Text formats.

Annotation / detection files
----------------------------
UTF-8, one record per image, comma-separated fields in fixed order after a
header line::

    image_id,points,boxes,scores
    synth_0003,412 300;398 331,407 295 417 305;393 326 403 336,
    synth_0004,,120 88 130 98,0.9731

* ``points`` -- ``x y`` pairs separated by ``;`` (ground-truth clicks)
* ``boxes``  -- ``x_tl y_tl x_br y_br`` quadruples separated by ``;``
* ``scores`` -- one float per box, ``;``-separated, or empty

Lines starting with ``#`` are comments. Image ids may not contain ``,``.

Key-value files
---------------
``key=value`` per line, ``#`` comments, used for configs, report metrics
and the lambda sweep table.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .boxes import CandidateBox, centered_box
from .errors import DataError

HEADER = "image_id,points,boxes,scores"
ANNOTATION_SUFFIX = ".csv"


@dataclass
class AnnotationRecord:
    image_id: str
    points: list = field(default_factory=list)
    boxes: list = field(default_factory=list)
    scores: list | None = None

    def scored_boxes(self):
        scores = self.scores if self.scores is not None else [1.0] * len(self.boxes)
        return list(zip(self.boxes, scores))


def ground_truth(image_id: str, points, width: int, height: int, box_w: int = 10,
                 box_h: int = 10) -> AnnotationRecord:
    """Click points plus the box centred on each click."""
    points = [(p[0], p[1]) for p in points]
    boxes = [centered_box(x, y, box_w, box_h, width, height) for x, y in points]
    return AnnotationRecord(image_id, points, boxes, None)


def _num(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def format_record(rec: AnnotationRecord) -> str:
    if "," in rec.image_id or "\n" in rec.image_id:
        raise ValueError(f"image id {rec.image_id!r} contains a separator")
    pts = ";".join(f"{_num(x)} {_num(y)}" for x, y in rec.points)
    bxs = ";".join(" ".join(str(c) for c in b.coords) for b in rec.boxes)
    scs = "" if rec.scores is None else ";".join(repr(float(s)) for s in rec.scores)
    return f"{rec.image_id},{pts},{bxs},{scs}"


def parse_record(line: str, where: str = "") -> AnnotationRecord:
    parts = line.rstrip("\n").split(",")
    if len(parts) != 4:
        raise DataError(f"{where}: expected 4 comma-separated fields, got {len(parts)}")
    image_id, pts, bxs, scs = parts
    try:
        points = []
        for item in filter(None, pts.split(";")):
            x, y = item.split()
            points.append((float(x), float(y)))
        boxes = []
        for item in filter(None, bxs.split(";")):
            x0, y0, x1, y1 = (int(v) for v in item.split())
            boxes.append(CandidateBox(x0, y0, x1, y1))
        scores = [float(s) for s in scs.split(";")] if scs else None
    except ValueError as exc:
        raise DataError(f"{where}: {exc}") from exc
    if scores is not None and len(scores) != len(boxes):
        raise DataError(f"{where}: {len(scores)} scores for {len(boxes)} boxes")
    return AnnotationRecord(image_id, points, boxes, scores)


def write_annotations(path, records) -> None:
    lines = [HEADER] + [format_record(r) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_annotations(path) -> list[AnnotationRecord]:
    """Read one annotation file, or every ``*.csv`` in a directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*" + ANNOTATION_SUFFIX))
        out = []
        for f in files:
            out.extend(read_annotations(f))
        return out
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"annotation file not found: {path}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].strip() != HEADER:
        raise DataError(f"{path}: missing header line {HEADER!r}")
    records = [parse_record(ln, f"{path}:{i + 2}") for i, ln in enumerate(lines[1:])]
    seen = set()
    for r in records:
        if r.image_id in seen:
            raise DataError(f"{path}: duplicate image id {r.image_id}")
        seen.add(r.image_id)
    return records


def write_kv(path, items, comment: str | None = None) -> None:
    lines = [f"# {comment}"] if comment else []
    for k, v in items.items() if isinstance(items, dict) else items:
        if isinstance(v, float):
            v = repr(v)
        lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_kv(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"config file not found: {path}") from exc
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out
