"""
Segmentation and detection metrics.

Detections are matched greedily: predictions are visited by descending
score (ties in raster order of the top-left corner) and each claims at most
one still-unmatched ground-truth cell. A claimed cell leaves the pool, so
two boxes on one cell give one TP and one FP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import box_iou
from .formats import AnnotationRecord
from .imagecore import check_mask


@dataclass(frozen=True)
class MatchCriterion:
    kind: str  # "point" | "iou"
    iou_threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in ("point", "iou"):
            raise ValueError(f"unknown criterion kind {self.kind!r}")
        if self.kind == "iou" and not 0 < self.iou_threshold < 1:
            raise ValueError("IoU threshold must lie in (0, 1)")

    @property
    def name(self) -> str:
        return "point" if self.kind == "point" else f"iou{round(self.iou_threshold * 100)}"


POINT = MatchCriterion("point")
IOU10 = MatchCriterion("iou", 0.10)
IOU30 = MatchCriterion("iou", 0.30)
CRITERIA = {c.name: c for c in (POINT, IOU10, IOU30)}


def seg_metrics(pred, gt) -> tuple[float, float]:
    """(IoU, Dice) of two masks; two empty masks score (1, 1)."""
    pred, gt = check_mask(pred), check_mask(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    if tp + fp + fn == 0:
        return 1.0, 1.0
    return tp / (tp + fp + fn), 2 * tp / (2 * tp + fp + fn)


@dataclass
class Matching:
    pairs: list  # (pred_index, gt_index)
    unmatched_preds: list
    unmatched_gts: list

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_preds)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gts)


def match(preds, gt: AnnotationRecord, crit: MatchCriterion) -> Matching:
    """``preds`` is a list of ``(box, score)``; indices in the result refer to it."""
    order = sorted(range(len(preds)),
                   key=lambda i: (-preds[i][1], preds[i][0].y_tl, preds[i][0].x_tl, i))
    pool = set(range(len(gt.boxes)))
    pairs, unmatched = [], []
    for i in order:
        box = preds[i][0]
        best, best_key = None, None
        for j in sorted(pool):
            if crit.kind == "point":
                px, py = gt.points[j]
                if not box.contains_point(px, py):
                    continue
                cx, cy = box.center
                key = (cx - px) ** 2 + (cy - py) ** 2
            else:
                iou = box_iou(box, gt.boxes[j])
                if not iou > crit.iou_threshold:
                    continue
                key = -iou
            if best_key is None or key < best_key:
                best, best_key = j, key
        if best is None:
            unmatched.append(i)
        else:
            pool.discard(best)
            pairs.append((i, best))
    return Matching(pairs, sorted(unmatched), sorted(pool))


@dataclass
class CriterionMetrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    mae_c: float
    flags: list = field(default_factory=list)


@dataclass
class ImageResult:
    image_id: str
    n_pred: int
    n_gt: int
    tp: dict  # criterion name -> TP count
    iou: float | None = None
    dice: float | None = None


@dataclass
class EvalReport:
    criteria: dict  # name -> CriterionMetrics
    mae_all: float
    n_images: int
    seg_iou: float | None = None
    seg_dice: float | None = None
    per_image: list = field(default_factory=list)

    def as_items(self, prefix: str = "") -> list[tuple[str, object]]:
        items = [(f"{prefix}images", self.n_images), (f"{prefix}mae_all", self.mae_all)]
        for name, m in self.criteria.items():
            p = f"{prefix}{name}."
            items += [(p + "tp", m.tp), (p + "fp", m.fp), (p + "fn", m.fn),
                      (p + "precision", m.precision), (p + "recall", m.recall),
                      (p + "f1", m.f1), (p + "mae_c", m.mae_c)]
            if m.flags:
                items.append((p + "flags", " ".join(m.flags)))
        if self.seg_iou is not None:
            items += [(f"{prefix}seg.iou", self.seg_iou), (f"{prefix}seg.dice", self.seg_dice)]
        return items


def _ratio(num: int, den: int, flag: str, flags: list) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def detection_metrics(n_preds, n_gts, matchings: dict, image_ids=None) -> EvalReport:
    """Corpus metrics.

    ``n_preds`` / ``n_gts`` hold per-image counts; ``matchings`` maps a
    criterion name to the per-image list of :class:`Matching`. Precision,
    recall and F1 use corpus-summed counts.
    """
    n_images = len(n_gts)
    if n_images == 0:
        raise ValueError("cannot evaluate an empty corpus")
    if len(n_preds) != n_images:
        raise ValueError("prediction and ground-truth corpora differ in size")
    mae_all = sum(abs(p - g) for p, g in zip(n_preds, n_gts)) / n_images
    criteria = {}
    for name, per_image in matchings.items():
        if len(per_image) != n_images:
            raise ValueError(f"criterion {name}: {len(per_image)} matchings for {n_images} images")
        tp = sum(m.tp for m in per_image)
        fp = sum(m.fp for m in per_image)
        fn = sum(m.fn for m in per_image)
        flags = []
        precision = _ratio(tp, tp + fp, "precision_undefined", flags)
        recall = _ratio(tp, tp + fn, "recall_undefined", flags)
        if precision + recall == 0:
            flags.append("f1_undefined")
            f1 = 0.0
        else:
            f1 = 2 * precision * recall / (precision + recall)
        mae_c = sum(abs(m.tp - g) for m, g in zip(per_image, n_gts)) / n_images
        criteria[name] = CriterionMetrics(tp, fp, fn, precision, recall, f1, mae_c, flags)
    ids = list(image_ids) if image_ids is not None else [str(i) for i in range(n_images)]
    per_image = [
        ImageResult(ids[i], n_preds[i], n_gts[i], {k: v[i].tp for k, v in matchings.items()})
        for i in range(n_images)
    ]
    return EvalReport(criteria, mae_all, n_images, per_image=per_image)


def evaluate_detections(preds: dict, gts: dict, criteria=("point", "iou10", "iou30"),
                        image_ids=None) -> EvalReport:
    """``preds`` / ``gts`` map image id -> :class:`AnnotationRecord`.

    Images without a prediction record count as having no detections.
    """
    ids = list(image_ids) if image_ids is not None else sorted(gts)
    crits = [CRITERIA[c] if isinstance(c, str) else c for c in criteria]
    matchings = {c.name: [] for c in crits}
    n_preds, n_gts = [], []
    for image_id in ids:
        gt = gts[image_id]
        pred = preds.get(image_id)
        scored = pred.scored_boxes() if pred is not None else []
        n_preds.append(len(scored))
        n_gts.append(len(gt.boxes))
        for c in crits:
            matchings[c.name].append(match(scored, gt, c))
    return detection_metrics(n_preds, n_gts, matchings, ids)


def segmentation_summary(pairs) -> tuple[float, float, list]:
    """Mean IoU / Dice over ``(pred, gt)`` mask pairs."""
    scores = [seg_metrics(p, g) for p, g in pairs]
    if not scores:
        raise ValueError("no mask pairs to evaluate")
    return (sum(s[0] for s in scores) / len(scores), sum(s[1] for s in scores) / len(scores), scores)


def split_corpus(ids, fractions=(0.4, 0.1, 0.5), seed: int = 0, repetition: int = 0):
    """Seeded random train/val/test split. Sizes are floor-allocated with the
    remainder going to the last part."""
    ids = list(ids)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ValueError("split fractions must be three non-negative numbers summing to 1")
    rng = np.random.default_rng([seed, repetition])
    perm = [ids[i] for i in rng.permutation(len(ids))]
    n_train = int(math.floor(fractions[0] * len(ids) + 1e-9))
    n_val = int(math.floor(fractions[1] * len(ids) + 1e-9))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]
