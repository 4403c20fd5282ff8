"""Plain-text result tables and grayscale box overlays."""
from __future__ import annotations

import numpy as np

from .evaluation import CRITERIA, EvalReport
from .imagecore import check_gray

PRED_LEVEL = 255
GT_LEVEL = 0


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    rule = "-+-".join("-" * w for w in widths)
    lines = [" | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in cells]
    return "\n".join([lines[0], rule] + lines[1:]) + "\n"


def pct(v: float) -> str:
    return "nan" if v != v else f"{100 * v:.2f}"


def segmentation_table(rows) -> str:
    """``rows``: ``(method, iou, dice)`` with fractions in [0, 1]."""
    return _table(["Method", "IoU(%)", "Dice(%)"], [(m, pct(i), pct(d)) for m, i, d in rows])


def count_table(reports: dict) -> str:
    """MAE of predicted vs ground-truth counts, one row per method."""
    crits = [c for c in CRITERIA if all(c in r.criteria for r in reports.values())]
    header = ["Method", "MAE_all"] + [f"MAE_c_{c}" for c in crits]
    rows = [[name, f"{rep.mae_all:.2f}"] + [f"{rep.criteria[c].mae_c:.2f}" for c in crits]
            for name, rep in reports.items()]
    return _table(header, rows)


def prf_table(reports: dict) -> str:
    crits = [c for c in CRITERIA if all(c in r.criteria for r in reports.values())]
    header = ["Method"] + [f"{k}_{c}" for c in crits for k in ("Precision", "Recall", "F1")]
    rows = []
    for name, rep in reports.items():
        row = [name]
        for c in crits:
            m = rep.criteria[c]
            row += [pct(m.precision), pct(m.recall), pct(m.f1)]
        rows.append(row)
    return _table(header, rows)


def eval_report_text(rep: EvalReport, name: str = "predictions") -> str:
    parts = [f"images: {rep.n_images}\n\n", count_table({name: rep}), "\n", prf_table({name: rep})]
    if rep.seg_iou is not None:
        parts += ["\n", segmentation_table([(name, rep.seg_iou, rep.seg_dice)])]
    return "".join(parts)


class _MeanReport:
    """Duck-typed :class:`EvalReport` holding split-averaged numbers."""

    class _Crit:
        def __init__(self, **kw):
            self.__dict__.update(kw)

    def __init__(self, res, method):
        self.mae_all = res.mean(method, "mae_all")
        self.criteria = {
            c: self._Crit(**{f: res.mean(method, f, c) for f in ("precision", "recall", "f1", "mae_c")})
            for c in CRITERIA
        }


def experiment_report_text(res) -> str:
    means = {m: _MeanReport(res, m) for m in res.methods}
    lam = ", ".join(f"{s.best_lambda:.2f}" for s in res.splits)
    parts = [
        f"repetitions: {len(res.splits)}; selected lambda per split: {lam}\n\n",
        "AC segmentation (field of focus vs ground-truth AC)\n",
        segmentation_table([("FoF (" + res.config.segmenter.kind + ")", res.seg_iou, res.seg_dice)]),
        "\nPredicted vs ground-truth cell count (mean over splits)\n",
        count_table(means),
        "\nDetection precision / recall / F1 (%, mean over splits)\n",
        prf_table(means),
    ]
    return "".join(parts)


def draw_rect(canvas: np.ndarray, box, level: int, thickness: int = 1) -> None:
    height, width = canvas.shape
    x0, y0 = max(box.x_tl, 0), max(box.y_tl, 0)
    x1, y1 = min(box.x_br, width) - 1, min(box.y_br, height) - 1
    if x0 > x1 or y0 > y1:
        return
    for t in range(thickness):
        canvas[min(y0 + t, y1), x0:x1 + 1] = level
        canvas[max(y1 - t, y0), x0:x1 + 1] = level
        canvas[y0:y1 + 1, min(x0 + t, x1)] = level
        canvas[y0:y1 + 1, max(x1 - t, x0)] = level


def overlay(g, pred_boxes, gt_boxes, pred_level: int = PRED_LEVEL, gt_level: int = GT_LEVEL) -> np.ndarray:
    """Copy of ``g`` with ground-truth rectangles drawn at ``gt_level`` and
    predictions at ``pred_level`` on top."""
    if pred_level == gt_level:
        raise ValueError("prediction and ground-truth levels must differ")
    canvas = check_gray(g).copy()
    for b in gt_boxes:
        draw_rect(canvas, b, gt_level)
    for b in pred_boxes:
        draw_rect(canvas, b, pred_level)
    return canvas
