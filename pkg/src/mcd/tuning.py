"""Validation sweep of the MiRP threshold factor lambda."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .evaluation import POINT, evaluate_detections
from .mirp import MirpConfig

GRID_LO, GRID_HI, GRID_STEP = 0.7, 1.0, 0.01


def lambda_grid(lo: float = GRID_LO, hi: float = GRID_HI, step: float = GRID_STEP) -> list[float]:
    """Endpoints inclusive; each value is built from its integer index so the
    grid does not drift (0.7 + 30 * 0.01 is exactly 1.0 here)."""
    if step <= 0 or hi < lo:
        raise ValueError("grid needs step > 0 and hi >= lo")
    count = int(round((hi - lo) / step)) + 1
    scale = round(1 / step)
    base = round(lo * scale)
    return [(base + k) / scale for k in range(count)]


@dataclass(frozen=True)
class SweepRow:
    lam: float
    precision: float
    recall: float
    f1: float
    mae_all: float
    n_pred: int


def search_lambda(val_images, val_annotations, ac_masks, params, grid=None,
                  mirp_cfg: MirpConfig = MirpConfig(), map_fn=map):
    """Run full detection on the validation images for every lambda in the
    grid and return ``(best_lambda, rows)``.

    ``val_images`` / ``ac_masks`` are parallel sequences and
    ``val_annotations`` the matching ground-truth records. The best lambda
    maximizes F1 under the point criterion; ties go to the largest lambda.
    ``map_fn`` may be a pool's ordered map; results are reduced by grid index.
    """
    from .pipeline import detect_record

    images, masks, gts = list(val_images), list(ac_masks), list(val_annotations)
    if not images:
        raise ValueError("empty validation set")
    if not len(images) == len(masks) == len(gts):
        raise ValueError("images, AC masks and annotations differ in length")
    grid = lambda_grid() if grid is None else list(grid)
    gt_map = {r.image_id: r for r in gts}
    ids = [r.image_id for r in gts]

    def evaluate(lam):
        cfg = replace(mirp_cfg, lam=lam)
        preds = {r.image_id: detect_record(r.image_id, g, m, params, cfg) for g, m, r in zip(images, masks, gts)}
        rep = evaluate_detections(preds, gt_map, [POINT], ids)
        c = rep.criteria[POINT.name]
        return SweepRow(lam, c.precision, c.recall, c.f1, rep.mae_all, sum(len(p.boxes) for p in preds.values()))

    rows = list(map_fn(evaluate, grid))
    best = max(rows, key=lambda r: (r.f1, r.lam))
    return best.lam, rows


def sweep_items(best: float, rows) -> list[tuple[str, object]]:
    items = [("best_lambda", best), ("evaluations", len(rows))]
    for r in rows:
        tag = f"lambda_{r.lam:.2f}"
        items += [(f"{tag}.precision_point", r.precision), (f"{tag}.recall_point", r.recall),
                  (f"{tag}.f1_point", r.f1), (f"{tag}.mae_all", r.mae_all), (f"{tag}.n_pred", r.n_pred)]
    return items
