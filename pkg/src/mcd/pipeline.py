"""
End-to-end composition: FoF -> MiRP -> classifier, and the repeated-split
experiment comparing MCD with the threshold baselines.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import BaselineConfig, detect_threshold_with_areas
from .boxes import CandidateBox
from .evaluation import CRITERIA, evaluate_detections, segmentation_summary, split_corpus
from .fof import I2ACPConfig, SegmenterSpec, field_of_focus
from .formats import AnnotationRecord
from .mirp import MirpConfig, propose
from .san.training import TrainConfig, build_training_set, classify, train
from .tuning import lambda_grid, search_lambda

log = logging.getLogger(__name__)

CELL_THRESHOLD = 0.5
# lambda used to mine hard negatives while training; the low end of the
# search grid, so the classifier sees every candidate it may be asked about
TRAIN_LAMBDA = 0.7


def detect(g, ac_mask, params, cfg: MirpConfig = MirpConfig()) -> list[tuple[CandidateBox, float]]:
    """MiRP proposals kept when the classifier's cell probability exceeds 0.5."""
    return [(b, p) for b, p in classify(params, g, propose(g, ac_mask, cfg)) if p > CELL_THRESHOLD]


def boxes_record(image_id: str, boxes, scores=None) -> AnnotationRecord:
    """Detection record; points are the box centres."""
    boxes = list(boxes)
    points = [b.center for b in boxes]
    return AnnotationRecord(image_id, points, boxes, None if scores is None else list(scores))


def detect_record(image_id: str, g, ac_mask, params, cfg: MirpConfig = MirpConfig()) -> AnnotationRecord:
    found = detect(g, ac_mask, params, cfg)
    return boxes_record(image_id, [b for b, _ in found], [p for _, p in found])


def baseline_record(image_id: str, g, ac_mask, cfg: BaselineConfig) -> AnnotationRecord:
    """Threshold detections scored by component area, so matching order is
    deterministic for them too."""
    boxes, areas = detect_threshold_with_areas(g, ac_mask, cfg)
    return boxes_record(image_id, boxes, [float(a) for a in areas])


@dataclass
class ExperimentConfig:
    repetitions: int = 5
    fractions: tuple = (0.4, 0.1, 0.5)
    seed: int = 0
    train: TrainConfig = TrainConfig()
    mirp: MirpConfig = MirpConfig()
    fof: I2ACPConfig = I2ACPConfig()
    segmenter: SegmenterSpec = SegmenterSpec()
    grid: tuple = tuple(lambda_grid())
    baseline_s_min: tuple = (5, 4, 3, 2, 1)
    train_lambda: float = TRAIN_LAMBDA


@dataclass
class SplitResult:
    repetition: int
    train_ids: list
    val_ids: list
    test_ids: list
    best_lambda: float
    sweep: list
    history: list
    reports: dict  # method label -> EvalReport on the test split
    train_seconds: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seg_iou: float
    seg_dice: float
    splits: list = field(default_factory=list)

    @property
    def methods(self) -> list[str]:
        return list(self.splits[0].reports) if self.splits else []

    def mean(self, method: str, key: str, criterion: str | None = None) -> float:
        """Mean over splits of ``mae_all`` or of a per-criterion field."""
        vals = []
        for s in self.splits:
            rep = s.reports[method]
            vals.append(rep.mae_all if criterion is None else getattr(rep.criteria[criterion], key))
        return float(np.mean(vals))

    def std(self, method: str, key: str, criterion: str | None = None) -> float:
        vals = []
        for s in self.splits:
            rep = s.reports[method]
            vals.append(rep.mae_all if criterion is None else getattr(rep.criteria[criterion], key))
        return float(np.std(vals))


def compute_ac_masks(images, ids, fof_cfg: I2ACPConfig = I2ACPConfig(),
                     spec: SegmenterSpec = SegmenterSpec(), map_fn=map):
    return list(map_fn(lambda a: field_of_focus(a[0], fof_cfg, spec, a[1]), zip(images, ids)))


def run_experiment(ids, images, gt_records, gt_ac_masks=None, cfg: ExperimentConfig = ExperimentConfig(),
                   map_fn=map, on_split=None) -> ExperimentResult:
    """Repeated train/val/test protocol.

    Per repetition: split, train the classifier on the train split (early
    stopping on the val split), pick lambda on the val split, then evaluate
    MCD and every threshold baseline on the test split. AC masks come from
    the configured FoF segmenter; when ``gt_ac_masks`` is given their
    agreement with it is summarized as segmentation IoU / Dice.
    """
    ids = list(ids)
    images = list(images)
    gts = dict(zip(ids, gt_records))
    index = {k: i for i, k in enumerate(ids)}
    t0 = time.perf_counter()
    acs = compute_ac_masks(images, ids, cfg.fof, cfg.segmenter, map_fn)
    seg_iou = seg_dice = float("nan")
    if gt_ac_masks is not None:
        seg_iou, seg_dice, _ = segmentation_summary(zip(acs, gt_ac_masks))
    log.info("field of focus on %d images: %.1fs", len(ids), time.perf_counter() - t0)

    baselines = [BaselineConfig(method=m, s_min=s, s_max=cfg.mirp.s_max, box_w=cfg.mirp.box_w,
                                box_h=cfg.mirp.box_h, connectivity=cfg.mirp.connectivity)
                 for m in ("otsu", "isodata") for s in cfg.baseline_s_min]
    baseline_preds = {}
    for b in baselines:
        recs = map_fn(lambda k: baseline_record(k, images[index[k]], acs[index[k]], b), ids)
        baseline_preds[b.label] = {r.image_id: r for r in recs}

    result = ExperimentResult(cfg, seg_iou, seg_dice)
    train_mirp = replace(cfg.mirp, lam=cfg.train_lambda)
    criteria = list(CRITERIA)
    for rep in range(cfg.repetitions):
        tr, va, te = split_corpus(ids, cfg.fractions, cfg.seed, rep)
        rng = np.random.default_rng([cfg.seed, rep, 2])

        def patches(part):
            return build_training_set([images[index[k]] for k in part], [acs[index[k]] for k in part],
                                      [gts[k] for k in part], train_mirp, cfg.train, rng)

        train_set, val_set = patches(tr), patches(va)
        t1 = time.perf_counter()
        params, history = train(train_set, val_set, replace(cfg.train, seed=cfg.train.seed + rep))
        train_seconds = time.perf_counter() - t1
        best, sweep = search_lambda([images[index[k]] for k in va], [gts[k] for k in va],
                                    [acs[index[k]] for k in va], params, cfg.grid, cfg.mirp, map_fn)
        mirp_best = replace(cfg.mirp, lam=best)
        mcd = {r.image_id: r for r in map_fn(
            lambda k: detect_record(k, images[index[k]], acs[index[k]], params, mirp_best), te)}
        test_gts = {k: gts[k] for k in te}
        reports = {lab: evaluate_detections(p, test_gts, criteria, te) for lab, p in baseline_preds.items()}
        reports["MCD"] = evaluate_detections(mcd, test_gts, criteria, te)
        split = SplitResult(rep, tr, va, te, best, sweep, history, reports, train_seconds)
        result.splits.append(split)
        log.info("split %d: %d epochs in %.1fs, lambda %.2f, MCD F1_point %.4f", rep, len(history),
                 train_seconds, best, reports["MCD"].criteria["point"].f1)
        if on_split is not None:
            on_split(split)
    return result


def summary_items(res: ExperimentResult) -> list[tuple[str, object]]:
    n = sum(len(p) for p in (res.splits[0].train_ids, res.splits[0].val_ids, res.splits[0].test_ids)) \
        if res.splits else 0
    items = [("images", n), ("repetitions", len(res.splits)), ("seg.iou", res.seg_iou), ("seg.dice", res.seg_dice)]
    for s in res.splits:
        items.append((f"split{s.repetition}.lambda", s.best_lambda))
        items.append((f"split{s.repetition}.epochs", len(s.history)))
    for m in res.methods:
        key = m.replace(" ", "")
        items.append((f"{key}.mae_all", res.mean(m, "mae_all")))
        for c in CRITERIA:
            for f in ("precision", "recall", "f1", "mae_c"):
                items.append((f"{key}.{f}_{c}", res.mean(m, f, c)))
    return items
