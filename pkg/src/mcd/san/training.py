"""Patch sampling, mini-batch SGD with early stopping, and box classification."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..boxes import CandidateBox, centered_box
from ..errors import TrainingDiverged
from ..imagecore import check_gray, check_mask
from ..mirp import MirpConfig, propose
from . import network as N

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    n_pos: int = 1
    n_neg: int = 5
    patience: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-2
    momentum: float = 0.9
    max_epochs: int = 500
    dropout_rate: float = 0.5
    seed: int = 0
    min_delta: float = 1e-6

    def __post_init__(self):
        if not 1 <= self.n_pos < self.n_neg:
            raise ValueError("sampling ratio needs 1 <= n_pos < n_neg")
        if min(self.patience, self.batch_size, self.max_epochs) < 1:
            raise ValueError("patience, batch_size and max_epochs must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")


@dataclass
class PatchSet:
    """``x``: (N, h, w) intensities in [0, 1]; ``y``: 1 = cell, 0 = background."""

    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    @staticmethod
    def concat(sets, h=10, w=10) -> "PatchSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return PatchSet(np.zeros((0, h, w)), np.zeros(0, dtype=np.int64))
        return PatchSet(np.concatenate([s.x for s in sets]), np.concatenate([s.y for s in sets]))


def crop(g, box: CandidateBox) -> np.ndarray:
    return g[box.y_tl:box.y_br, box.x_tl:box.x_br].astype(np.float64) / 255.0


def _overlaps_any(box: CandidateBox, others) -> bool:
    return any(box.x_tl < o.x_br and o.x_tl < box.x_br and box.y_tl < o.y_br and o.y_tl < box.y_br
               for o in others)


def sample_image_patches(g, ac_mask, gt_boxes, mirp_cfg: MirpConfig, train_cfg: TrainConfig, rng,
                         image_id: str = "?") -> PatchSet:
    g, ac = check_gray(g), check_mask(ac_mask)
    height, width = g.shape
    w, h = mirp_cfg.box_w, mirp_cfg.box_h
    positives = [crop(g, b) for b in gt_boxes]
    needed = len(gt_boxes) * train_cfg.n_neg // train_cfg.n_pos
    negatives = []
    if needed:
        hard = [b for b in propose(g, ac, mirp_cfg) if not _overlaps_any(b, gt_boxes)]
        if len(hard) > needed:
            hard = [hard[i] for i in np.sort(rng.choice(len(hard), needed, replace=False))]
        negatives = [crop(g, b) for b in hard]
        ys, xs = np.nonzero(ac)
        if xs.size == 0:
            log.warning("%s: empty AC mask, no negatives sampled", image_id)
            negatives = []
        else:
            taken = set(b.coords for b in hard)
            tries = 0
            while len(negatives) < needed and tries < 50 * needed:
                tries += 1
                k = int(rng.integers(xs.size))
                box = centered_box(xs[k], ys[k], w, h, width, height)
                if box.coords in taken or _overlaps_any(box, gt_boxes):
                    continue
                taken.add(box.coords)
                negatives.append(crop(g, box))
            if len(negatives) < needed:
                log.warning("%s: only %d of %d negatives found", image_id, len(negatives), needed)
    x = np.array(positives + negatives, dtype=np.float64).reshape(-1, h, w)
    y = np.array([1] * len(positives) + [0] * len(negatives), dtype=np.int64)
    return PatchSet(x, y)


def build_training_set(images, ac_masks, gt_records, mirp_cfg: MirpConfig = MirpConfig(),
                       train_cfg: TrainConfig = TrainConfig(), rng=None) -> PatchSet:
    """Positives at every ground-truth box; per image ``n_neg / n_pos``
    negatives per positive, hard negatives (unmatched proposals) first, then
    random AC positions clear of every ground-truth box."""
    if rng is None:
        rng = np.random.default_rng(train_cfg.seed)
    sets = [
        sample_image_patches(g, ac, rec.boxes, mirp_cfg, train_cfg, rng, rec.image_id)
        for g, ac, rec in zip(images, ac_masks, gt_records)
    ]
    return PatchSet.concat(sets, mirp_cfg.box_h, mirp_cfg.box_w)


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a decrease of at
    least ``min_delta`` in the monitored loss."""

    def __init__(self, patience: int, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = None
        self.stale = 0

    def step(self, epoch: int, value: float) -> bool:
        """Record one epoch; return True when training should stop."""
        if value < self.best - self.min_delta:
            self.best, self.best_epoch, self.stale = value, epoch, 0
        else:
            self.stale += 1
        return self.stale >= self.patience

    @property
    def improved(self) -> bool:
        return self.stale == 0


def evaluate_loss(params, data: PatchSet, arch: N.ArchConfig, batch_size: int = 512) -> float:
    total = 0.0
    for s in range(0, len(data), batch_size):
        probs, _ = N.forward(params, data.x[s:s + batch_size, None], "eval", arch=arch)
        total += N.loss(probs, data.y[s:s + batch_size]) * len(probs)
    return total / len(data)


def train(train_set: PatchSet, val_set: PatchSet, cfg: TrainConfig = TrainConfig(), arch=None,
          on_epoch=None):
    """Returns ``(params, log)`` where ``log`` holds ``(epoch, train_loss, val_loss)``
    rows and ``params`` are those of the best validation epoch."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if arch is None:
        arch = N.ArchConfig(patch_h=train_set.x.shape[1], patch_w=train_set.x.shape[2],
                            dropout=cfg.dropout_rate)
    params = N.init_params(arch, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    velocity = {k: np.zeros_like(params[k]) for k in N.trainable(params)}
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    best = copy.deepcopy(params)
    history = []
    n = len(train_set)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            probs, cache = N.forward(params, train_set.x[idx, None], "train", rng=rng, arch=arch,
                                     dropout=cfg.dropout_rate)
            batch_loss = N.loss(probs, train_set.y[idx])
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
            total += batch_loss * len(idx)
            grads = N.backward(cache, train_set.y[idx])
            N.update_running_stats(params, cache, arch.bn_momentum)
            for k, g in grads.items():
                velocity[k] = cfg.momentum * velocity[k] + g
                params[k] = params[k] - cfg.learning_rate * velocity[k]
        val_loss = evaluate_loss(params, val_set, arch)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        history.append((epoch, total / n, val_loss))
        stop = stopper.step(epoch, val_loss)
        if stopper.improved:
            best = copy.deepcopy(params)
        log.debug("epoch %d train %.5f val %.5f", epoch, total / n, val_loss)
        if on_epoch is not None:
            on_epoch(epoch, total / n, val_loss)
        if stop:
            log.info("early stop at epoch %d (best %d, val %.5f)", epoch, stopper.best_epoch, stopper.best)
            break
    return best, history


def format_log(history) -> str:
    return "".join(f"{e},{tl!r},{vl!r}\n" for e, tl, vl in history)


def accuracy(params, data: PatchSet, arch=None) -> float:
    p = N.predict_proba(params, data.x, arch)
    return float(np.mean((p > 0.5).astype(int) == data.y))


def classify(params, g, boxes, arch=None) -> list[tuple[CandidateBox, float]]:
    """Cell probability for every box; a box is a cell iff probability > 0.5."""
    if not boxes:
        return []
    g = check_gray(g)
    patches = np.stack([crop(g, b) for b in boxes])
    probs = N.predict_proba(params, patches, arch)
    return [(b, float(p)) for b, p in zip(boxes, probs)]
