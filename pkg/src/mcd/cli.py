"""
``mcd`` command line.

Exit status: 0 success, 1 usage error, 2 data error (missing or ill-formed
input), 3 runtime failure (degenerate image, divergence). Every subcommand
takes ``--config FILE`` with ``key=value`` lines whose keys are the long
flag names (``merge-ratio=0.7``); flags given on the command line win.
``MCD_LOG`` sets the log level (``DEBUG``, ``INFO``, ``WARNING``...).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .errors import DataError, MCDError, PipelineError
from .evaluation import CRITERIA, evaluate_detections, segmentation_summary, split_corpus
from .fof import EXTERNAL_MASK, FLOOD_FILL, I2ACPConfig, SegmenterSpec, field_of_focus
from .formats import read_annotations, read_kv, write_annotations, write_kv
from .imageio import RasterError, list_images, read_gray, read_mask, write_gray, write_mask
from .mirp import MirpConfig

log = logging.getLogger("mcd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers

def _split_arg(text: str) -> tuple:
    try:
        parts = [float(v) for v in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad split {text!r}; expected e.g. 40,10,50")
    if len(parts) != 3 or any(p < 0 for p in parts) or sum(parts) <= 0:
        raise argparse.ArgumentTypeError(f"bad split {text!r}; expected three non-negative numbers")
    total = sum(parts)
    return tuple(p / total for p in parts)


def _criteria_arg(text: str) -> list:
    names = [c.strip() for c in str(text).split(",") if c.strip()]
    bad = [c for c in names if c not in CRITERIA]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown criteria {bad}; choose from {list(CRITERIA)}")
    return names


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


class _Pool:
    """Ordered map over a worker pool (or inline when ``jobs == 1``)."""

    def __init__(self, jobs: int):
        self.jobs = max(1, int(jobs))
        self.exe = ThreadPoolExecutor(self.jobs) if self.jobs > 1 else None

    def map(self, fn, items):
        if self.exe is None:
            return list(map(fn, items))
        return list(self.exe.map(fn, items))

    def close(self):
        if self.exe is not None:
            self.exe.shutdown()


def _image_index(directory) -> dict:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"image directory not found: {directory}")
    paths = list_images(directory)
    if not paths:
        raise DataError(f"no images found in {directory}")
    return {p.stem: p for p in paths}


def _mask_path(directory, stem) -> Path:
    directory = Path(directory)
    for suffix in (".png", ".pgm", ".bmp", ".tif", ".tiff"):
        p = directory / (stem + suffix)
        if p.exists():
            return p
    raise DataError(f"no mask for {stem} in {directory}")


def _load_ac(directory, stem, shape):
    return read_mask(_mask_path(directory, stem), shape)


def _mirp_cfg(args, lam=None) -> MirpConfig:
    return MirpConfig(lam=args.lam if lam is None else lam, s_min=args.s_min, s_max=args.s_max,
                      box_w=args.box_size, box_h=args.box_size, ac_rule=args.ac_rule)


def _companion(path, suffix) -> Path:
    path = Path(path)
    alt = path.with_suffix(suffix)
    return alt if alt != path else path.with_name(path.name + suffix)


def _corpus_parts(root):
    from .synth import Corpus

    root = Path(root)
    if not (root / "images").is_dir():
        raise DataError(f"{root} is not a corpus directory (no images/)")
    corpus = Corpus.open(root)
    if not corpus.ids:
        raise DataError(f"corpus {root} has no images")
    gts = corpus.annotations()
    missing = [k for k in corpus.ids if k not in gts]
    if missing:
        raise DataError(f"corpus {root}: no annotations for {missing[:3]}")
    return corpus, gts


def _corpus_acs(corpus, ids, images, args, pool):
    """AC masks from ``--ac-masks`` if given, otherwise the flood-fill FoF."""
    if args.ac_masks:
        return [_load_ac(args.ac_masks, k, g.shape) for k, g in zip(ids, images)]
    cfg = I2ACPConfig(merge_ratio=args.merge_ratio)
    return pool.map(lambda a: field_of_focus(a[0], cfg), list(zip(images, ids)))


# ---------------------------------------------------------------- commands

def cmd_synth(args, extra, pool):
    from .synth import SynthConfig, generate_one, write_corpus

    values = dict(extra)
    if args.seed is not None:
        values["seed"] = args.seed
    try:
        cfg = SynthConfig.from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"synth config: {exc}")
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    samples = pool.map(lambda i: generate_one(cfg, i), range(args.start, args.start + args.count))
    out = write_corpus(args.out, samples, cfg)
    print(f"wrote {len(samples)} samples to {out}")


def cmd_segment(args, extra, pool):
    index = _image_index(args.images)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.external_masks:
        spec = SegmenterSpec(EXTERNAL_MASK, {"template": args.external_masks})
    else:
        spec = SegmenterSpec(FLOOD_FILL, {"fill_holes": args.fill_holes})
    cfg = I2ACPConfig(merge_ratio=args.merge_ratio)

    def one(stem):
        m = field_of_focus(read_gray(index[stem]), cfg, spec, stem)
        write_mask(out / f"{stem}.png", m)
        return stem, int(m.sum())

    for stem, area in pool.map(one, sorted(index)):
        log.info("%s: AC area %d", stem, area)
    print(f"wrote {len(index)} masks to {out}")


def cmd_propose(args, extra, pool):
    from .mirp import propose_with_areas
    from .pipeline import boxes_record

    index = _image_index(args.images)
    cfg = _mirp_cfg(args)

    def one(stem):
        g = read_gray(index[stem])
        boxes, areas = propose_with_areas(g, _load_ac(args.ac_masks, stem, g.shape), cfg)
        return boxes_record(stem, boxes, [float(a) for a in areas])

    records = pool.map(one, sorted(index))
    write_annotations(args.out, records)
    print(f"{sum(len(r.boxes) for r in records)} proposals in {len(records)} images -> {args.out}")


def _train_cfg(args):
    from .san.training import TrainConfig

    return TrainConfig(patience=args.patience, batch_size=args.batch_size, learning_rate=args.learning_rate,
                       max_epochs=args.max_epochs, seed=args.seed, n_neg=args.neg_ratio)


def cmd_train(args, extra, pool):
    import numpy as np

    from .plotting import plot_training
    from .san import checkpoint
    from .san.training import build_training_set, format_log, train

    corpus, gts = _corpus_parts(args.corpus)
    tr, va, _ = split_corpus(corpus.ids, args.split, args.seed, args.repetition)
    if not tr or not va:
        raise UsageError("split leaves the train or validation part empty")
    tcfg = _train_cfg(args)
    mcfg = _mirp_cfg(args, args.train_lambda)
    rng = np.random.default_rng([args.seed, args.repetition, 2])

    def patches(part):
        images = pool.map(corpus.image, part)
        acs = _corpus_acs(corpus, part, images, args, pool)
        return build_training_set(images, acs, [gts[k] for k in part], mcfg, tcfg, rng)

    train_set, val_set = patches(tr), patches(va)
    log.info("training on %d patches (%d cells), validating on %d", len(train_set), int(train_set.y.sum()),
             len(val_set))
    params, history = train(train_set, val_set, tcfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(out, params)
    log_path = Path(args.log) if args.log else _companion(out, ".log.csv")
    log_path.write_text("epoch,train_loss,val_loss\n" + format_log(history), encoding="utf-8")
    plot_training(history, log_path.with_suffix(".png"), "classifier training")
    best = min(history, key=lambda h: h[2])
    print(f"{len(history)} epochs, best val loss {best[2]:.6g} at epoch {best[0]} -> {out}")


def _load_model(path):
    from .san import checkpoint
    from .san.network import arch_from_params, check_shapes

    params = checkpoint.load(path)
    try:
        check_shapes(params, arch_from_params(params))
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: not a classifier checkpoint ({exc})") from exc
    return params


def cmd_detect(args, extra, pool):
    from .pipeline import detect_record

    index = _image_index(args.images)
    params = _load_model(args.model)
    cfg = _mirp_cfg(args)

    def one(stem):
        g = read_gray(index[stem])
        return detect_record(stem, g, _load_ac(args.ac_masks, stem, g.shape), params, cfg)

    records = pool.map(one, sorted(index))
    write_annotations(args.out, records)
    print(f"{sum(len(r.boxes) for r in records)} detections in {len(records)} images -> {args.out}")


def _gt_sources(gt):
    gt = Path(gt)
    if (gt / "annotations").is_dir():
        return gt / "annotations", (gt / "masks_ac" if (gt / "masks_ac").is_dir() else None)
    return gt, None


def cmd_eval(args, extra, pool):
    from .report import eval_report_text, segmentation_table

    if not args.pred and not args.masks:
        raise UsageError("eval needs --pred and/or --masks")
    ann_path, gt_mask_dir = _gt_sources(args.gt)
    if args.gt_masks:
        gt_mask_dir = Path(args.gt_masks)
    text, items = [], []
    if args.pred:
        gts = {r.image_id: r for r in read_annotations(ann_path)}
        if not gts:
            raise DataError(f"no ground-truth records under {args.gt}")
        preds = {}
        for r in read_annotations(args.pred):
            preds[r.image_id] = r
        unknown = sorted(set(preds) - set(gts))
        if unknown:
            raise DataError(f"predictions for images without ground truth: {unknown[:3]}")
        rep = evaluate_detections(preds, gts, args.criteria)
        text.append(eval_report_text(rep, Path(args.pred).stem))
        items += rep.as_items()
        for c in args.criteria:
            m = rep.criteria[c]
            print(f"{c}: P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f} MAE_c={m.mae_c:.4f}")
        print(f"MAE_all={rep.mae_all:.4f}")
    if args.masks:
        if gt_mask_dir is None:
            raise UsageError("segmentation eval needs --gt-masks or a corpus root as --gt")
        stems = sorted(p.stem for p in list_images(args.masks))
        if not stems:
            raise DataError(f"no masks found in {args.masks}")
        pairs = []
        for s in stems:
            pred = read_mask(_mask_path(args.masks, s))
            pairs.append((pred, read_mask(_mask_path(gt_mask_dir, s), pred.shape)))
        iou, dice, _ = segmentation_summary(pairs)
        text.append("\n" + segmentation_table([(Path(args.masks).name, iou, dice)]))
        items += [("seg.images", len(pairs)), ("seg.iou", iou), ("seg.dice", dice)]
        print(f"segmentation: IoU={iou:.4f} Dice={dice:.4f} over {len(pairs)} masks")
    if args.report:
        report = Path(args.report)
        report.parent.mkdir(parents=True, exist_ok=True)
        if report.suffix == ".kv":
            write_kv(report, items)
            _companion(report, ".txt").write_text("".join(text), encoding="utf-8")
        else:
            report.write_text("".join(text), encoding="utf-8")
            write_kv(_companion(report, ".kv"), items)


def cmd_search_lambda(args, extra, pool):
    from .plotting import plot_lambda_sweep
    from .report import _table, pct
    from .tuning import lambda_grid, search_lambda, sweep_items

    corpus, gts = _corpus_parts(args.corpus)
    params = _load_model(args.model)
    _, va, _ = split_corpus(corpus.ids, args.split, args.seed, args.repetition)
    if not va:
        raise UsageError("validation split is empty")
    images = pool.map(corpus.image, va)
    acs = _corpus_acs(corpus, va, images, args, pool)
    best, rows = search_lambda(images, [gts[k] for k in va], acs, params,
                               lambda_grid(args.lambda_lo, args.lambda_hi, args.lambda_step),
                               _mirp_cfg(args, 1.0), pool.map)
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    write_kv(report, sweep_items(best, rows), comment=f"lambda sweep on {len(va)} validation images")
    table = _table(["lambda", "Precision", "Recall", "F1", "MAE_all", "boxes"],
                   [(f"{r.lam:.2f}", pct(r.precision), pct(r.recall), pct(r.f1), f"{r.mae_all:.2f}", r.n_pred)
                    for r in rows])
    _companion(report, ".txt").write_text(f"selected lambda: {best:.2f}\n\n{table}", encoding="utf-8")
    plot_lambda_sweep(rows, best, _companion(report, ".png"))
    print(f"best lambda {best:.2f} over {len(rows)} evaluations -> {report}")


def cmd_overlay(args, extra, pool):
    from .report import overlay

    g = read_gray(args.image)
    stem = args.image_id or Path(args.image).stem

    def boxes_of(path):
        for r in read_annotations(path):
            if r.image_id == stem:
                return r.boxes
        return []

    pred = boxes_of(args.pred)
    gt = boxes_of(args.gt) if args.gt else []
    write_gray(args.out, overlay(g, pred, gt, args.pred_level, args.gt_level))
    print(f"{len(pred)} predicted and {len(gt)} ground-truth boxes drawn -> {args.out}")


def cmd_experiment(args, extra, pool):
    from .pipeline import ExperimentConfig, run_experiment, summary_items
    from .plotting import plot_f1_comparison, plot_lambda_sweep, plot_threshold_tradeoff, plot_training
    from .report import experiment_report_text

    corpus, gts = _corpus_parts(args.corpus)
    ids = corpus.ids
    images = pool.map(corpus.image, ids)
    gt_acs = [corpus.ac_mask(k) for k in ids] if (corpus.root / "masks_ac").is_dir() else None
    cfg = ExperimentConfig(
        repetitions=args.repetitions, fractions=args.split, seed=args.seed, train=_train_cfg(args),
        mirp=_mirp_cfg(args, 1.0), fof=I2ACPConfig(merge_ratio=args.merge_ratio), train_lambda=args.train_lambda,
    )
    res = run_experiment(ids, images, [gts[k] for k in ids], gt_acs, cfg, pool.map)
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(experiment_report_text(res), encoding="utf-8")
    write_kv(_companion(report, ".kv"), summary_items(res))
    stem = report.with_suffix("")
    plot_threshold_tradeoff(res, f"{stem}_tradeoff.png")
    plot_f1_comparison(res, f"{stem}_f1.png")
    for s in res.splits:
        plot_lambda_sweep(s.sweep, s.best_lambda, f"{stem}_split{s.repetition}_lambda.png")
        plot_training(s.history, f"{stem}_split{s.repetition}_training.png")
    print(report.read_text(encoding="utf-8"))


# ---------------------------------------------------------------- parser

def _common(p, jobs=True):
    p.add_argument("--config", help="key=value file; keys are long flag names")
    if jobs:
        p.add_argument("--jobs", type=int, default=1, help="worker threads for per-image work")


def _mirp_flags(p, lam=True):
    if lam:
        p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="threshold factor")
    p.add_argument("--s-min", type=int, default=1)
    p.add_argument("--s-max", type=int, default=25)
    p.add_argument("--box-size", type=int, default=10)
    p.add_argument("--ac-rule", choices=("centroid", "clip"), default="centroid")


def _split_flags(p):
    p.add_argument("--split", type=_split_arg, default=(0.4, 0.1, 0.5), help="train,val,test percentages")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repetition", type=int, default=0, help="split repetition index")


def _ac_flags(p):
    p.add_argument("--ac-masks", help="precomputed AC masks; default: flood-fill field of focus")
    p.add_argument("--merge-ratio", type=float, default=0.65)


def _train_flags(p):
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--patience", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--learning-rate", type=float, default=1e-2)
    p.add_argument("--neg-ratio", type=int, default=5, help="negatives per positive")
    p.add_argument("--train-lambda", type=float, default=0.7, help="lambda for hard-negative proposals")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mcd", description="Minuscule cell detection in AS-OCT images.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--start", type=int, default=0, help="index of the first sample")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth, open_config=True)

    p = sub.add_parser("segment", help="anterior-chamber masks via the field of focus")
    _common(p)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--external-masks", metavar="TEMPLATE", help="path template with {stem}")
    g.add_argument("--fallback", action="store_true", help="flood-fill segmenter (default)")
    p.add_argument("--merge-ratio", type=float, default=0.65)
    p.add_argument("--no-fill-holes", dest="fill_holes", action="store_false")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("propose", help="MiRP candidate boxes")
    _common(p)
    p.add_argument("--images", required=True)
    p.add_argument("--ac-masks", required=True)
    p.add_argument("--out", required=True)
    _mirp_flags(p)
    p.set_defaults(func=cmd_propose)

    p = sub.add_parser("train", help="train the patch classifier on a corpus split")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="model checkpoint")
    p.add_argument("--log", help="training log CSV (default: next to the model)")
    _split_flags(p)
    _ac_flags(p)
    _train_flags(p)
    _mirp_flags(p, lam=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="full MCD detection")
    _common(p)
    p.add_argument("--images", required=True)
    p.add_argument("--ac-masks", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _mirp_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detections and/or AC masks")
    _common(p)
    p.add_argument("--pred", help="detection file")
    p.add_argument("--gt", required=True, help="annotation file/dir or corpus root")
    p.add_argument("--criteria", type=_criteria_arg, default=list(CRITERIA))
    p.add_argument("--report", help="text report (a .kv twin is written alongside)")
    p.add_argument("--masks", help="predicted AC masks to score")
    p.add_argument("--gt-masks", help="ground-truth AC masks (default: <gt>/masks_ac)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search-lambda", help="sweep lambda on the validation split")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report", required=True, help="key=value sweep table")
    p.add_argument("--lambda-lo", type=float, default=0.7)
    p.add_argument("--lambda-hi", type=float, default=1.0)
    p.add_argument("--lambda-step", type=float, default=0.01)
    _split_flags(p)
    _ac_flags(p)
    _mirp_flags(p, lam=False)
    p.set_defaults(func=cmd_search_lambda)

    p = sub.add_parser("overlay", help="draw predicted and ground-truth boxes")
    _common(p, jobs=False)
    p.add_argument("--image", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt")
    p.add_argument("--out", required=True)
    p.add_argument("--image-id", help="record id (default: image file stem)")
    p.add_argument("--pred-level", type=int, default=255)
    p.add_argument("--gt-level", type=int, default=0)
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("experiment", help="repeated-split comparison of MCD and threshold baselines")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--report", required=True, help="text report; .kv and figures are written alongside")
    p.add_argument("--repetitions", type=int, default=5)
    _split_flags(p)
    p.add_argument("--merge-ratio", type=float, default=0.65)
    _train_flags(p)
    _mirp_flags(p, lam=False)
    p.set_defaults(func=cmd_experiment)
    return parser


def _apply_config(parser, sub, argv):
    """Parse once to find ``--config``, load it as defaults, parse again."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args, {}
    values = read_kv(args.config)
    dests = {a.dest: a for a in sub.choices[args.command]._actions}
    options = {}
    for a in sub.choices[args.command]._actions:
        for s in a.option_strings:
            if s.startswith("--"):
                options[s[2:]] = a
    defaults, extra = {}, {}
    for key, raw in values.items():
        action = options.get(key) or options.get(key.replace("_", "-")) or dests.get(key)
        if action is None or action.dest in ("config", "help"):
            extra[key] = raw
            continue
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            flag = _bool(raw)
            defaults[action.dest] = flag if isinstance(action, argparse._StoreTrueAction) else not flag
        elif action.type is not None:
            try:
                defaults[action.dest] = action.type(raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{args.config}: bad value for {key}: {exc}")
        else:
            defaults[action.dest] = raw
    if extra and not getattr(args, "open_config", False):
        raise UsageError(f"{args.config}: unknown keys {sorted(extra)}")
    sub.choices[args.command].set_defaults(**defaults)
    return parser.parse_args(argv), extra


def _setup_logging():
    level = os.environ.get("MCD_LOG", "WARNING").strip().upper()
    value = int(level) if level.isdigit() else getattr(logging, level, None)
    if not isinstance(value, int):
        value = logging.WARNING
    logging.basicConfig(level=value, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    pool = None
    try:
        args, extra = _apply_config(parser, sub, argv)
        pool = _Pool(getattr(args, "jobs", 1))
        args.func(args, extra, pool)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, RasterError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except MCDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        # invalid parameter combinations rejected by config constructors
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    finally:
        if pool is not None:
            pool.close()


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
