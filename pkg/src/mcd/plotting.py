"""Figures written next to report files (non-interactive Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_lambda_sweep(rows, best: float, path, title: str = "lambda sweep (validation)") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    lams = [r.lam for r in rows]
    ax.plot(lams, [r.precision for r in rows], label="precision")
    ax.plot(lams, [r.recall for r in rows], label="recall")
    ax.plot(lams, [r.f1 for r in rows], label="F1", linewidth=2)
    ax.axvline(best, color="k", linestyle=":", label=f"selected {best:.2f}")
    ax.set_xlabel("lambda")
    ax.set_ylabel("point criterion")
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.legend(loc="lower left")
    return _save(fig, path)


def plot_training(history, path, title: str = "training") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [h[0] for h in history]
    ax.plot(epochs, [h[1] for h in history], label="train")
    ax.plot(epochs, [h[2] for h in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_threshold_tradeoff(res, path, criterion: str = "point") -> Path:
    """Precision and recall of each threshold baseline against s_min, with
    MCD as horizontal reference lines."""
    fig, ax = plt.subplots(figsize=(6, 4))
    s_vals = list(res.config.baseline_s_min)
    for method, style in (("Otsu", "-o"), ("Isodata", "--s")):
        labels = [f"{method}(s_min={s})" for s in s_vals]
        ax.plot(s_vals, [res.mean(lab, "precision", criterion) for lab in labels], style, label=f"{method} precision")
        ax.plot(s_vals, [res.mean(lab, "recall", criterion) for lab in labels], style, label=f"{method} recall")
    ax.axhline(res.mean("MCD", "f1", criterion), color="k", linestyle=":", label="MCD F1")
    ax.set_xlabel("s_min")
    ax.set_ylabel(criterion)
    ax.set_ylim(0, 1.02)
    ax.invert_xaxis()
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_f1_comparison(res, path) -> Path:
    methods = res.methods
    fig, ax = plt.subplots(figsize=(8, 4))
    xs = range(len(methods))
    width = 0.27
    for k, c in enumerate(("point", "iou10", "iou30")):
        ax.bar([x + (k - 1) * width for x in xs], [res.mean(m, "f1", c) for m in methods], width, label=c)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(methods, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("F1")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
