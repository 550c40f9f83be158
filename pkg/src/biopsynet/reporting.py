"""Evaluation report files: delimited tables, a JSON summary, and rendered
figures. The metrics module stays pure; everything file- or figure-shaped
lives here."""

import json
import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import CLASS_NAMES
from .metrics import EvalReport


def _atomic_text(path, text: str) -> None:
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def write_confusion_csv(path, matrix) -> None:
    lines = ["true\\predicted," + ",".join(CLASS_NAMES)]
    for i, name in enumerate(CLASS_NAMES):
        lines.append(name + "," + ",".join(str(int(v)) for v in matrix[i]))
    _atomic_text(path, "\n".join(lines) + "\n")


def write_per_class_csv(path, report: EvalReport) -> None:
    """Per-class precision/recall/f1-score/support plus aggregate rows."""
    s = report.summary
    rows = [["class", "precision", "recall", "f1-score", "support"]]
    for i, name in enumerate(CLASS_NAMES):
        rows.append([name, f"{s.precision[i]:.6f}", f"{s.recall[i]:.6f}",
                     f"{s.f1[i]:.6f}", str(int(s.support[i]))])
    total = int(s.support.sum())
    rows.append(["micro", f"{s.micro_precision:.6f}", f"{s.micro_recall:.6f}",
                 f"{s.micro_f1:.6f}", str(total)])
    rows.append(["macro", f"{s.macro_precision:.6f}", f"{s.macro_recall:.6f}",
                 f"{s.macro_f1:.6f}", str(total)])
    rows.append(["accuracy", "", "", f"{s.accuracy:.6f}", str(total)])
    _atomic_text(path, "\n".join(",".join(r) for r in rows) + "\n")


def write_roc_csv(path, report: EvalReport) -> None:
    """ROC points for external plotting: one row per (curve, threshold)."""
    rows = [["curve", "threshold", "fpr", "tpr", "auc"]]

    def _curve_rows(name, curve):
        for t, fp, tp in zip(curve.thresholds, curve.fpr, curve.tpr):
            if math.isnan(t):
                thr = ""  # averaged curves carry no thresholds
            elif math.isinf(t):
                thr = "inf"
            else:
                thr = f"{t:.9g}"
            rows.append([name, thr, f"{fp:.9f}", f"{tp:.9f}", f"{curve.auc:.9f}"])

    for i, name in enumerate(CLASS_NAMES):
        _curve_rows(name, report.per_class_roc[i])
    _curve_rows("micro", report.micro_roc)
    _curve_rows("macro", report.macro_roc)
    _atomic_text(path, "\n".join(",".join(r) for r in rows) + "\n")


def report_to_dict(report: EvalReport) -> dict:
    s = report.summary
    return {
        "accuracy": s.accuracy,
        "per_class": {
            name: {
                "precision": float(s.precision[i]),
                "recall": float(s.recall[i]),
                "f1": float(s.f1[i]),
                "support": int(s.support[i]),
                "auc": report.per_class_roc[i].auc,
            }
            for i, name in enumerate(CLASS_NAMES)
        },
        "micro": {"precision": s.micro_precision, "recall": s.micro_recall,
                  "f1": s.micro_f1, "auc": report.micro_roc.auc},
        "macro": {"precision": s.macro_precision, "recall": s.macro_recall,
                  "f1": s.macro_f1, "auc": report.macro_roc.auc},
        "confusion": [[int(v) for v in row] for row in report.matrix],
    }


def write_metrics_json(path, payload: dict) -> None:
    _atomic_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def plot_roc(path, report: EvalReport, title: str = "ROC curves") -> None:
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    for i, name in enumerate(CLASS_NAMES):
        curve = report.per_class_roc[i]
        ax.plot(curve.fpr, curve.tpr, label=f"{name} (AUC {curve.auc:.3f})")
    ax.plot(report.micro_roc.fpr, report.micro_roc.tpr, linestyle="--",
            label=f"micro-average (AUC {report.micro_roc.auc:.3f})")
    ax.plot(report.macro_roc.fpr, report.macro_roc.tpr, linestyle="--",
            label=f"macro-average (AUC {report.macro_roc.auc:.3f})")
    ax.plot([0, 1], [0, 1], color="gray", linewidth=0.8, linestyle=":")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    tmp = os.fspath(path) + ".tmp.png"
    fig.savefig(tmp, dpi=120)
    plt.close(fig)
    os.replace(tmp, path)


def plot_history(path, losses, accuracies) -> None:
    epochs = range(1, len(losses) + 1)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
    ax1.plot(epochs, losses)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax2.plot(epochs, accuracies)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("training accuracy")
    ax2.set_ylim(0, 1.02)
    fig.tight_layout()
    tmp = os.fspath(path) + ".tmp.png"
    fig.savefig(tmp, dpi=120)
    plt.close(fig)
    os.replace(tmp, path)


def write_history_csv(path, losses, accuracies) -> None:
    rows = [["epoch", "loss", "accuracy"]]
    for i, (lo, acc) in enumerate(zip(losses, accuracies), start=1):
        rows.append([str(i), f"{lo:.9f}", f"{acc:.9f}"])
    _atomic_text(path, "\n".join(",".join(r) for r in rows) + "\n")


def write_cluster_summary(path, records) -> None:
    """Per-class useful/not-useful counts and percentages, plus a total row."""
    rows = [["class", "total", "useful", "useful_pct", "not_useful",
             "not_useful_pct"]]

    def _pct(n, total):
        return f"{(100.0 * n / total):.1f}" if total else "0.0"

    def _row(name, recs):
        total = len(recs)
        useful = sum(1 for r in recs if r.cluster == "useful")
        rows.append([name, str(total), str(useful), _pct(useful, total),
                     str(total - useful), _pct(total - useful, total)])

    for name in CLASS_NAMES:
        _row(name, [r for r in records if r.class_label == name])
    _row("Total", list(records))
    _atomic_text(path, "\n".join(",".join(r) for r in rows) + "\n")
