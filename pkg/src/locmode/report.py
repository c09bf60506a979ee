"""Report emission: delimited tables, JSON mirrors and rendered figures.

Every writer goes through an atomic write (temp file + rename) so a
failing run never leaves partial output behind.  Figures are rendered
with the Agg backend straight to files next to the delimited output.
"""

from __future__ import annotations

import io
import json
import os
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data_io import CLASS_NAMES, MODALITY_NAMES, ModalityKind, atomic_write
from .pipeline import AblationReport

#: Report column order mirrors the result grid: overall scores first,
#: then OOF/Val per missing-modality scenario, then the feature count.
ABLATION_COLUMNS = (
    "config",
    "val",
    "val_mv",
    "acc0_oof",
    "acc0_val",
    "gyr0_oof",
    "gyr0_val",
    "mag0_oof",
    "mag0_val",
    "n_feats",
)


def _save_figure(fig, path: str | os.PathLike) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=150)
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def _row_cells(row) -> list[str]:
    def fmt(v: float) -> str:
        return f"{v:.4f}"

    cells = [row.config.to_string(), fmt(row.val), fmt(row.val_mv)]
    for m in ModalityKind:
        cells.append(fmt(row.oof.get(m, float("nan"))))
        cells.append(fmt(row.val_per_mask.get(m, float("nan"))))
    cells.append(str(row.n_features))
    return cells


def ablation_table(report: AblationReport, sep: str = "\t") -> str:
    lines = [sep.join(ABLATION_COLUMNS)]
    for row in report.sorted_rows():
        lines.append(sep.join(_row_cells(row)))
    return "\n".join(lines) + "\n"


def ablation_json(report: AblationReport) -> str:
    rows = []
    for row in report.sorted_rows():
        rows.append(
            {
                "config": row.config.to_string(),
                "val": row.val,
                "val_mv": row.val_mv,
                "oof": {MODALITY_NAMES[m] + "0": v for m, v in row.oof.items()},
                "val_per_mask": {
                    MODALITY_NAMES[m] + "0": v for m, v in row.val_per_mask.items()
                },
                "n_feats": row.n_features,
            }
        )
    return json.dumps({"k": report.k, "rows": rows}, indent=2, sort_keys=True) + "\n"


def plot_ablation_scores(report: AblationReport, path: str | os.PathLike) -> None:
    """Horizontal bars of overall Val and Val_MV per configuration."""
    rows = report.sorted_rows()[::-1]  # best on top
    names = [r.config.to_string() for r in rows]
    val = [r.val for r in rows]
    val_mv = [r.val_mv for r in rows]
    y = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(8, max(3, 0.4 * len(rows) + 1)))
    ax.barh(y + 0.2, val, height=0.4, label="Val (full fit)")
    ax.barh(y - 0.2, val_mv, height=0.4, label="Val (majority vote)")
    ax.set_yticks(y)
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xlabel("Macro F1")
    ax.set_title("Validation score per feature configuration")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    _save_figure(fig, path)


def write_ablation_report(report: AblationReport, out_dir: str | os.PathLike) -> list[Path]:
    """Emit report.tsv, report.json and the score figure; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tsv = out_dir / "report.tsv"
    js = out_dir / "report.json"
    fig = out_dir / "ablation_scores.png"
    atomic_write(tsv, ablation_table(report))
    atomic_write(js, ablation_json(report))
    plot_ablation_scores(report, fig)
    return [tsv, js, fig]


def confusion_csv(matrix: np.ndarray, classes: Sequence[int]) -> str:
    """Counts matrix as CSV; rows = true class, columns = predicted."""
    names = [CLASS_NAMES.get(int(c), str(int(c))) for c in classes]
    lines = ["true\\pred," + ",".join(names)]
    for name, row in zip(names, matrix):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def plot_confusion_matrices(
    matrices: Mapping[str, np.ndarray],
    classes: Sequence[int],
    path: str | os.PathLike,
) -> None:
    """One annotated heatmap per missing-modality scenario, side by side."""
    names = [CLASS_NAMES.get(int(c), str(int(c))) for c in classes]
    n = len(matrices)
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 4.2), squeeze=False)
    for ax, (title, cm) in zip(axes[0], matrices.items()):
        with np.errstate(invalid="ignore"):
            norm = cm / np.maximum(cm.sum(axis=1, keepdims=True), 1)
        ax.imshow(norm, cmap="Blues", vmin=0.0, vmax=1.0)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=90, fontsize=7)
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels(names, fontsize=7)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(title, fontsize=9)
        for i in range(cm.shape[0]):
            for j in range(cm.shape[1]):
                if cm[i, j]:
                    color = "white" if norm[i, j] > 0.5 else "black"
                    ax.text(j, i, str(int(cm[i, j])), ha="center", va="center",
                            fontsize=6, color=color)
    fig.tight_layout()
    _save_figure(fig, path)


def write_evaluation(
    scores: Mapping[str, float],
    matrices: Mapping[str, np.ndarray],
    classes: Sequence[int],
    out_dir: str | os.PathLike,
) -> list[Path]:
    """Emit metrics.json, per-scenario confusion CSVs and the heatmaps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    metrics = out_dir / "metrics.json"
    atomic_write(metrics, json.dumps(dict(scores), indent=2, sort_keys=True) + "\n")
    paths.append(metrics)
    for name, cm in matrices.items():
        p = out_dir / f"confusion_{name}.csv"
        atomic_write(p, confusion_csv(cm, classes))
        paths.append(p)
    fig = out_dir / "confusion_matrices.png"
    plot_confusion_matrices(matrices, classes, fig)
    paths.append(fig)
    return paths


def feature_matrix_csv(
    names: Sequence[str], x: np.ndarray, labels: np.ndarray, window_ids: np.ndarray
) -> str:
    """Columnar export: window_id, label, then the schema's columns."""
    header = "window_id,label," + ",".join(names)
    lines = [header]
    for wid, lab, row in zip(window_ids, labels, x):
        lines.append(f"{int(wid)},{int(lab)}," + ",".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"
