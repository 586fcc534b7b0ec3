"""Figure rendering for the evaluation report path (headless matplotlib)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ValidationError
from .metrics import EvalReport, _pair_name


def render_roc_figure(reports: list[EvalReport], out_dir, filename: str = "roc_combined.png") -> Path:
    """One combined ROC plot, one line per (train, test) pair, labeled trainLot_testLot."""
    if not reports:
        raise ValidationError("no reports to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 5))
    for r in reports:
        if r.curve is None:
            raise ValidationError(f"report {_pair_name(r)} carries no ROC curve")
        train, test = _pair_name(r)
        ax.plot(
            [p.fpr for p in r.curve.points],
            [p.tpr for p in r.curve.points],
            label=f"{train}_{test} (AUC {r.auc:.4f})",
        )
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray", linewidth=1)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    path = out_dir / filename
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_loss_curve(loss_curve: list[tuple[int, float]], out_path) -> Path:
    """Training loss against iteration number."""
    if not loss_curve:
        raise ValidationError("empty loss curve")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([it for it, _ in loss_curve], [ls for _, ls in loss_curve])
    ax.set_xlabel("Iteration")
    ax.set_ylabel("Mean batch loss")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
