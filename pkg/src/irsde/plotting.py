"""Static SVG line charts for loss curves and per-step restoration logs."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "svg.fonttype": "none",
    "svg.hashsalt": "irsde",
}

LOSS_COLUMNS = ("iteration", "objective", "loss", "psnr_eval")
STEP_COLUMNS = ("i", "score_norm", "drift_norm", "noise_norm", "psnr")


class EmptyPlotError(ValueError):
    """Raised when an input CSV holds no data rows."""


def _float(text):
    if text is None or text.strip() == "":
        return math.nan
    return float(text)


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise EmptyPlotError(f"{path}: no data rows")
    return rows


def csv_kind(rows) -> str:
    cols = set(rows[0])
    if {"iteration", "loss"} <= cols:
        return "loss"
    if {"i", "psnr"} <= cols:
        return "steps"
    raise ValueError(f"unrecognised columns {sorted(cols)}")


def plot_loss_curves(paths, out) -> Path:
    """Loss (log scale) and evaluation PSNR against iteration, one line per
    objective per file."""
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_psnr) = plt.subplots(1, 2, figsize=(8, 3))
        for path in paths:
            rows = read_rows(path)
            if csv_kind(rows) != "loss":
                raise ValueError(f"{path}: not a loss CSV")
            label = f"{rows[0]['objective']} ({Path(path).stem})" if len(paths) > 1 else rows[0]["objective"]
            it = [int(r["iteration"]) for r in rows]
            ax_loss.plot(it, [_float(r["loss"]) for r in rows], label=label)
            ev = [(int(r["iteration"]), _float(r["psnr_eval"])) for r in rows if r.get("psnr_eval", "").strip()]
            if ev:
                ax_psnr.plot(*zip(*ev), marker=".", label=label)
        ax_loss.set_yscale("log")
        ax_loss.set_xlabel("iteration")
        ax_loss.set_ylabel("training loss")
        ax_psnr.set_xlabel("iteration")
        ax_psnr.set_ylabel("eval PSNR (dB)")
        ax_loss.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, out)


def plot_step_curves(paths, out) -> Path:
    """PSNR against reverse step; the x axis runs from T down to 0."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        hi = 0
        for path in paths:
            rows = read_rows(path)
            if csv_kind(rows) != "steps":
                raise ValueError(f"{path}: not a step-log CSV")
            steps = [int(r["i"]) - 1 for r in rows]  # state reached after the step
            ax.plot(steps, [_float(r["psnr"]) for r in rows], label=Path(path).stem)
            hi = max(hi, max(steps) + 1)
        ax.set_xlim(hi, 0)
        ax.set_xlabel("reverse step")
        ax.set_ylabel("PSNR (dB)")
        if len(paths) > 1:
            ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, out)


def plot_csv(paths, out) -> Path:
    paths = [Path(p) for p in paths]
    kind = csv_kind(read_rows(paths[0]))
    return plot_loss_curves(paths, out) if kind == "loss" else plot_step_curves(paths, out)


def _save(fig, out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out
