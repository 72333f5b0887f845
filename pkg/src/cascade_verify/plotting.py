"""Figures that accompany the delimited report files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.stats import norm  # noqa: E402

DPI = 120
_TICKS = np.array([0.1, 0.5, 1, 2, 5, 10, 20, 40, 60, 80, 95])


def _save(fig, path) -> Path:
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def plot_det(report, path):
    """DET curves on normal-deviate axes, one line per framework variant."""
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    lo, hi = norm.ppf(0.0005), norm.ppf(0.995)
    for mode, r in report.modes.items():
        pts = np.array(r.det)
        far = np.clip(pts[:, 0], 0.0005, 0.995)
        frr = np.clip(pts[:, 1], 0.0005, 0.995)
        ax.plot(norm.ppf(far), norm.ppf(frr), lw=1.4, label=f"{mode} ({r.pooled.eer_percent:.1f}%)")
    ax.plot([lo, hi], [lo, hi], color="0.7", lw=0.8, ls=":")
    ticks = norm.ppf(_TICKS / 100)
    ax.set_xticks(ticks, [f"{t:g}" for t in _TICKS])
    ax.set_yticks(ticks, [f"{t:g}" for t in _TICKS])
    ax.set_xlim(norm.ppf(0.001), hi)
    ax.set_ylim(norm.ppf(0.001), hi)
    ax.set_xlabel("False acceptance rate (%)")
    ax.set_ylabel("False rejection rate (%)")
    ax.set_title(f"DET, {report.corpus_name}")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, loc="upper right")
    return _save(fig, path)


def plot_eer_by_emotion(report, path):
    emotions = report.emotion_set
    modes = list(report.modes)
    width = 0.8 / max(len(modes), 1)
    x = np.arange(len(emotions))
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, mode in enumerate(modes):
        vals = [report.modes[mode].per_emotion[e].eer_percent if e in report.modes[mode].per_emotion else np.nan
                for e in emotions]
        ax.bar(x + (i - (len(modes) - 1) / 2) * width, vals, width, label=mode)
    ax.set_xticks(x, emotions)
    ax.set_ylabel("EER (%)")
    ax.set_title("Per-emotion EER by framework")
    ax.legend(fontsize=8, ncol=2)
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)


def plot_emotion_confusion(report, path):
    genders = list(report.emotion_confusion)
    fig, axes = plt.subplots(1, len(genders), figsize=(5 * len(genders), 4.4), squeeze=False)
    for ax, g in zip(axes[0], genders):
        c = report.emotion_confusion[g]
        im = ax.imshow(c.percent, vmin=0, vmax=100, cmap="Blues")
        n = len(c.labels)
        ax.set_xticks(range(n), [l[:4] for l in c.labels])
        ax.set_yticks(range(n), c.labels)
        for i in range(n):
            for j in range(n):
                v = c.percent[i, j]
                ax.text(j, i, f"{v:.0f}", ha="center", va="center", fontsize=7,
                        color="white" if v > 60 else "black")
        ax.set_xlabel("decided")
        ax.set_ylabel("true")
        ax.set_title(f"{g}: emotion identification (%)")
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8)
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def render_figures(report, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    if report.modes:
        paths.append(plot_det(report, out_dir / "det_curves.png"))
        paths.append(plot_eer_by_emotion(report, out_dir / "eer_by_emotion.png"))
    if report.emotion_confusion:
        paths.append(plot_emotion_confusion(report, out_dir / "emotion_confusion.png"))
    return paths
