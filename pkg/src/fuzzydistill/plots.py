"""Matplotlib figure rendering for run reports.

Figures are drawn from the delimited artifacts (curves.csv,
membership.csv), never from in-memory state, and are written with fixed
metadata so reruns produce byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": None}}


def render_curves(curves_csv, teacher_median: float, out_path) -> Path:
    """Median reward with interquartile band, distilled vs naive, plus the
    teacher's median as a horizontal reference line."""
    episodes, med_d, q1_d, q3_d, med_n, q1_n, q3_n = [], [], [], [], [], [], []
    with Path(curves_csv).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            episodes.append(int(rec["episode"]))
            med_d.append(float(rec["distill_median"]) if rec["distill_median"] else None)
            q1_d.append(float(rec["distill_q1"]) if rec["distill_q1"] else None)
            q3_d.append(float(rec["distill_q3"]) if rec["distill_q3"] else None)
            med_n.append(float(rec["naive_median"]) if rec["naive_median"] else None)
            q1_n.append(float(rec["naive_q1"]) if rec["naive_q1"] else None)
            q3_n.append(float(rec["naive_q3"]) if rec["naive_q3"] else None)

    fig, ax = plt.subplots(figsize=(6, 4))
    def _series(xs, med, q1, q3, color, label):
        pts = [(x, m, a, b) for x, m, a, b in zip(xs, med, q1, q3) if m is not None]
        if not pts:
            return
        x, m, a, b = zip(*pts)
        ax.plot(x, m, color=color, label=label)
        ax.fill_between(x, a, b, color=color, alpha=0.25, linewidth=0)

    _series(episodes, med_d, q1_d, q3_d, "tab:blue", "distilled")
    _series(episodes, med_n, q1_n, q3_n, "tab:orange", "naive substitution")
    ax.axhline(teacher_median, color="tab:green", linestyle="--", label="teacher median")
    ax.set_xlabel("episode")
    ax.set_ylabel("episode reward")
    ax.legend(loc="best")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)
    return out_path


def render_membership(membership_csv, out_path) -> Path:
    """One panel per surviving input dimension with its fuzzy set curves."""
    curves: dict[str, dict[str, tuple[list, list]]] = {}
    with Path(membership_csv).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            feat = rec["feature"]
            label = rec["set"]
            xs, ys = curves.setdefault(feat, {}).setdefault(label, ([], []))
            xs.append(float(rec["x"]))
            ys.append(float(rec["membership"]))

    n_panels = max(len(curves), 1)
    fig, axes = plt.subplots(1, n_panels, figsize=(3.2 * n_panels, 2.8), squeeze=False)
    for ax, (feat, sets) in zip(axes[0], curves.items()):
        for label, (xs, ys) in sets.items():
            ax.plot(xs, ys, label=label)
        ax.set_title(feat)
        ax.set_ylim(0.0, 1.05)
        ax.legend(fontsize=8)
    if not curves:
        axes[0][0].set_axis_off()
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)
    return out_path
