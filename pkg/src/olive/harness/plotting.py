"""Figures rendered from the CSV outputs of a run directory."""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _rows(path):
    if not os.path.exists(path):
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_scores(out_dir) -> str | None:
    """Bar chart of evaluation mean +- stderr per config, one panel per env."""
    rows = _rows(os.path.join(out_dir, "summary.csv"))
    if not rows:
        return None
    envs = sorted({r["env"] for r in rows})
    fig, axes = plt.subplots(1, len(envs), figsize=(4 + 3 * len(envs), 3.5), squeeze=False)
    for ax, env in zip(axes[0], envs):
        sub = [r for r in rows if r["env"] == env]
        names = [r["config"] for r in sub]
        ax.bar(range(len(sub)), [float(r["mean"]) for r in sub],
               yerr=[float(r["stderr"]) for r in sub], capsize=3, color="tab:blue")
        ax.set_xticks(range(len(sub)), names, rotation=30, ha="right", fontsize=8)
        ax.set_title(env, fontsize=9)
        ax.set_ylabel("evaluation score")
    fig.tight_layout()
    path = os.path.join(out_dir, "scores.png")
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_training(out_dir) -> str | None:
    """VAE loss per epoch, concatenated over retrains, averaged over seeds."""
    rows = _rows(os.path.join(out_dir, "training.csv"))
    if not rows:
        return None
    curves = defaultdict(lambda: defaultdict(list))
    for r in rows:
        key = (r["config"], r["env"])
        curves[key][(int(r["episode"]), int(r["epoch"]))].append(float(r["loss"]))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for (config, env), pts in sorted(curves.items()):
        keys = sorted(pts)
        ax.plot(range(len(keys)), [sum(pts[k]) / len(pts[k]) for k in keys], label=f"{config} / {env}")
    ax.set_xlabel("epoch (all retrains)")
    ax.set_ylabel("mean training loss")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = os.path.join(out_dir, "training.png")
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_all(out_dir) -> list[str]:
    return [p for p in (plot_scores(out_dir), plot_training(out_dir)) if p]
