"""SVG figures rendered from result CSVs (no retraining needed)."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamp so identical CSVs give identical SVG bytes
matplotlib.rcParams["svg.hashsalt"] = "gsc"
_META = {"Date": None, "Creator": "gsc"}


def _read(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_generalization(csv_path: str, svg_path: str, title: str = "") -> None:
    rows = _read(csv_path)
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for method in dict.fromkeys(r["method"] for r in rows):
        sel = [r for r in rows if r["method"] == method]
        x = [float(r["fraction"]) for r in sel]
        mean = [float(r["mean_acc"]) for r in sel]
        lo = [m - float(r["se_low"]) for m, r in zip(mean, sel)]
        hi = [m + float(r["se_high"]) for m, r in zip(mean, sel)]
        ax.plot(x, mean, marker="o", ms=3, label=method)
        ax.fill_between(x, lo, hi, alpha=0.2)
    ax.set_xlabel("fraction of training set")
    ax.set_ylabel("test accuracy")
    ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, svg_path)


def plot_epsilon(csv_path: str, svg_path: str) -> None:
    rows = _read(csv_path)
    eps = [float(r["epsilon"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(eps, [float(r["strategic_acc"]) for r in rows], marker="o", ms=3, label="strategic (s-hinge)")
    ax.plot(eps, [float(r["baseline_acc"]) for r in rows], ls="--", label="non-strategic optimum (est.)")
    ax.plot(eps, [float(r["user_info_acc"]) for r in rows], ls=":", label="user information 1-eps")
    colors = {"IA": "#c8e6c9", "IA-but-ytilde-better": "#fff9c4", "not-IA": "#ffcdd2"}
    half = (eps[1] - eps[0]) / 2 if len(eps) > 1 else 0.025
    for e, r in zip(eps, rows):
        ax.axvspan(e - half, e + half, color=colors[r["region"]], alpha=0.5, lw=0)
    ax.set_xlabel("epsilon")
    ax.set_ylabel("accuracy")
    ax.legend(fontsize=8)
    _save(fig, svg_path)


def plot_ppe(csv_path: str, svg_path: str) -> None:
    rows = _read(csv_path)
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for user_loss in dict.fromkeys(r["user_loss"] for r in rows):
        sel = [r for r in rows if r["user_loss"] == user_loss]
        n = [int(r["history_size"]) for r in sel]
        line, = ax.plot(n, [float(r["gs_hinge_acc"]) for r in sel], marker="o", ms=3, label=f"gs-hinge ({user_loss} users)")
        ax.plot(n, [float(r["hinge_acc"]) for r in sel], ls="--", color=line.get_color(), label=f"hinge ({user_loss} users)")
    ax.set_xlabel("history size n")
    ax.set_ylabel("test accuracy")
    ax.legend(fontsize=7)
    _save(fig, svg_path)


__all__ = ["plot_generalization", "plot_epsilon", "plot_ppe"]
