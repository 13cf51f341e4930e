"""Matplotlib renderers for the report paths.

Every function writes a PNG next to the delimited output and returns the
path.  All figures use the Agg backend (headless) and carry no timestamps, so
reports stay byte-stable across reruns.
"""

from __future__ import annotations

import math

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update({
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.bbox": "tight",
})

_SAVE_KW = {"metadata": {"Software": None}}


def plot_elbo_trace(values, path, smooth: int = 10):
    fig, ax = plt.subplots()
    values = np.asarray(values, dtype=float)
    ax.plot(values, lw=0.8, color="steelblue", label="per-epoch estimate")
    if len(values) >= smooth:
        ma = np.convolve(values, np.ones(smooth) / smooth, mode="valid")
        ax.plot(np.arange(smooth - 1, len(values)), ma, lw=1.6,
                color="darkorange", label=f"{smooth}-epoch average")
    ax.set_xlabel("epoch")
    ax.set_ylabel("ELBO")
    ax.legend(loc="lower right")
    fig.savefig(str(path), **_SAVE_KW)
    plt.close(fig)
    return path


def plot_topk_hits(rows, n_test, path):
    """rows: iterable of (variant, K, hits)."""
    variants = sorted({r[0] for r in rows})
    ks = sorted({int(r[1]) for r in rows})
    fig, ax = plt.subplots()
    width = 0.8 / max(len(variants), 1)
    x = np.arange(len(ks), dtype=float)
    for i, var in enumerate(variants):
        by_k = {int(k): h for v, k, h in rows if v == var}
        ax.bar(x + i * width, [by_k.get(k, 0) for k in ks], width,
               label=var)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels([str(k) for k in ks])
    ax.set_xlabel("K")
    ax.set_ylabel(f"true positives (of {n_test})")
    ax.legend(fontsize=7)
    fig.savefig(str(path), **_SAVE_KW)
    plt.close(fig)
    return path


def plot_community_map(trace, assignments, path, max_points: int = 5000):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    xy = trace.xy
    assignments = np.asarray(assignments)
    if len(xy) > max_points:
        step = len(xy) // max_points + 1
        xy, assignments = xy[::step], assignments[::step]
    ax.scatter(xy[:, 0], xy[:, 1], c=assignments, s=4, cmap="tab10", alpha=0.6)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("check-ins by community")
    fig.savefig(str(path), **_SAVE_KW)
    plt.close(fig)
    return path


def plot_forest(edges, n_nodes, path):
    """Influence forest on a circular layout; isolated nodes drawn faint."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ang = 2 * math.pi * np.arange(n_nodes) / max(n_nodes, 1)
    px, py = np.cos(ang), np.sin(ang)
    deg = np.zeros(n_nodes)
    for u, v, w in edges:
        ax.plot([px[u], px[v]], [py[u], py[v]], color="gray",
                lw=0.5 + 2.5 * w, alpha=0.7)
        deg[u] += 1
        deg[v] += 1
    ax.scatter(px, py, s=np.where(deg > 0, 24, 6),
               c=np.where(deg > 0, "steelblue", "lightgray"), zorder=3)
    ax.set_aspect("equal")
    ax.axis("off")
    ax.set_title(f"influence forest ({len(edges)} edges)")
    fig.savefig(str(path), **_SAVE_KW)
    plt.close(fig)
    return path


def plot_recovery(true_mat, est_mat, path, label="A"):
    fig, ax = plt.subplots(figsize=(3.6, 3.6))
    t = np.asarray(true_mat).ravel()
    e = np.asarray(est_mat).ravel()
    keep = np.abs(t) >= 1e-9
    ax.scatter(t[keep], e[keep], s=8, alpha=0.7)
    lim = max(t[keep].max(), e[keep].max()) * 1.1 if keep.any() else 1.0
    ax.plot([0, lim], [0, lim], color="gray", lw=0.8)
    ax.set_xlabel(f"true {label}")
    ax.set_ylabel(f"estimated {label}")
    fig.savefig(str(path), **_SAVE_KW)
    plt.close(fig)
    return path


def plot_category_losses(losses, path):
    """losses: dict k_cat -> {"mean": float, "sum": float}."""
    ks = sorted(int(k) for k in losses)
    fig, ax = plt.subplots()
    ax.plot(ks, [losses[k]["mean"] for k in ks], marker="o")
    ax.set_xlabel("number of frequent categories in the community mean")
    ax.set_ylabel("category loss (mean)")
    fig.savefig(str(path), **_SAVE_KW)
    plt.close(fig)
    return path
