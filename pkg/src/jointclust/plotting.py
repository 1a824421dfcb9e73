"""Figures written to files: experiment boxplots, K-selection curves and class profiles."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SHORT = {
    "simultaneous-parametric": "sim-P",
    "simultaneous-semiparametric": "sim-SP",
    "two-step-parametric": "2s-P",
    "two-step-semiparametric": "2s-SP",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def experiment_boxplots(rows, out_dir, prefix="") -> list:
    """One figure per (case, loss): MSE and ARI boxplots for each method and n.

    Only rows with ``status == "ok"`` are drawn. Returns the written paths.
    """
    ok = [r for r in rows if r.get("status") == "ok"]
    paths = []
    for case in dict.fromkeys(r["case"] for r in ok):
        for loss in dict.fromkeys(r["loss"] for r in ok if r["case"] == case):
            sub = [r for r in ok if r["case"] == case and r["loss"] == loss]
            methods = list(dict.fromkeys(r["method"] for r in sub))
            ns = sorted({int(r["n"]) for r in sub})
            labels, mse, ari = [], [], []
            for n in ns:
                for m in methods:
                    rs = [r for r in sub if r["method"] == m and int(r["n"]) == n]
                    if not rs:
                        continue
                    labels.append(f"{_SHORT.get(m, m)}\nn={n}")
                    mse.append([float(r["beta_mse"]) for r in rs])
                    ari.append([float(r["ari"]) for r in rs])
            fig, axes = plt.subplots(1, 2, figsize=(max(6, 1.1 * len(labels) + 2) * 1.6, 4))
            axes[0].boxplot(mse)
            axes[0].set_yscale("log")
            axes[0].set_title("coefficient MSE")
            axes[1].boxplot(ari)
            axes[1].set_title("ARI")
            for ax in axes:
                ax.set_xticks(range(1, len(labels) + 1), labels, fontsize=7)
            fig.suptitle(f"{case}, {loss} loss")
            safe = loss.replace("(", "_").replace(")", "")
            paths.append(_save(fig, Path(out_dir) / f"{prefix}{case}_{safe}_boxplots.png"))
    return paths


def select_k_plot(rows, path):
    """Smoothed log-likelihood and CV prediction MSE against K, one line per loss."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for loss in dict.fromkeys(r["loss"] for r in rows):
        rs = sorted((r for r in rows if r["loss"] == loss), key=lambda r: r["K"])
        ks = [r["K"] for r in rs]
        axes[0].plot(ks, [r["smoothed_loglik"] for r in rs], marker="o", label=loss)
        axes[1].plot(ks, [r["cv_mse"] for r in rs], marker="o", label=loss)
    axes[0].set_ylabel("smoothed log-likelihood")
    axes[1].set_ylabel("CV prediction MSE")
    for ax in axes:
        ax.set_xlabel("K")
        ax.xaxis.get_major_locator().set_params(integer=True)
    axes[0].legend(fontsize=8)
    return _save(fig, path)


def profile_plot(profiles, path):
    """Stacked bars of per-class level probabilities, one panel per categorical column."""
    cats = [p for p in profiles if p["type"] == "categorical"]
    if not cats:
        return None
    fig, axes = plt.subplots(1, len(cats), figsize=(3.2 * len(cats), 3.2), squeeze=False)
    for ax, p in zip(axes[0], cats):
        probs = np.asarray(p["probs"])
        bottom = np.zeros(probs.shape[0])
        classes = np.arange(1, probs.shape[0] + 1)
        for lvl, col in zip(p["levels"], probs.T):
            ax.bar(classes, col, bottom=bottom, label=str(lvl))
            bottom += col
        ax.set_title(p["name"], fontsize=9)
        ax.set_xticks(classes)
        ax.set_xlabel("class")
        ax.legend(fontsize=6)
    return _save(fig, path)
