"""Figure rendering for CLI reports.

Each report CSV gets a companion PNG so runs are inspectable without
external tooling.  All functions take already-written CSV/rows and render
to a file; they never show interactive windows.
"""

import csv

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_loss_curves(csv_path, out_path):
    """Loss and error curves from a training loss.csv."""
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError("empty loss CSV: %s" % csv_path)
    epochs = [int(r["epoch"]) for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for key in ("l_hand", "l_obj", "l_assoc"):
        axes[0].plot(epochs, [float(r[key]) for r in rows], label=key)
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].set_yscale("log")
    axes[0].legend()
    axes[1].plot(epochs, [float(r["hand_epe_mm"]) for r in rows], label="hand EPE (mm)")
    axes[1].set_xlabel("epoch")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def plot_pck_curve(thresholds_mm, pck, out_path, auc=None):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(thresholds_mm, np.asarray(pck) * 100.0)
    ax.set_xlabel("threshold (mm)")
    ax.set_ylabel("PCK (%)")
    ax.set_ylim(0, 101)
    if auc is not None:
        ax.set_title("AUC %.3f" % auc)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def plot_ablation(rows, out_path):
    """Grouped bars of hand/object error per ablation row.

    rows: list of dicts with keys label, hand_epe_mm, object_chamfer.
    """
    ok = [r for r in rows if r.get("status", "ok") == "ok"]
    if not ok:
        raise ValueError("no successful ablation rows to plot")
    labels = [r["label"] for r in ok]
    x = np.arange(len(ok))
    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    axes[0].bar(x, [float(r["hand_epe_mm"]) for r in ok])
    axes[0].set_ylabel("hand EPE (mm)")
    axes[1].bar(x, [float(r["object_chamfer"]) for r in ok], color="tab:orange")
    axes[1].set_ylabel("object Chamfer")
    for ax in axes:
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path
