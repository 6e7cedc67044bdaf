"""Figure rendering for the experiment CSVs.

Each report command writes its delimited output first and then, unless
figures are disabled, an adjacent PNG produced here. Pure convenience:
nothing downstream reads these files.
"""

import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _rows(csv_path):
    with open(csv_path, newline="") as f:
        return list(csv.DictReader(f))


def plot_pretrain(csv_path, png_path) -> None:
    """Per-layer reconstruction error against epoch, train solid / test dashed."""
    by_layer = defaultdict(list)
    for row in _rows(csv_path):
        by_layer[int(row["layer"])].append(row)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    cmap = plt.get_cmap("tab10")
    for layer, rows in sorted(by_layer.items()):
        epochs = [int(r["epoch"]) + 1 for r in rows]
        ax.plot(epochs, [float(r["train_mse"]) for r in rows],
                color=cmap(layer), label=f"layer {layer} train")
        test = [float(r["test_mse"]) for r in rows]
        if not any(t != t for t in test):  # skip when NaN (no test set)
            ax.plot(epochs, test, color=cmap(layer), linestyle="--",
                    label=f"layer {layer} test")
    ax.set_xlabel("epoch")
    ax.set_ylabel("reconstruction MSE")
    ax.set_title("Layerwise pre-training error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)


def plot_finetune(csv_path, png_path, mode: str) -> None:
    rows = _rows(csv_path)
    epochs = [int(r["epoch"]) + 1 for r in rows]
    if mode == "classifier":
        train = [int(r["train_misclassified"]) for r in rows]
        test = [int(r["test_misclassified"]) for r in rows]
        ylabel = "misclassified cases"
    else:
        train = [float(r["train_mse"]) for r in rows]
        test = [float(r["test_mse"]) for r in rows]
        ylabel = "reconstruction MSE"
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, train, label="train")
    if not any(t != t for t in test):
        ax.plot(epochs, test, linestyle="--", label="test")
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.set_title(f"Fine-tuning ({mode})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)


def plot_bench(csv_path, png_path) -> None:
    """Wall time against worker count with the ideal inverse curve, plus
    the measured speedup."""
    rows = _rows(csv_path)
    workers = [int(r["workers"]) for r in rows]
    wall = [float(r["wall_time"]) for r in rows]
    speedup = [float(r["speedup"]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(workers, wall, marker="o", label="measured")
    ax1.plot(workers, [wall[0] * workers[0] / w for w in workers],
             linestyle=":", label="ideal 1/w")
    ax1.set_xlabel("workers")
    ax1.set_ylabel("wall time (s)")
    ax1.set_xticks(workers)
    ax1.legend()
    ax2.plot(workers, speedup, marker="o", label="measured")
    ax2.plot(workers, [w / workers[0] for w in workers], linestyle=":",
             label="ideal")
    ax2.set_xlabel("workers")
    ax2.set_ylabel("speedup")
    ax2.set_xticks(workers)
    ax2.legend()
    fig.suptitle("One pre-training epoch, map/reduce path")
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
