"""Figure rendering for the report path.

Renders convergence curves and sweep comparisons to PNG files next to the
delimited outputs.  Headless backend; import stays local to the callers so
library users without a display never touch matplotlib state.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def render_experiment(out_dir: Path, aggregate: list[dict], title: str) -> list[Path]:
    """Accuracy and loss curves (mean with a +/- std band across seeds)."""
    if not aggregate:
        return []
    out_dir = Path(out_dir)
    rounds = [row["round"] for row in aggregate]
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    mean = [row["accuracy_mean"] for row in aggregate]
    std = [row["accuracy_std"] for row in aggregate]
    ax.plot(rounds, mean, marker=".", lw=1.2)
    ax.fill_between(
        rounds,
        [m - s for m, s in zip(mean, std)],
        [m + s for m, s in zip(mean, std)],
        alpha=0.25,
        lw=0,
    )
    ax.set_xlabel("round")
    ax.set_ylabel("accuracy")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / "accuracy.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(rounds, [row["eval_loss_mean"] for row in aggregate], marker=".", lw=1.2, label="eval")
    train_pts = [
        (r, row["train_loss_mean"])
        for r, row in zip(rounds, aggregate)
        if row.get("train_loss_mean") is not None
    ]
    if train_pts:
        ax.plot(*zip(*train_pts), marker=".", lw=1.0, alpha=0.7, label="train")
    ax.set_xlabel("round")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / "loss.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def render_sweep(out_dir: Path, combined: list[dict], axis_keys: list[str]) -> list[Path]:
    """Final accuracy against the first axis, one series per second-axis value."""
    if not combined or not axis_keys:
        return []
    out_dir = Path(out_dir)
    primary = axis_keys[0].split(".")[-1]
    secondary = axis_keys[1].split(".")[-1] if len(axis_keys) > 1 else None

    series: dict = {}
    for row in combined:
        key = row.get(secondary) if secondary else "all"
        series.setdefault(key, []).append(row)

    fig, ax = plt.subplots(figsize=(6.5, 4))
    numeric_x = all(isinstance(r.get(primary), (int, float)) for r in combined)
    for key, rows in series.items():
        xs = [r[primary] for r in rows]
        ys = [r["accuracy_mean"] for r in rows]
        es = [r["accuracy_std"] for r in rows]
        label = f"{secondary}={key}" if secondary else None
        if numeric_x:
            order = sorted(range(len(xs)), key=lambda i: xs[i])
            xs = [xs[i] for i in order]
            ys = [ys[i] for i in order]
            es = [es[i] for i in order]
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=label)
        else:
            ax.errorbar(range(len(xs)), ys, yerr=es, marker="o", capsize=3, label=label)
            ax.set_xticks(range(len(xs)), [str(x) for x in xs], rotation=20)
    ax.set_xlabel(primary)
    ax.set_ylabel("final accuracy")
    if secondary:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / "comparison.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def render_estimator_bench(out_dir: Path, rows: list[dict]) -> list[Path]:
    """Estimator probability MSE against client count on log-log axes."""
    out_dir = Path(out_dir)
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [row["clients"] for row in rows]
    ys = [row["mse_probability"] for row in rows]
    ax.loglog(xs, ys, marker="o")
    ax.set_xlabel("clients")
    ax.set_ylabel("MSE of estimated sampling probability")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    path = out_dir / "estimator_mse.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]
