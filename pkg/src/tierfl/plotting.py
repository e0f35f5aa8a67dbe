"""Sweep figures: accuracy over rounds, accuracy over simulated time, total time per policy."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (5.0, 3.4)


def _style(ax, xlabel, ylabel):
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3, linewidth=0.6)
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def accuracy_over_rounds(results: Sequence, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for res in results:
        ax.plot([r.round for r in res.records], [r.global_acc for r in res.records],
                label=res.config.policy.name, linewidth=1.2)
    _style(ax, "round", "global accuracy")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def accuracy_over_time(results: Sequence, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for res in results:
        ax.plot([r.wall_clock for r in res.records], [r.global_acc for r in res.records],
                label=res.config.policy.name, linewidth=1.2)
    ax.set_xscale("log")
    _style(ax, "simulated wall clock [s]", "global accuracy")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def training_time(results: Sequence, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    names = [res.config.policy.name for res in results]
    ax.bar(names, [res.total_wall_clock for res in results], color="0.35")
    est = [(i, res.estimate) for i, res in enumerate(results) if res.estimate is not None]
    if est:
        ax.scatter([i for i, _ in est], [e for _, e in est], marker="_", s=400, color="C3",
                   label="estimate", zorder=3)
        ax.legend(frameon=False, fontsize=8)
    _style(ax, "policy", f"time for {len(results[0].records)} rounds [s]")
    return _save(fig, path)


def render_sweep(results: Sequence, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    return [
        accuracy_over_rounds(results, out_dir / "accuracy_rounds.png"),
        accuracy_over_time(results, out_dir / "accuracy_time.png"),
        training_time(results, out_dir / "training_time.png"),
    ]
