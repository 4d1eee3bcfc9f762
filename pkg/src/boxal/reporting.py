"""Figure rendering for run metrics and benchmark CSVs.

Renders PNGs next to the delimited outputs; the CSVs remain the canonical
artifacts and nothing in the selection paths depends on this module.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def render_metrics_figures(metric_paths: list[Path], out_dir: Path) -> list[Path]:
    """Per-round alignment curves, one line per strategy, one figure per metric."""
    series: dict[str, dict[str, list[tuple[int, float]]]] = {
        "label_kl": {},
        "density_score": {},
        "cover_radius": {},
    }
    for path in metric_paths:
        for row in _read_csv(Path(path)):
            strategy = row["strategy"]
            for metric in series:
                series[metric].setdefault(strategy, []).append(
                    (int(row["round"]), float(row[metric]))
                )
    if not any(series.values()):
        raise ConfigError("no metric rows found in the given CSV files")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for metric, by_strategy in series.items():
        if not by_strategy:
            continue
        fig, ax = plt.subplots(figsize=(5.5, 3.8))
        for strategy, points in sorted(by_strategy.items()):
            points = sorted(points)
            ax.plot([p[0] for p in points], [p[1] for p in points],
                    marker="o", label=strategy)
        ax.set_xlabel("selection round")
        ax.set_ylabel(metric.replace("_", " "))
        ax.legend()
        fig.tight_layout()
        out = out_dir / f"{metric}.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written


def render_bench_figure(bench_path: Path, out_dir: Path) -> Path:
    """Log-log selection time against pool size with fitted slopes."""
    rows = _read_csv(Path(bench_path))
    if not rows:
        raise ConfigError(f"no benchmark rows in {bench_path}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    strategies = sorted({row["strategy"] for row in rows})
    for strategy in strategies:
        pts = sorted(
            (int(r["n"]), float(r["seconds"])) for r in rows if r["strategy"] == strategy
        )
        ns = np.array([p[0] for p in pts], dtype=float)
        ts = np.array([max(p[1], 1e-9) for p in pts])
        label = strategy
        if len(pts) >= 2:
            slope, _ = np.polyfit(np.log(ns), np.log(ts), 1)
            label = f"{strategy} (slope {slope:.2f})"
        ax.loglog(ns, ts, marker="o", label=label)
    ax.set_xlabel("pool size n")
    ax.set_ylabel("selection seconds")
    ax.legend()
    fig.tight_layout()
    out = out_dir / "bench_times.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
