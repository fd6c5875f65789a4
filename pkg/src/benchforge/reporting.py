"""Delimited stage reports plus matplotlib figures rendered alongside them.

Reports are key<TAB>value lines in a fixed order so reruns are byte-identical.
Each figure lands next to its report as <report stem>_<name>.png.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def write_report(path: str | Path, rows: Sequence[tuple[str, object]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in rows:
            if isinstance(value, bool):
                value = str(value).lower()
            fh.write(f"{key}\t{value}\n")


def read_report(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text("utf-8").splitlines():
        if line:
            key, _, value = line.partition("\t")
            out[key] = value
    return out


def figure_path(report_path: str | Path, name: str) -> Path:
    p = Path(report_path)
    return p.with_name(f"{p.stem}_{name}.png")


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_histogram(
    report_path: str | Path,
    name: str,
    values: Sequence[float],
    title: str,
    xlabel: str,
    bins: int | Sequence[float] = 20,
) -> Path:
    path = figure_path(report_path, name)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(values, bins=bins, color="#4878cf", edgecolor="white")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    _save(fig, path)
    return path


def render_bars(
    report_path: str | Path,
    name: str,
    labels: Sequence[str],
    values: Sequence[float],
    title: str,
    ylabel: str,
) -> Path:
    path = figure_path(report_path, name)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(labels)), values, color="#4878cf")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    for i, v in enumerate(values):
        ax.annotate(f"{v:.1f}" if isinstance(v, float) else str(v), (i, v),
                    ha="center", va="bottom", fontsize=8)
    _save(fig, path)
    return path


def render_grouped_bars(
    report_path: str | Path,
    name: str,
    groups: Sequence[str],
    series: dict[str, Sequence[float]],
    title: str,
    ylabel: str,
) -> Path:
    path = figure_path(report_path, name)
    fig, ax = plt.subplots(figsize=(6.5, 4))
    width = 0.8 / max(1, len(series))
    for k, (label, values) in enumerate(sorted(series.items())):
        xs = [i + k * width for i in range(len(groups))]
        ax.bar(xs, values, width=width, label=label)
    ax.set_xticks([i + width * (len(series) - 1) / 2 for i in range(len(groups))])
    ax.set_xticklabels(groups)
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    ax.legend()
    _save(fig, path)
    return path
