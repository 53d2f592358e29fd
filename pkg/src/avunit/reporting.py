"""Report writers: delimited records, text tables, plot-data CSV, figures.

Every writer produces byte-stable output for identical inputs so that a
rerun of an experiment recipe under the same config and seed reproduces
its report files exactly. Figures are rendered with the Agg backend and
fixed metadata.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_FIG_METADATA = {"Software": "avunit"}
_STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
}


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_table(path, title: str, header, rows) -> None:
    """Fixed-width plain-text grid with a title line."""
    cells = [list(map(str, header))] + [list(map(str, r)) for r in rows]
    widths = [max(len(row[c]) for row in cells) for c in range(len(header))]
    lines = [title, "=" * max(len(title), sum(widths) + 2 * (len(widths) - 1))]
    for r, row in enumerate(cells):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if r == 0:
            lines.append("-" * len(lines[-1]))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def _save(fig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata=_FIG_METADATA)
    plt.close(fig)


def line_figure(path, x_labels, series: dict[str, list[float]], *, title: str,
                xlabel: str, ylabel: str) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        x = range(len(x_labels))
        for name in series:
            ax.plot(x, series[name], marker="o", label=name)
        ax.set_xticks(list(x))
        ax.set_xticklabels([str(l) for l in x_labels])
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        _save(fig, path)


def bar_figure(path, x_labels, series: dict[str, list[float]], *, title: str,
               xlabel: str, ylabel: str) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        n_series = len(series)
        width = 0.8 / n_series
        for k, name in enumerate(series):
            offsets = [i + (k - (n_series - 1) / 2) * width for i in range(len(x_labels))]
            ax.bar(offsets, series[name], width=width, label=name)
        ax.set_xticks(range(len(x_labels)))
        ax.set_xticklabels([str(l) for l in x_labels], rotation=20, ha="right")
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if n_series > 1:
            ax.legend()
        fig.tight_layout()
        _save(fig, path)
