"""Cumulative normalized regret charts from run CSVs."""
from __future__ import annotations

import csv
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Sequence

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {
    "svg.hashsalt": "mblab",    # stable element ids
    "svg.fonttype": "none",     # text stays text, no embedded glyph paths
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def load_series(csv_paths: Sequence) -> "OrderedDict[str, tuple]":
    """Mean cumulative normalized regret per episode for every (file, policy) pair.

    Repetitions (distinct run ids) are averaged episode by episode.
    """
    series: Dict[str, Dict[int, list]] = OrderedDict()
    many = len(csv_paths) > 1
    for path in csv_paths:
        path = Path(path)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row.get("backend") == "error" or not row.get("cum_norm_regret"):
                    continue
                label = f"{path.stem}: {row['policy']}" if many else row["policy"]
                series.setdefault(label, {}).setdefault(int(row["episode"]), []).append(
                    float(row["cum_norm_regret"]))
    out = OrderedDict()
    for label, by_ep in series.items():
        eps = np.array(sorted(by_ep))
        out[label] = (eps, np.array([np.mean(by_ep[e]) for e in eps]))
    return out


def emit_plot(csv_paths: Sequence, output, title: str = "") -> Path:
    """Write an SVG line chart, one polyline per configuration.

    Output bytes depend only on the input data.
    """
    if not csv_paths:
        raise ValueError("emit_plot needs at least one CSV file")
    series = load_series(csv_paths)
    if not series:
        raise ValueError("no episode rows found in the given CSV files")
    output = Path(output)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for idx, (label, (eps, vals)) in enumerate(series.items()):
            ax.plot(eps, vals, lw=1.4, label=label, gid=f"series-{idx}")
        ax.set_xlabel("episode")
        ax.set_ylabel("cumulative normalized regret")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper left", frameon=False)
        fig.tight_layout()
        fig.savefig(output, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return output
