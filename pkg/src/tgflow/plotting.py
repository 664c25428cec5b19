"""Grouped bar charts for the report, written as SVG with matplotlib."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

COLORS = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"]
COLW = 3.45

matplotlib.rcParams.update(
    {
        "svg.hashsalt": "tgflow",
        "svg.fonttype": "none",
        "font.size": 9,
        "axes.linewidth": 0.6,
        "axes.spines.top": False,
        "axes.spines.right": False,
    }
)


def bar_id(n: int, variant: str) -> str:
    return f"bar-N{n}-{variant}"


def grouped_bars(
    path: str | Path,
    dims: Sequence[int],
    series: Mapping[str, Mapping[int, float]],
    labels: Mapping[str, str] | None = None,
    whiskers: Mapping[str, Mapping[int, tuple[float, float]]] | None = None,
    ylabel: str = "",
    title: str = "",
    reference: float | None = None,
) -> None:
    """One group per dimension N, one bar per series; missing cells are skipped.

    Every bar carries the SVG id ``bar-N<n>-<series>``.  Whiskers are
    (low, high) values drawn as error bars around the bar height.
    """
    labels = labels or {}
    fig, ax = plt.subplots(figsize=(2 * COLW, 2 * COLW * 0.5))
    width = 0.8 / max(len(series), 1)
    for j, (name, values) in enumerate(series.items()):
        xs, hs, errs = [], [], [[], []]
        for i, n in enumerate(dims):
            if n not in values:
                continue
            xs.append(i + (j - (len(series) - 1) / 2) * width)
            hs.append(values[n])
            lo, hi = (whiskers or {}).get(name, {}).get(n, (values[n], values[n]))
            errs[0].append(max(values[n] - lo, 0.0))
            errs[1].append(max(hi - values[n], 0.0))
        if not xs:
            continue
        bars = ax.bar(
            xs,
            hs,
            width=width,
            color=COLORS[j % len(COLORS)],
            label=labels.get(name, name),
            yerr=errs if whiskers else None,
            capsize=2,
            error_kw={"elinewidth": 0.6},
        )
        for n, patch in zip([n for n in dims if n in values], bars.patches):
            patch.set_gid(bar_id(n, name))
    if reference is not None:
        ax.axhline(reference, color="0.3", linewidth=0.6, linestyle="--")
    ax.set_xticks(range(len(dims)))
    ax.set_xticklabels([f"N = {n}" for n in dims])
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=7, ncol=2)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
