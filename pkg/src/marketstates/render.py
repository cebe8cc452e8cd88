"""SVG figures: matrix heatmaps with sector blocks, k-selection curves,
state timelines and mean-correlation series.

Output is deterministic: no timestamps, fixed SVG id salt.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DataError  # noqa: E402
from .ingest import SECTOR_NAMES  # noqa: E402

plt.rcParams["svg.hashsalt"] = "marketstates"
plt.rcParams["svg.fonttype"] = "none"
_META = {"Date": None, "Creator": "marketstates"}

CORRELATION_KINDS = ("standard", "reduced_cov", "reduced_corr")


def sector_blocks(labels) -> list[tuple[int, int, str]]:
    """Contiguous runs of equal labels as (start, stop, label)."""
    out = []
    for i, lab in enumerate(labels):
        if out and out[-1][2] == lab:
            out[-1] = (out[-1][0], i + 1, lab)
        else:
            out.append((i, i + 1, lab))
    return out


def color_bounds(matrix: np.ndarray, kind: str) -> tuple[float, float]:
    if kind in CORRELATION_KINDS:
        return -1.0, 1.0
    off = matrix[~np.eye(len(matrix), dtype=bool)]
    vmax = float(np.abs(off).max()) if off.size else 0.0
    vmax = vmax or 1.0
    return -vmax, vmax


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def render_heatmap(matrix, labels, path, kind: str = "standard", title: str | None = None,
                   bounds: tuple[float, float] | None = None) -> list[tuple[int, int, str]]:
    """Draw ``matrix`` as a heatmap with one tick per sector block.

    Correlation kinds use fixed bounds [-1, 1]; the de-meaned kind is scaled
    symmetrically about 0. Returns the sector blocks used for the ticks.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DataError(f"heatmap needs a square matrix, got {matrix.shape}")
    if len(labels) != matrix.shape[0]:
        raise DataError(f"{len(labels)} labels for a {matrix.shape[0]}x{matrix.shape[0]} matrix")
    lo, hi = bounds or color_bounds(matrix, kind)
    blocks = sector_blocks(list(labels))
    fig, ax = plt.subplots(figsize=(6, 5.2))
    im = ax.imshow(matrix, cmap="RdBu_r", vmin=lo, vmax=hi, interpolation="nearest")
    centers = [(a + b - 1) / 2 for a, b, _ in blocks]
    names = [str(lab) for _, _, lab in blocks]
    ax.set_xticks(centers, names, rotation=90, fontsize=7)
    ax.set_yticks(centers, names, fontsize=7)
    for a, _, _ in blocks[1:]:
        ax.axhline(a - 0.5, color="k", lw=0.3)
        ax.axvline(a - 0.5, color="k", lw=0.3)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    if title:
        ax.set_title(title, fontsize=9)
    legend = "; ".join(f"{c}: {SECTOR_NAMES[c]}" for c in dict.fromkeys(names) if c in SECTOR_NAMES)
    if legend:
        fig.text(0.01, 0.01, legend, fontsize=5, wrap=True)
    _save(fig, path)
    return blocks


def render_k_selection(curve, path, title: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ks = [k for k, v in zip(curve.k, curve.mean_quotient) if v is not None]
    ax.plot(ks, [v for v in curve.mean_quotient if v is not None], "o-", label="per contributing cluster")
    ax.plot(ks, [v for v in curve.mean_quotient_over_k if v is not None], "s--", ms=3, label="divided by k")
    ax.set_xlabel("number of clusters k")
    ax.set_ylabel("mean child quotient")
    ax.legend(fontsize=7)
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def _dates(dates):
    try:
        return np.array(dates, dtype="datetime64[D]")
    except (ValueError, TypeError):
        return np.arange(len(dates))


def _visible_events(events, x):
    """(number, date) for events inside the plotted date range."""
    if x.dtype.kind != "M" or not len(x):
        return []
    out = []
    for i, (date, _) in enumerate(events, start=1):
        try:
            d = np.datetime64(date, "D")
        except ValueError:
            continue
        if x.min() <= d <= x.max():
            out.append((i, d))
    return out


def render_timeline(timeline, path, events=(), title: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(8, 2.6))
    x = _dates(timeline.mid_dates)
    ax.plot(x, timeline.labels, "k.", ms=5)
    ax.step(x, timeline.labels, where="mid", color="0.6", lw=0.6)
    ax.set_yticks(range(1, timeline.k + 1))
    ax.set_ylabel("market state")
    for i, date in _visible_events(events, x):
        ax.axvline(date, color="tab:red", lw=0.6)
        ax.text(date, timeline.k + 0.3, f"({i})", fontsize=6, ha="center")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def render_mean_correlation(disjoint, sliding, path, events=(), title: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(8, 2.6))
    if sliding is not None:
        ax.plot(_dates(sliding[0]), sliding[1], ".", color="0.7", ms=1.5)
    ax.plot(_dates(disjoint[0]), disjoint[1], "k.", ms=5)
    ax.set_ylabel("mean correlation")
    for _, date in _visible_events(events, _dates(disjoint[0])):
        ax.axvline(date, color="tab:red", lw=0.6)
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    _save(fig, path)
