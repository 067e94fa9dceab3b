"""Deterministic SVG plots of fitted power laws.

The SVG writer is pinned (fixed hash salt, no date stamp, glyphs as paths) so
that equal inputs give byte-identical files.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_model import ContractError
from .dimension_lab import loglog_fit

PLOT_KINDS = ("loglog", "scatter")


@dataclass(frozen=True)
class PlotSeries:
    """One labelled (x, y) series.

    With ``x_is_scale`` the x values are covering scales and the reported
    slope is that of log y against log(1/x), the box-counting convention of
    :func:`loglog_fit`; otherwise it is the slope of log y against log x.
    """

    label: str
    x: Sequence[float]
    y: Sequence[float]
    fit: bool = True
    fit_range: tuple | None = None
    x_is_scale: bool = False


def series_slope(s: PlotSeries):
    """(slope, intercept) of the fitted line in the plotted coordinates."""
    x = np.asarray(s.x, dtype=float)
    y = np.asarray(s.y, dtype=float)
    lo, hi = s.fit_range if s.fit_range is not None else (0, x.size)
    slope, _ = loglog_fit(x, y, (lo, hi))
    lx = np.log(x[lo:hi])
    ly = np.log(y[lo:hi])
    # loglog_fit regresses on log(1/x) = -log x
    plotted = -slope
    intercept = float(ly.mean() - plotted * lx.mean())
    return (slope if s.x_is_scale else plotted), plotted, intercept


def emit_plot(series: Sequence[PlotSeries], kind: str, path, title: str = "") -> dict:
    """Write an SVG with one marker set per series plus fitted-line overlays.

    Returns the slope shown in the legend for every fitted series.
    """
    if kind not in PLOT_KINDS:
        raise ContractError(f"plot kind must be one of {PLOT_KINDS}")
    if not series:
        raise ContractError("nothing to plot: empty series list")
    for s in series:
        if len(s.x) == 0 or len(s.x) != len(s.y):
            raise ContractError(f"series {s.label!r} is empty or has mismatched x and y")

    import matplotlib
    from matplotlib.backends.backend_svg import FigureCanvasSVG
    from matplotlib.figure import Figure

    slopes = {}
    with matplotlib.rc_context({"svg.hashsalt": "fbsheet", "svg.fonttype": "path"}):
        fig = Figure(figsize=(6.0, 4.5))
        FigureCanvasSVG(fig)
        ax = fig.add_subplot(1, 1, 1)
        for s in series:
            x = np.asarray(s.x, dtype=float)
            y = np.asarray(s.y, dtype=float)
            label = s.label
            line = None
            if s.fit and kind == "loglog":
                shown, plotted, intercept = series_slope(s)
                slopes[s.label] = shown
                label = f"{s.label} (slope {shown:.4f})"
                lo, hi = s.fit_range if s.fit_range is not None else (0, x.size)
                xs = x[lo:hi]
                line = (xs, np.exp(intercept) * xs**plotted)
            elif s.fit and kind == "scatter" and x.size >= 2 and np.ptp(x) > 0:
                b, a = np.polyfit(x, y, 1)
                slopes[s.label] = float(b)
                label = f"{s.label} (slope {b:.4f})"
                xs = np.array([x.min(), x.max()])
                line = (xs, a + b * xs)
            pts = ax.plot(x, y, "o", ms=3, label=label)[0]
            if line is not None:
                ax.plot(line[0], line[1], "-", lw=1, color=pts.get_color(), label="_fit")
        if kind == "loglog":
            ax.set_xscale("log")
            ax.set_yscale("log")
        if title:
            ax.set_title(title)
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    return slopes


def finite_positive(x, y):
    """Drop pairs that cannot be shown on log axes."""
    keep = [i for i in range(len(x)) if x[i] > 0 and y[i] > 0 and math.isfinite(x[i]) and math.isfinite(y[i])]
    return [x[i] for i in keep], [y[i] for i in keep]
