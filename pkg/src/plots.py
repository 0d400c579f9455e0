from __future__ import annotations

from typing import Sequence

import numpy as np
import matplotlib.pyplot as plt

from .data_models import KmVpc, PercentileBand, QqPoint, WormPoint
from .errors import SpecError
from .utils import figure_to_svg_bytes

PLOT_KINDS = ("bands", "wormplot", "km_vpc", "qq")
BAND_COLOURS = {5.0: "#1f77b4", 50.0: "#d62728", 95.0: "#1f77b4"}


def draw_percentile_bands(bands: Sequence[PercentileBand]) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.set_xlabel("Time (days)")
    ax.set_ylabel("npd")
    ax.set_title("npd percentiles vs theoretical prediction intervals")
    if not bands:
        ax.text(0.5, 0.5, "No residuals", ha="center", va="center", transform=ax.transAxes)
        fig.tight_layout()
        return fig
    centres = np.array([band.bin_center for band in bands])
    for column, percentile in enumerate(bands[0].percentiles):
        colour = BAND_COLOURS.get(percentile, "#7f7f7f")
        lower = np.array([band.lower[column] for band in bands])
        upper = np.array([band.upper[column] for band in bands])
        observed = np.array([band.observed[column] for band in bands])
        ax.fill_between(centres, lower, upper, color=colour, alpha=0.2, linewidth=0)
        ax.plot(centres, observed, marker="o", color=colour, label=f"{percentile:g}th percentile")
    ax.legend(loc="best")
    fig.tight_layout()
    return fig


def draw_wormplot(points: Sequence[WormPoint]) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.set_xlabel("Event or censoring time (days)")
    ax.set_ylabel("De-trended pd")
    ax.set_title("TTE wormplot")
    ax.axhline(0.0, color="#7f7f7f", linewidth=0.8)
    if not points:
        ax.text(0.5, 0.5, "No TTE residuals", ha="center", va="center", transform=ax.transAxes)
        fig.tight_layout()
        return fig
    ordered = sorted(points, key=lambda point: (point.time, point.rank))
    times = np.array([point.time for point in ordered])
    ax.vlines(times, [point.lower for point in ordered], [point.upper for point in ordered], color="#1f77b4", alpha=0.3)
    observed = [point for point in ordered if not point.imputed]
    imputed = [point for point in ordered if point.imputed]
    if observed:
        ax.scatter([p.time for p in observed], [p.detrended for p in observed], color="#d62728", s=14, label="event")
    if imputed:
        ax.scatter([p.time for p in imputed], [p.detrended for p in imputed], facecolors="none", edgecolors="#d62728", s=14, label="censored (imputed)")
    ax.legend(loc="best")
    fig.tight_layout()
    return fig


def draw_km_vpc(vpc: KmVpc) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.fill_between(vpc.bin_times, vpc.lower, vpc.upper, step="post", color="#1f77b4", alpha=0.25, linewidth=0, label=f"{vpc.level:.0%} replicate band")
    ax.step(vpc.bin_times, vpc.median, where="post", color="#1f77b4", linestyle="--", label="replicate median")
    curve = vpc.observed_curve
    ax.step(curve.times, curve.survival, where="post", color="#d62728", label="observed")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("Time (days)")
    ax.set_ylabel("Event-free probability")
    ax.set_title("Kaplan-Meier VPC")
    ax.legend(loc="best")
    fig.tight_layout()
    return fig


def draw_qq(points: Sequence[QqPoint]) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.set_xlabel("N(0, 1) quantile")
    ax.set_ylabel("Sample quantile")
    ax.set_title("npd QQ plot")
    if points:
        theoretical = [point.theoretical for point in points]
        ax.scatter(theoretical, [point.sample for point in points], s=10, color="#1f77b4")
        lo, hi = min(theoretical), max(theoretical)
        ax.plot([lo, hi], [lo, hi], color="#7f7f7f", linewidth=0.8)
    fig.tight_layout()
    return fig


def _infer_kind(data) -> str:
    if isinstance(data, KmVpc):
        return "km_vpc"
    first = data[0] if len(data) else None
    if isinstance(first, PercentileBand):
        return "bands"
    if isinstance(first, WormPoint):
        return "wormplot"
    if isinstance(first, QqPoint):
        return "qq"
    raise SpecError("cannot tell which plot to draw; pass kind", field="kind")


def render_svg(data, kind: str | None = None) -> bytes:
    """Deterministic SVG of one diagnostic; empty lists need an explicit kind."""

    kind = kind or _infer_kind(data)
    if kind == "bands":
        return figure_to_svg_bytes(draw_percentile_bands(data))
    if kind == "wormplot":
        return figure_to_svg_bytes(draw_wormplot(data))
    if kind == "km_vpc":
        return figure_to_svg_bytes(draw_km_vpc(data))
    if kind == "qq":
        return figure_to_svg_bytes(draw_qq(data))
    raise SpecError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}", field="kind")
