"""Static overlay images of observed vs predicted risk bands (lon/lat axes)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import PathPatch  # noqa: E402
from matplotlib.path import Path as MplPath  # noqa: E402
from shapely.geometry.base import BaseGeometry  # noqa: E402

from tornadoverif.riskfield import RiskLevel  # noqa: E402

LEVEL_COLORS = {
    RiskLevel.P2: "#008b00", RiskLevel.P5: "#8b4726", RiskLevel.P10: "#ffc800", RiskLevel.P15: "#ff0000",
    RiskLevel.P30: "#ff00ff", RiskLevel.P45: "#912cee", RiskLevel.P60: "#104e8b",
}


def _patch(geom: BaseGeometry, **kw) -> PathPatch | None:
    verts, codes = [], []
    for poly in getattr(geom, "geoms", [geom]):
        for ring in (poly.exterior, *poly.interiors):
            xy = list(ring.coords)
            verts += xy
            codes += [MplPath.MOVETO] + [MplPath.LINETO] * (len(xy) - 2) + [MplPath.CLOSEPOLY]
    if not verts:
        return None
    return PathPatch(MplPath(verts, codes), **kw)


def render_overlay(gt_bands: dict, pred_bands: dict, path, title: str = "",
                   extent=(-125.0, -66.0, 24.0, 50.0)) -> Path:
    """``*_bands`` map RiskLevel to lon/lat geometry (disjoint or cumulative both work).

    Observed bands are filled; predicted bands are hatched outlines, so
    overlapping regions show both.
    """
    fig, ax = plt.subplots(figsize=(8, 5), dpi=100)
    for lv, g in sorted(gt_bands.items()):
        p = _patch(g, facecolor=LEVEL_COLORS[lv], edgecolor="none", alpha=0.35)
        if p is not None:
            ax.add_patch(p)
    for lv, g in sorted(pred_bands.items()):
        p = _patch(g, facecolor="none", edgecolor=LEVEL_COLORS[lv], hatch="//", linewidth=1.5)
        if p is not None:
            ax.add_patch(p)
    handles = [plt.Rectangle((0, 0), 1, 1, color=LEVEL_COLORS[lv], alpha=0.6)
               for lv in sorted(set(gt_bands) | set(pred_bands))]
    if handles:
        ax.legend(handles, [lv.label for lv in sorted(set(gt_bands) | set(pred_bands))],
                  loc="lower right", fontsize=8, title="filled: observed, hatched: forecast", title_fontsize=7)
    ax.set_xlim(extent[0], extent[1])
    ax.set_ylim(extent[2], extent[3])
    ax.set_aspect(1.25)
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    ax.grid(alpha=0.3)
    ax.set_title(title, fontsize=10)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path
