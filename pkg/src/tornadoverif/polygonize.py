"""Categorical raster -> exact cell-edge polygons -> ground-truth GeoJSON.

Each grid node owns the ``dx`` by ``dy`` cell centred on it.  Boundaries are
traced along cell edges, so the area of a band is exactly its cell count times
the cell area.  Cells touching only at a corner belong to separate parts; a
walk that revisits a vertex is split into simple loops, giving a hole that
touches its shell at one point, which is still a valid polygon.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import MultiPolygon, Polygon
from shapely.strtree import STRtree

from tornadoverif.errors import DomainError, ParseError
from tornadoverif.geometry import EMPTY, normalize
from tornadoverif.geoproj import LambertConfig, inverse_project_arrays, project_arrays
from tornadoverif.riskfield import CategoricalField, RiskLevel, RegularGrid

COORD_DIGITS = 8


@dataclass(frozen=True)
class BandPolygons:
    level: RiskLevel
    geometry: MultiPolygon
    crs: str = "grid"  # "grid" (projected meters) or "wgs84" (lon, lat)
    provenance: str = "ground_truth"


@dataclass(frozen=True)
class GroundTruth:
    date: dt.date
    bands: tuple[BandPolygons, ...]
    report_count: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        bands = tuple(sorted((b for b in self.bands if not b.geometry.is_empty), key=lambda b: b.level))
        levels = [b.level for b in bands]
        if len(set(levels)) != len(levels):
            raise ValueError("duplicate band level in ground truth")
        if RiskLevel.P0 in levels:
            raise ValueError("ground truth bands must be non-zero levels")
        object.__setattr__(self, "bands", bands)

    @property
    def max_level(self) -> RiskLevel:
        return self.bands[-1].level if self.bands else RiskLevel.P0


def _boundary_edges(mask: np.ndarray):
    """Directed unit edges (vertex lattice) with the masked cells on the left."""
    m = np.pad(mask, 1, constant_values=False)
    inner = m[1:-1, 1:-1]
    below = m[:-2, 1:-1]
    above = m[2:, 1:-1]
    left = m[1:-1, :-2]
    right = m[1:-1, 2:]
    edges = []
    j, i = np.nonzero(inner & ~below)
    edges.append(np.column_stack([i, j, i + 1, j]))
    j, i = np.nonzero(inner & ~right)
    edges.append(np.column_stack([i + 1, j, i + 1, j + 1]))
    j, i = np.nonzero(inner & ~above)
    edges.append(np.column_stack([i + 1, j + 1, i, j + 1]))
    j, i = np.nonzero(inner & ~left)
    edges.append(np.column_stack([i, j + 1, i, j]))
    return np.concatenate(edges)


def _split_simple(loop: list[tuple[int, int]]) -> list[list[tuple[int, int]]]:
    """Split a closed vertex loop (without repeated end) at revisited vertices."""
    out = []
    stack: list[tuple[int, int]] = []
    seen: dict[tuple[int, int], int] = {}
    for v in loop:
        if v in seen:
            k = seen[v]
            piece = stack[k:]
            for u in piece[1:]:
                del seen[u]
            del stack[k + 1:]
            out.append(piece)
        else:
            seen[v] = len(stack)
            stack.append(v)
    if len(stack) >= 3:
        out.append(stack)
    return [p for p in out if len(p) >= 3]


def _drop_collinear(ring: list[tuple[int, int]]) -> list[tuple[int, int]]:
    n = len(ring)
    keep = []
    for k in range(n):
        a, b, c = ring[k - 1], ring[k], ring[(k + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            keep.append(b)
    return keep


def trace_rings(mask: np.ndarray) -> list[list[tuple[int, int]]]:
    """Simple closed rings on the vertex lattice; CCW around filled regions.

    At saddle vertices (filled cells touching only diagonally) the walk turns
    toward the mask, so filled regions are 4-connected.  A walk that still
    revisits a vertex is split there into simple loops.
    """
    edges = _boundary_edges(np.asarray(mask, dtype=bool))
    outgoing: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
    for x0, y0, x1, y1 in edges.tolist():
        outgoing[(x0, y0)].append((x1, y1))

    def successor(prev, cur):
        outs = outgoing[cur]
        if len(outs) == 1:
            return outs[0]
        dx, dy = cur[0] - prev[0], cur[1] - prev[1]
        return (cur[0] - dy, cur[1] + dx)  # left turn

    used: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    rings = []
    for start in sorted(outgoing):
        for first in sorted(outgoing[start]):
            if (start, first) in used:
                continue
            loop = [start]
            prev, cur = start, first
            used.add((start, first))
            while True:
                nxt = successor(prev, cur)
                if (cur, nxt) in used:
                    break
                loop.append(cur)
                used.add((cur, nxt))
                prev, cur = cur, nxt
            for piece in _split_simple(loop):
                piece = _drop_collinear(piece)
                if len(piece) >= 4:
                    rings.append(piece)
    return rings


def _hole_probe(ring) -> tuple[float, float]:
    """Centre of the unmasked cell to the right of the ring's first edge."""
    (ax, ay), (bx, by) = ring[0], ring[1]
    ux, uy = int(np.sign(bx - ax)), int(np.sign(by - ay))
    return ax + 0.5 * ux + 0.5 * uy, ay + 0.5 * uy - 0.5 * ux


def _signed_area(ring) -> float:
    s = 0
    n = len(ring)
    for k in range(n):
        x0, y0 = ring[k]
        x1, y1 = ring[(k + 1) % n]
        s += x0 * y1 - x1 * y0
    return s / 2


def mask_to_multipolygon(mask: np.ndarray, grid: RegularGrid) -> MultiPolygon:
    """Exact polygonization of a boolean node mask in grid coordinates."""
    rings = trace_rings(mask)
    if not rings:
        return EMPTY
    x0 = grid.origin.x - grid.dx / 2
    y0 = grid.origin.y - grid.dy / 2

    def to_xy(ring):
        pts = [(x0 + i * grid.dx, y0 + j * grid.dy) for i, j in ring]
        return pts + [pts[0]]

    shells, holes = [], []
    for r in rings:
        (shells if _signed_area(r) > 0 else holes).append(r)
    shell_polys = [Polygon(to_xy(r)) for r in shells]
    assigned: list[list] = [[] for _ in shells]
    if holes:
        tree = STRtree(shell_polys)
        for h in holes:
            pi, pj = _hole_probe(h)
            probe = shapely.Point(x0 + pi * grid.dx, y0 + pj * grid.dy)
            cands = [k for k in tree.query(probe) if shell_polys[k].covers(probe)]
            # smallest containing shell is the immediate parent
            k = min(cands, key=lambda c: shell_polys[c].area)
            assigned[k].append(to_xy(h))
    polys = [Polygon(s.exterior.coords, hs) for s, hs in zip(shell_polys, assigned)]
    return normalize(MultiPolygon(polys))


def extract_bands(cat: CategoricalField, provenance: str = "ground_truth") -> list[BandPolygons]:
    """One band per non-zero level present, ascending by level."""
    levels = cat.levels()
    out = []
    for lv in RiskLevel:
        if lv is RiskLevel.P0:
            continue
        mask = levels == int(lv)
        if mask.any():
            out.append(BandPolygons(lv, mask_to_multipolygon(mask, cat.grid), "grid", provenance))
    return out


def _map_coords(geom, fn):
    return shapely.transform(geom, fn)


def reproject_bands(bands: list[BandPolygons], cfg: LambertConfig) -> list[BandPolygons]:
    """Grid-CRS bands to WGS84 (x=lon, y=lat), vertex for vertex."""

    def fn(c):
        lat, lon = inverse_project_arrays(cfg, c[:, 0], c[:, 1])
        return np.column_stack([lon, lat])

    out = []
    for b in bands:
        if b.crs != "grid":
            raise ValueError(f"band {b.level.label} already in {b.crs}")
        try:
            g = _map_coords(b.geometry, fn)
        except DomainError as exc:
            raise DomainError(f"band {b.level.label}: {exc}") from exc
        out.append(BandPolygons(b.level, g, "wgs84", b.provenance))
    return out


def forward_project_geometry(geom, cfg: LambertConfig):
    """WGS84 (lon, lat) geometry into the projected plane."""

    def fn(c):
        x, y = project_arrays(cfg, c[:, 1], c[:, 0])
        return np.column_stack([x, y])

    return _map_coords(geom, fn)


def _round_coords(obj):
    if isinstance(obj, float):
        return round(obj, COORD_DIGITS)
    return [_round_coords(o) for o in obj]


def bands_to_feature_collection(bands, **foreign) -> dict:
    features = []
    for b in sorted(bands, key=lambda b: b.level):
        geo = shapely.geometry.mapping(b.geometry)
        features.append({
            "type": "Feature",
            "properties": {"risk_level": b.level.label},
            "geometry": {"type": "MultiPolygon", "coordinates": _round_coords(_as_lists(geo["coordinates"]))},
        })
    return {"type": "FeatureCollection", **foreign, "features": features}


def _as_lists(coords):
    if isinstance(coords, (tuple, list)) and coords and isinstance(coords[0], (int, float)):
        return [float(c) for c in coords]
    return [_as_lists(c) for c in coords]


def ground_truth_filename(date: dt.date) -> str:
    return f"ground_truth_{date:%Y%m%d}.geojson"


def write_ground_truth(gt: GroundTruth, path) -> Path:
    path = Path(path)
    if path.is_dir():
        path = path / ground_truth_filename(gt.date)
    for b in gt.bands:
        if b.crs != "wgs84":
            raise ValueError("ground truth files hold WGS84 geometry; reproject first")
    doc = bands_to_feature_collection(
        gt.bands,
        date=gt.date.isoformat(),
        max_risk=gt.max_level.label,
        report_count=gt.report_count,
        **({"meta": gt.meta} if gt.meta else {}),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def _polygon_from_coords(rings, ctx: str) -> Polygon:
    try:
        return Polygon(rings[0], rings[1:])
    except (ValueError, TypeError, IndexError) as exc:
        raise ParseError(f"bad polygon coordinates ({exc})", ctx) from exc


def read_ground_truth(path) -> GroundTruth:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}:{exc.lineno}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("not a GeoJSON FeatureCollection", str(path))
    try:
        date = dt.date.fromisoformat(doc["date"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError("missing or malformed 'date'", str(path)) from exc
    bands = []
    for k, feat in enumerate(doc.get("features", [])):
        ctx = f"{path.name} feature {k}"
        try:
            level = RiskLevel.parse(feat["properties"]["risk_level"])
            geo = feat["geometry"]
            gtype, coords = geo["type"], geo["coordinates"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed feature ({exc})", ctx) from exc
        if gtype == "Polygon":
            geom = MultiPolygon([_polygon_from_coords(coords, ctx)])
        elif gtype == "MultiPolygon":
            geom = MultiPolygon([_polygon_from_coords(p, ctx) for p in coords])
        else:
            raise ParseError(f"unsupported geometry type {gtype!r}", ctx)
        bands.append(BandPolygons(level, geom, "wgs84", "ground_truth"))
    try:
        return GroundTruth(date, tuple(bands), int(doc.get("report_count", 0)), doc.get("meta", {}))
    except ValueError as exc:
        raise ParseError(str(exc), str(path)) from exc


def build_ground_truth(date: dt.date, cat: CategoricalField, cfg: LambertConfig,
                       report_count: int, meta: dict | None = None) -> GroundTruth:
    bands = reproject_bands(extract_bands(cat), cfg)
    return GroundTruth(date, tuple(bands), report_count, meta or {})


def band_area_check(bands: list[BandPolygons], cat: CategoricalField) -> float:
    """Largest relative mismatch between band area and cell count * cell area."""
    levels = cat.levels()
    worst = 0.0
    for b in bands:
        expect = (levels == int(b.level)).sum() * cat.grid.cell_area
        worst = max(worst, math.fabs(b.geometry.area - expect) / expect)
    return worst
