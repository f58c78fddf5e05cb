"""Planar polygon operations in projected (meter) coordinates.

Backed by shapely/GEOS.  Every public operation returns a normalized
``MultiPolygon``: exteriors counter-clockwise, holes clockwise, parts and
ring starts in canonical order, zero-area slivers dropped.  Boolean ops snap
to a ``1e-6`` grid (``GRID_SIZE``) so that shared edges cancel exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import shapely
from shapely.geometry import MultiPolygon, Polygon, box
from shapely.geometry.base import BaseGeometry
from shapely.geometry.polygon import orient

from tornadoverif.errors import EmptyGeometryError, GeometryError
from tornadoverif.geoproj import ProjCoord

logger = logging.getLogger(__name__)

GRID_SIZE = 1e-6
SLIVER_AREA = 1e-9
DEFAULT_EPS_AREA = 1.0e6  # 1 km^2

EMPTY = MultiPolygon()


def _polygons(g: BaseGeometry) -> list[Polygon]:
    if g is None or g.is_empty:
        return []
    if isinstance(g, Polygon):
        return [g]
    if isinstance(g, MultiPolygon):
        return list(g.geoms)
    if hasattr(g, "geoms"):
        out = []
        for part in g.geoms:
            out.extend(_polygons(part))
        return out
    # points and lines carry no area
    return []


def normalize(g: BaseGeometry | None) -> MultiPolygon:
    """Canonical MultiPolygon form of any (possibly mixed) geometry."""
    parts = []
    dropped = 0
    for p in _polygons(g):
        if p.area <= SLIVER_AREA:
            dropped += 1
            continue
        parts.append(orient(p, sign=1.0))
    if dropped:
        logger.debug("dropped %d degenerate sliver(s) below %.0e m^2", dropped, SLIVER_AREA)
    if not parts:
        return EMPTY
    mp = shapely.normalize(MultiPolygon(parts))
    # normalize() orients exteriors clockwise; flip back while keeping ring starts
    return MultiPolygon([orient(p, sign=1.0) for p in mp.geoms])


def check_valid(g: BaseGeometry, what: str = "geometry") -> None:
    if not shapely.is_valid(g):
        raise GeometryError(f"invalid {what}: {shapely.is_valid_reason(g)}")


def area(g: BaseGeometry) -> float:
    """Exterior area minus hole area, in squared coordinate units."""
    if g.is_empty:
        return 0.0
    check_valid(g)
    return float(g.area)


def intersect(a: BaseGeometry, b: BaseGeometry) -> MultiPolygon:
    if a.is_empty or b.is_empty:
        return EMPTY
    return normalize(shapely.intersection(a, b, grid_size=GRID_SIZE))


def union(a: BaseGeometry, b: BaseGeometry) -> MultiPolygon:
    return unary_union([a, b])


def difference(a: BaseGeometry, b: BaseGeometry) -> MultiPolygon:
    if a.is_empty:
        return EMPTY
    if b.is_empty:
        return normalize(shapely.set_precision(a, GRID_SIZE))
    return normalize(shapely.difference(a, b, grid_size=GRID_SIZE))


def unary_union(gs: Iterable[BaseGeometry]) -> MultiPolygon:
    gs = [g for g in gs if g is not None and not g.is_empty]
    if not gs:
        return EMPTY
    return normalize(shapely.union_all(gs, grid_size=GRID_SIZE))


def iou(a: BaseGeometry, b: BaseGeometry) -> float:
    """Intersection over union; 1 when both are empty, 0 when only one is."""
    ea, eb = a.is_empty, b.is_empty
    if ea and eb:
        return 1.0
    if ea or eb:
        return 0.0
    u = area(union(a, b))
    if u <= 0:
        return 1.0
    return min(1.0, area(intersect(a, b)) / u)


def centroid(g: BaseGeometry) -> ProjCoord:
    """Area-weighted centroid over all parts, holes subtracted."""
    if g.is_empty or g.area <= 0:
        raise EmptyGeometryError("centroid of an empty geometry")
    c = g.centroid
    return ProjCoord(c.x, c.y)


def contains_with_tolerance(outer: BaseGeometry, inner: BaseGeometry,
                            eps_area: float = DEFAULT_EPS_AREA) -> bool:
    return excess_area(outer, inner) <= eps_area


def excess_area(outer: BaseGeometry, inner: BaseGeometry) -> float:
    """Area of ``inner`` lying outside ``outer``."""
    return area(difference(inner, outer))


@dataclass(frozen=True)
class Domain:
    """Verification extent against which the 0% complement is taken."""

    polygon: MultiPolygon

    def __post_init__(self):
        poly = normalize(self.polygon)
        if poly.is_empty:
            raise GeometryError("verification domain is empty")
        check_valid(poly, "domain")
        object.__setattr__(self, "polygon", poly)

    @classmethod
    def from_bounds(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "Domain":
        return cls(MultiPolygon([box(xmin, ymin, xmax, ymax)]))

    @classmethod
    def from_grid(cls, grid) -> "Domain":
        return cls.from_bounds(*grid.bounds())

    @property
    def area(self) -> float:
        return self.polygon.area


def complement_within(domain: Domain, g: BaseGeometry) -> MultiPolygon:
    return difference(domain.polygon, intersect(g, domain.polygon))


def rectangle(xmin: float, ymin: float, xmax: float, ymax: float) -> MultiPolygon:
    return normalize(box(xmin, ymin, xmax, ymax))


def translate(g: BaseGeometry, dx: float, dy: float) -> MultiPolygon:
    return normalize(shapely.transform(g, lambda c: c + (dx, dy)))
