"""Lambert Conformal Conic projection on a sphere, plus great-circle distance.

The default configuration is NCEP Grid 211 (80-km CONUS grid): a tangent cone
at 25N, central meridian 95W, sphere radius 6371.2 km.  Scalar functions take
and return :class:`GeoCoord` / :class:`ProjCoord`; the ``*_arrays`` variants do
the same math on numpy arrays and are what the grid and polygon code use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tornadoverif.errors import DomainError

EARTH_RADIUS_KM = 6371.0

# South pole is the apex-opposite singularity of a northern cone; keep a margin.
_MIN_LAT = -89.9999


def normalize_lon(lon: float) -> float:
    """Wrap a longitude into [-180, 180)."""
    out = math.fmod(lon + 180.0, 360.0)
    if out < 0:
        out += 360.0
    return out - 180.0


@dataclass(frozen=True)
class GeoCoord:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise DomainError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise DomainError(f"latitude {self.lat} outside [-90, 90]")
        object.__setattr__(self, "lon", normalize_lon(self.lon))


@dataclass(frozen=True)
class ProjCoord:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"non-finite projected coordinate ({self.x}, {self.y})")


@dataclass(frozen=True)
class LambertConfig:
    standard_parallel_1: float = 25.0
    standard_parallel_2: float = 25.0
    central_meridian: float = -95.0
    reference_latitude: float = 25.0
    earth_radius: float = 6_371_200.0
    false_easting: float = 0.0
    false_northing: float = 0.0

    def __post_init__(self):
        for p in (self.standard_parallel_1, self.standard_parallel_2):
            if not 0.0 < p < 90.0:
                raise ValueError(f"standard parallel {p} outside (0, 90)")
        if not self.earth_radius > 0:
            raise ValueError("earth_radius must be positive")

    @property
    def cone_constant(self) -> float:
        p1 = math.radians(self.standard_parallel_1)
        p2 = math.radians(self.standard_parallel_2)
        if math.isclose(p1, p2, abs_tol=1e-12):
            return math.sin(p1)
        return math.log(math.cos(p1) / math.cos(p2)) / math.log(
            math.tan(math.pi / 4 + p2 / 2) / math.tan(math.pi / 4 + p1 / 2)
        )

    @property
    def _rf(self) -> float:
        n = self.cone_constant
        p1 = math.radians(self.standard_parallel_1)
        return self.earth_radius * math.cos(p1) * math.tan(math.pi / 4 + p1 / 2) ** n / n

    @property
    def _rho0(self) -> float:
        phi0 = math.radians(self.reference_latitude)
        return self._rf / math.tan(math.pi / 4 + phi0 / 2) ** self.cone_constant


GRID211 = LambertConfig()
# Lower-left node of Grid 211 and its spacing/shape.
GRID211_ORIGIN = GeoCoord(12.19, -133.459)
GRID211_SPACING = 81_270.5
GRID211_SHAPE = (93, 65)


def project_arrays(cfg: LambertConfig, lat, lon):
    """Forward projection of degree arrays; returns ``(x, y)`` in meters."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if np.any(~np.isfinite(lat)) or np.any(~np.isfinite(lon)):
        raise DomainError("non-finite coordinate")
    if np.any(lat < _MIN_LAT) or np.any(lat > 90.0):
        raise DomainError("latitude outside the projection's convergent region")
    n = cfg.cone_constant
    phi = np.radians(lat)
    # wrap the longitude offset so the cut sits opposite the central meridian
    dlon = np.radians(((lon - cfg.central_meridian + 180.0) % 360.0) - 180.0)
    rho = cfg._rf / np.tan(np.pi / 4 + phi / 2) ** n
    theta = n * dlon
    x = rho * np.sin(theta) + cfg.false_easting
    y = cfg._rho0 - rho * np.cos(theta) + cfg.false_northing
    return x, y


def inverse_project_arrays(cfg: LambertConfig, x, y):
    """Inverse projection of meter arrays; returns ``(lat, lon)`` in degrees."""
    x = np.asarray(x, dtype=float) - cfg.false_easting
    y = cfg._rho0 - (np.asarray(y, dtype=float) - cfg.false_northing)
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)):
        raise DomainError("non-finite projected coordinate")
    n = cfg.cone_constant
    rho = np.sign(n) * np.hypot(x, y)
    if np.any(np.abs(rho) < 1e-9 * cfg.earth_radius):
        raise DomainError("projected point at the cone apex; longitude undefined")
    theta = np.arctan2(np.sign(n) * x, np.sign(n) * y)
    lat = np.degrees(2.0 * np.arctan((cfg._rf / rho) ** (1.0 / n)) - np.pi / 2)
    lon = np.degrees(theta / n) + cfg.central_meridian
    lon = ((lon + 180.0) % 360.0) - 180.0
    return lat, lon


def project(cfg: LambertConfig, g: GeoCoord) -> ProjCoord:
    x, y = project_arrays(cfg, g.lat, g.lon)
    return ProjCoord(float(x), float(y))


def inverse_project(cfg: LambertConfig, p: ProjCoord) -> GeoCoord:
    lat, lon = inverse_project_arrays(cfg, p.x, p.y)
    return GeoCoord(float(lat), float(lon))


def haversine_km(a: GeoCoord, b: GeoCoord, radius_km: float = EARTH_RADIUS_KM) -> float:
    """Great-circle distance in kilometers."""
    return float(haversine_km_arrays(a.lat, a.lon, b.lat, b.lon, radius_km))


def haversine_km_arrays(lat1, lon1, lat2, lon2, radius_km: float = EARTH_RADIUS_KM):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2.0 * radius_km * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
