"""Practically-perfect probability fields from point reports.

Pipeline: Gaussian KDE of report locations on the coarse grid, bilinear
refinement to a ~5 km grid, disk integration to an expected count, Poisson
conversion to a probability, then thresholding into SPC risk levels.

Array layout: ``values[j, i]`` is the node at ``(origin.x + i*dx, origin.y + j*dy)``,
so arrays have shape ``(ny, nx)``.
"""

from __future__ import annotations

import datetime as dt
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import ndimage

from tornadoverif.errors import ArgumentError, DataError
from tornadoverif.geoproj import (
    GRID211,
    GRID211_ORIGIN,
    GRID211_SHAPE,
    GRID211_SPACING,
    GeoCoord,
    LambertConfig,
    ProjCoord,
    project,
    project_arrays,
)

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = 120_000.0
DEFAULT_REFINE = 16
DEFAULT_RADIUS = 40_000.0


class RiskLevel(enum.IntEnum):
    """SPC tornado probability categories, valued in percent."""

    P0 = 0
    P2 = 2
    P5 = 5
    P10 = 10
    P15 = 15
    P30 = 30
    P45 = 45
    P60 = 60

    @property
    def weight(self) -> int:
        return 1 if self is RiskLevel.P0 else int(self)

    @property
    def label(self) -> str:
        return f"{int(self)}%"

    @property
    def threshold(self) -> float:
        return int(self) / 100.0

    @classmethod
    def parse(cls, value: Any) -> "RiskLevel":
        """Accept ``"5%"``, ``"5"``, or ``5``; raise ``ValueError`` otherwise."""
        if isinstance(value, bool):
            raise ValueError(f"not a risk level: {value!r}")
        if isinstance(value, int):
            return cls(value)
        if isinstance(value, float) and value.is_integer():
            return cls(int(value))
        if isinstance(value, str):
            s = value.strip()
            if s.endswith("%"):
                s = s[:-1].strip()
            if s.isdigit():
                return cls(int(s))
        raise ValueError(f"not a risk level: {value!r}")


NONZERO_LEVELS = tuple(lv for lv in RiskLevel if lv is not RiskLevel.P0)
_THRESHOLDS = np.array([lv.threshold for lv in NONZERO_LEVELS])
_LEVEL_BY_CODE = np.array([int(lv) for lv in RiskLevel], dtype=np.int16)


@dataclass(frozen=True)
class RegularGrid:
    origin: ProjCoord
    dx: float
    dy: float
    nx: int
    ny: int
    crs: LambertConfig = GRID211

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0):
            raise ArgumentError("grid spacing must be positive")
        if self.nx < 2 or self.ny < 2:
            raise ArgumentError("grid needs at least 2x2 nodes")

    @classmethod
    def grid211(cls, cfg: LambertConfig = GRID211) -> "RegularGrid":
        o = project(cfg, GRID211_ORIGIN)
        nx, ny = GRID211_SHAPE
        return cls(o, GRID211_SPACING, GRID211_SPACING, nx, ny, cfg)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def xs(self) -> np.ndarray:
        return self.origin.x + self.dx * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.origin.y + self.dy * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs(), self.ys())

    def bounds(self) -> tuple[float, float, float, float]:
        """Outer cell-edge extent ``(xmin, ymin, xmax, ymax)``."""
        return (
            self.origin.x - self.dx / 2,
            self.origin.y - self.dy / 2,
            self.origin.x + (self.nx - 0.5) * self.dx,
            self.origin.y + (self.ny - 0.5) * self.dy,
        )

    def refined(self, factor: int) -> "RegularGrid":
        return RegularGrid(
            self.origin,
            self.dx / factor,
            self.dy / factor,
            (self.nx - 1) * factor + 1,
            (self.ny - 1) * factor + 1,
            self.crs,
        )


class FieldKind(str, enum.Enum):
    DENSITY = "density"
    EXPECTED_COUNT = "expected_count"
    PROBABILITY = "probability"


@dataclass(frozen=True)
class ScalarField:
    grid: RegularGrid
    values: np.ndarray
    kind: FieldKind

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise DataError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("field contains non-finite values")
        if self.kind is FieldKind.DENSITY and np.any(v < 0):
            raise DataError("density must be non-negative")
        if self.kind is FieldKind.PROBABILITY and (np.any(v < 0) or np.any(v > 1)):
            raise DataError("probability outside [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class CategoricalField:
    """Per-node risk level; ``codes`` index into :class:`RiskLevel` order."""

    grid: RegularGrid
    codes: np.ndarray

    def levels(self) -> np.ndarray:
        return _LEVEL_BY_CODE[self.codes]

    def present(self) -> list[RiskLevel]:
        return [list(RiskLevel)[c] for c in np.unique(self.codes)]


@dataclass(frozen=True)
class Report:
    proj: ProjCoord
    geo: GeoCoord
    time: dt.datetime
    attrs: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class ReportSet:
    reports: tuple[Report, ...]
    window_start: dt.datetime
    window_end: dt.datetime

    def __post_init__(self):
        object.__setattr__(self, "reports", tuple(self.reports))
        for r in self.reports:
            if not self.window_start <= r.time < self.window_end:
                raise DataError(f"report at {r.time.isoformat()} outside window")

    def __len__(self) -> int:
        return len(self.reports)

    def xy(self) -> np.ndarray:
        if not self.reports:
            return np.zeros((0, 2))
        return np.array([(r.proj.x, r.proj.y) for r in self.reports])

    def check_consistency(self, cfg: LambertConfig, tol_m: float = 1.0) -> None:
        if not self.reports:
            return
        lat = [r.geo.lat for r in self.reports]
        lon = [r.geo.lon for r in self.reports]
        x, y = project_arrays(cfg, lat, lon)
        err = np.hypot(x - self.xy()[:, 0], y - self.xy()[:, 1])
        if np.any(err > tol_m):
            raise DataError(f"projected/geographic mismatch up to {err.max():.3f} m")


def kde_density(
    points: ReportSet | np.ndarray,
    grid: RegularGrid,
    sigma: float = DEFAULT_SIGMA,
    cutoff_sigmas: float | None = None,
) -> ScalarField:
    """Sum of normalized 2-D Gaussians centred on each report.

    ``points`` is a ReportSet or an ``(N, 2)`` array of projected coordinates.
    Reports are accumulated in index order.  ``cutoff_sigmas`` drops kernel
    contributions beyond that many sigmas (6 gives < 1e-7 relative error).
    """
    if not sigma > 0:
        raise ArgumentError("sigma must be positive")
    xy = points.xy() if isinstance(points, ReportSet) else np.asarray(points, float).reshape(-1, 2)
    gx, gy = grid.mesh()
    out = np.zeros(grid.shape)
    norm = 1.0 / (2.0 * math.pi * sigma * sigma)
    for px, py in xy:
        d2 = (gx - px) ** 2 + (gy - py) ** 2
        contrib = norm * np.exp(-0.5 * d2 / (sigma * sigma))
        if cutoff_sigmas is not None:
            contrib[d2 > (cutoff_sigmas * sigma) ** 2] = 0.0
        out += contrib
    return ScalarField(grid, out, FieldKind.DENSITY)


def _interp_matrix(n: int, factor: int) -> np.ndarray:
    """Dense linear-interpolation matrix from ``n`` nodes to the refined nodes."""
    m = (n - 1) * factor + 1
    mat = np.zeros((m, n))
    k = np.arange(m)
    left = np.minimum(k // factor, n - 2)
    t = (k - left * factor) / factor
    mat[k, left] = 1.0 - t
    mat[k, left + 1] = t
    # node-coincident rows carry a single exact 1.0
    exact = (k % factor) == 0
    mat[k[exact]] = 0.0
    mat[k[exact], k[exact] // factor] = 1.0
    return mat


def bilinear_refine(f: ScalarField, factor: int) -> ScalarField:
    """Node-registered bilinear interpolation onto a grid ``factor`` times finer."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ArgumentError(f"refinement factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return f
    my = _interp_matrix(f.grid.ny, factor)
    mx = _interp_matrix(f.grid.nx, factor)
    values = my @ f.values @ mx.T
    return ScalarField(f.grid.refined(factor), values, f.kind)


def disk_offsets(grid: RegularGrid, radius: float) -> np.ndarray:
    """Boolean footprint of cell centres within ``radius`` of the centre cell."""
    ri = int(math.floor(radius / grid.dx))
    rj = int(math.floor(radius / grid.dy))
    di = np.arange(-ri, ri + 1) * grid.dx
    dj = np.arange(-rj, rj + 1) * grid.dy
    ddx, ddy = np.meshgrid(di, dj)
    return ddx**2 + ddy**2 <= radius * radius


def disk_integrate(f: ScalarField, radius: float = DEFAULT_RADIUS) -> ScalarField:
    """Expected count: ``cell_area`` times the sum of density over a disk of cells.

    Cells outside the grid contribute nothing.
    """
    if f.kind is not FieldKind.DENSITY:
        raise ArgumentError(f"disk_integrate needs a density field, got {f.kind.value}")
    if not radius > 0:
        raise ArgumentError("radius must be positive")
    if radius < 0.5 * min(f.grid.dx, f.grid.dy):
        logger.warning("disk radius %.1f m below half a cell; kernel is the centre cell only", radius)
    kernel = disk_offsets(f.grid, radius).astype(float)
    summed = ndimage.correlate(f.values, kernel, mode="constant", cval=0.0)
    lam = summed * f.grid.cell_area
    return ScalarField(f.grid, lam, FieldKind.EXPECTED_COUNT)


def poisson_prob(lam: ScalarField) -> ScalarField:
    """Probability of at least one event, ``1 - exp(-lambda)``."""
    if lam.kind is not FieldKind.EXPECTED_COUNT:
        raise ArgumentError(f"poisson_prob needs an expected_count field, got {lam.kind.value}")
    if np.any(lam.values < 0):
        raise DataError("negative expected count")
    return ScalarField(lam.grid, -np.expm1(-lam.values), FieldKind.PROBABILITY)


def categorize_values(p: np.ndarray) -> np.ndarray:
    """Level codes (0..7) for raw probabilities using half-open SPC brackets."""
    return np.searchsorted(_THRESHOLDS, p, side="right").astype(np.int8)


def categorize(p: ScalarField) -> CategoricalField:
    if p.kind is not FieldKind.PROBABILITY:
        raise ArgumentError(f"categorize needs a probability field, got {p.kind.value}")
    return CategoricalField(p.grid, categorize_values(p.values))


def level_of(p: float) -> RiskLevel:
    return list(RiskLevel)[int(categorize_values(np.array([p]))[0])]


@dataclass(frozen=True)
class PipelineParams:
    sigma: float = DEFAULT_SIGMA
    refine_factor: int = DEFAULT_REFINE
    radius: float = DEFAULT_RADIUS
    cutoff_sigmas: float | None = None


@dataclass(frozen=True)
class PipelineResult:
    density: ScalarField
    fine_density: ScalarField
    expected_count: ScalarField
    probability: ScalarField
    categories: CategoricalField


def probability_pipeline(
    reports: ReportSet | np.ndarray, grid: RegularGrid, params: PipelineParams = PipelineParams()
) -> PipelineResult:
    f = kde_density(reports, grid, params.sigma, params.cutoff_sigmas)
    fine = bilinear_refine(f, params.refine_factor)
    lam = disk_integrate(fine, params.radius)
    p = poisson_prob(lam)
    return PipelineResult(f, fine, lam, p, categorize(p))
