"""Files in and out: report CSVs, prediction GeoJSON, the asset archive, run directories.

Layouts
-------
Report CSV (header required; extra columns are kept as attributes)::

    time_utc,lat,lon,state,magnitude
    2025-03-14T18:05:00Z,36.1,-94.2,AR,EF1

Archive, one directory per forecast date::

    <root>/<YYYYMMDD>/maps/<type_dir>[/<nested_dir>]/f<HH>.png
    <root>/<YYYYMMDD>/soundings/<station_id>/f<HH>.png
    <root>/<YYYYMMDD>/stations.csv            (id,lat,lon)

Run directory ``<runs>/<model>/<YYYYMMDD>/`` holds ``transcript.json``,
``prediction.geojson``, ``validation.json``, ``scores.tsv`` and, written
last, ``manifest.json``.  A run without a manifest is incomplete.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import math
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import shapely
from shapely.geometry import MultiPolygon, Polygon

from tornadoverif.errors import ArgumentError, ConfigError, DataError, DomainError, ParseError
from tornadoverif.geometry import DEFAULT_EPS_AREA, excess_area, normalize
from tornadoverif.geoproj import GRID211, GeoCoord, LambertConfig, ProjCoord, project_arrays
from tornadoverif.polygonize import forward_project_geometry
from tornadoverif.riskfield import Report, ReportSet, RiskLevel
from tornadoverif.scoring import DailyOutcome, MapForm, MapSource, RiskMap, format_scores, read_scores

logger = logging.getLogger(__name__)

UTC = dt.timezone.utc
FORECAST_HOURS = range(12, 37)
CONUS_LAT = (20.0, 55.0)
CONUS_LON = (-130.0, -60.0)


# --- reports ----------------------------------------------------------------

def forecast_window(date: dt.date) -> tuple[dt.datetime, dt.datetime]:
    """12:00 UTC on ``date`` to 12:00 UTC the next day."""
    start = dt.datetime(date.year, date.month, date.day, 12, tzinfo=UTC)
    return start, start + dt.timedelta(days=1)


def parse_utc(text: str) -> dt.datetime:
    """ISO-8601 timestamp; a trailing ``Z`` or no offset both mean UTC."""
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    t = dt.datetime.fromisoformat(s)
    return t.replace(tzinfo=UTC) if t.tzinfo is None else t.astimezone(UTC)


def _as_utc(t: dt.datetime) -> dt.datetime:
    return t.replace(tzinfo=UTC) if t.tzinfo is None else t.astimezone(UTC)


class RowError(DataError):
    def __init__(self, path, line: int, message: str):
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True)
class ReportColumns:
    """Column names in the report CSV; swap in another mapping for other layouts."""

    time: str = "time_utc"
    lat: str = "lat"
    lon: str = "lon"
    state: str = "state"
    magnitude: str = "magnitude"

    def required(self) -> tuple[str, ...]:
        return (self.time, self.lat, self.lon, self.state)


DEFAULT_COLUMNS = ReportColumns()


@dataclass(frozen=True)
class ReportRecord:
    time: dt.datetime
    lat: float
    lon: float
    state: str
    magnitude: str | None = None
    extra: dict = field(default_factory=dict, compare=False)


def read_report_records(path, columns: ReportColumns = DEFAULT_COLUMNS,
                        skip_bad_rows: bool = False) -> list[tuple[int, ReportRecord]]:
    """Parse every row; returns ``(line_number, record)`` pairs."""
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        return []
    reader = csv.DictReader(text.splitlines())
    missing = [c for c in columns.required() if c not in (reader.fieldnames or [])]
    if missing:
        raise ParseError(f"missing column(s) {', '.join(missing)}", f"{path}:1")
    known = set(columns.required()) | {columns.magnitude}
    out = []
    for rec in reader:
        line = reader.line_num
        try:
            lat, lon = float(rec[columns.lat]), float(rec[columns.lon])
            if not (math.isfinite(lat) and math.isfinite(lon)) or abs(lat) > 90 or abs(lon) > 180:
                raise ValueError(f"coordinate out of range ({lat}, {lon})")
            state = (rec[columns.state] or "").strip()
            mag = (rec.get(columns.magnitude) or "").strip() or None
            r = ReportRecord(parse_utc(rec[columns.time] or ""), lat, lon, state, mag,
                             {k: v for k, v in rec.items() if k not in known and k is not None})
        except (TypeError, ValueError) as exc:
            if skip_bad_rows:
                logger.warning("%s:%d: skipping bad row (%s)", path, line, exc)
                continue
            raise RowError(path, line, str(exc)) from exc
        if not (CONUS_LAT[0] <= lat <= CONUS_LAT[1] and CONUS_LON[0] <= lon <= CONUS_LON[1]):
            logger.warning("%s:%d: report at (%.3f, %.3f) outside CONUS bounds", path, line, lat, lon)
        out.append((line, r))
    return out


def check_window(start: dt.datetime, end: dt.datetime) -> tuple[dt.datetime, dt.datetime]:
    start, end = _as_utc(start), _as_utc(end)
    if end - start != dt.timedelta(hours=24):
        raise ArgumentError("forecast window must span exactly 24 h")
    if (start.hour, start.minute, start.second, start.microsecond) != (12, 0, 0, 0):
        raise ArgumentError("forecast window must start at 12:00 UTC")
    return start, end


def ingest_reports(path, window_start: dt.datetime, window_end: dt.datetime,
                   cfg: LambertConfig = GRID211, skip_bad_rows: bool = False,
                   columns: ReportColumns = DEFAULT_COLUMNS) -> ReportSet:
    """Reports with ``window_start <= time < window_end``, projected into the grid plane."""
    start, end = check_window(window_start, window_end)
    rows = [(ln, r) for ln, r in read_report_records(path, columns, skip_bad_rows) if start <= r.time < end]
    if not rows:
        return ReportSet((), start, end)
    x, y = project_arrays(cfg, [r.lat for _, r in rows], [r.lon for _, r in rows])
    reports = []
    for (line, r), xi, yi in zip(rows, x, y):
        attrs = {"state": r.state, "magnitude": r.magnitude, "line": line, **r.extra}
        reports.append(Report(ProjCoord(float(xi), float(yi)), GeoCoord(r.lat, r.lon), r.time, attrs))
    logger.info("%d report(s) in window %s", len(reports), start.date())
    return ReportSet(tuple(reports), start, end)


def ingest_reports_for_day(path, date: dt.date, cfg: LambertConfig = GRID211, **kw) -> ReportSet:
    return ingest_reports(path, *forecast_window(date), cfg, **kw)


# --- prediction validation ----------------------------------------------------

E_JSON = "E_JSON"
E_NOT_FEATURECOLLECTION = "E_NOT_FEATURECOLLECTION"
E_FEATURES = "E_FEATURES"
E_FEATURE = "E_FEATURE"
E_RISK_LEVEL_MISSING = "E_RISK_LEVEL_MISSING"
E_RISK_LEVEL_UNKNOWN = "E_RISK_LEVEL_UNKNOWN"
E_GEOMETRY_TYPE = "E_GEOMETRY_TYPE"
E_GEOMETRY_COORDS = "E_GEOMETRY_COORDS"
E_GEOMETRY_INVALID = "E_GEOMETRY_INVALID"
E_GEOMETRY_DOMAIN = "E_GEOMETRY_DOMAIN"
E_DUPLICATE_LEVEL = "E_DUPLICATE_LEVEL"
E_NESTING = "E_NESTING"
W_LEVEL_CANONICALIZED = "W_LEVEL_CANONICALIZED"
W_EMPTY_GEOMETRY = "W_EMPTY_GEOMETRY"


@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    feature: int | None = None

    def __str__(self) -> str:
        where = f" (feature {self.feature})" if self.feature is not None else ""
        return f"{self.code}{where}: {self.message}"


@dataclass
class ValidationReport:
    errors: list[Issue] = field(default_factory=list)
    warnings: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def codes(self) -> list[str]:
        return [i.code for i in self.errors]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "errors": [asdict(i) for i in self.errors],
                "warnings": [asdict(i) for i in self.warnings]}

    @classmethod
    def from_dict(cls, d: dict) -> "ValidationReport":
        return cls([Issue(**i) for i in d.get("errors", [])], [Issue(**i) for i in d.get("warnings", [])])


@dataclass(frozen=True)
class PredictionDocument:
    raw: str
    report: ValidationReport
    risk_map: RiskMap | None = None  # nested cumulative, projected; None when rejected
    wgs84: dict = field(default_factory=dict, compare=False)

    @property
    def accepted(self) -> bool:
        return self.report.ok

    @property
    def pred_max(self) -> RiskLevel | None:
        return self.risk_map.max_level if self.risk_map is not None else None


class _CoordError(ValueError):
    pass


def _position(p) -> tuple[float, float]:
    if not isinstance(p, (list, tuple)) or not 2 <= len(p) <= 3:
        raise _CoordError("position must be [lon, lat]")
    lon, lat = p[0], p[1]
    for v in (lon, lat):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise _CoordError("position values must be numbers")
    try:
        lon, lat = float(lon), float(lat)
    except OverflowError as exc:
        raise _CoordError("coordinate overflows a float") from exc
    if not (math.isfinite(lon) and math.isfinite(lat)):
        raise _CoordError("non-finite coordinate")
    if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
        raise _CoordError(f"coordinate ({lon}, {lat}) outside lon/lat range")
    return lon, lat


def _ring(r) -> list[tuple[float, float]]:
    if not isinstance(r, list):
        raise _CoordError("ring must be a list of positions")
    pts = [_position(p) for p in r]
    if len(pts) < 4:
        raise _CoordError("ring needs at least 4 positions")
    if pts[0] != pts[-1]:
        raise _CoordError("ring is not closed")
    return pts


def _polygon(rings) -> Polygon:
    if not isinstance(rings, list) or not rings:
        raise _CoordError("polygon needs at least an exterior ring")
    parsed = [_ring(r) for r in rings]
    return Polygon(parsed[0], parsed[1:])


def _geometry(geo) -> MultiPolygon:
    gtype = geo.get("type")
    coords = geo.get("coordinates")
    if gtype == "Polygon":
        return MultiPolygon([_polygon(coords)])
    if not isinstance(coords, list):
        raise _CoordError("MultiPolygon coordinates must be a list")
    return MultiPolygon([_polygon(p) for p in coords])


def _reject_constant(name):
    raise ValueError(f"{name} is not valid JSON")


def validate_prediction(text: Any, cfg: LambertConfig = GRID211, eps_area: float = DEFAULT_EPS_AREA,
                        date: dt.date | None = None, source: MapSource = MapSource.PREDICTION
                        ) -> PredictionDocument:
    """Check a submitted outlook against the submission contract.

    Never raises on bad input: every problem becomes a coded :class:`Issue`
    and the document is accepted only when there are no errors.
    """
    report = ValidationReport()
    raw = text if isinstance(text, str) else repr(text)

    def reject(code, msg, k=None):
        report.errors.append(Issue(code, msg, k))
        return PredictionDocument(raw, report)

    if isinstance(text, (bytes, bytearray)):
        try:
            text = raw = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            return reject(E_JSON, f"not UTF-8 ({exc})")
    if not isinstance(text, str):
        return reject(E_JSON, f"expected a JSON string, got {type(text).__name__}")
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except (ValueError, RecursionError) as exc:
        return reject(E_JSON, f"malformed JSON ({str(exc)[:200]})")
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        return reject(E_NOT_FEATURECOLLECTION, "top level must be a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        return reject(E_FEATURES, "'features' must be a list")

    wgs: dict[RiskLevel, MultiPolygon] = {}
    projected: dict[RiskLevel, MultiPolygon] = {}
    for k, feat in enumerate(features):
        if not isinstance(feat, dict) or feat.get("type") != "Feature":
            report.errors.append(Issue(E_FEATURE, "each entry must be a GeoJSON Feature", k))
            continue
        props = feat.get("properties")
        if not isinstance(props, dict) or "risk_level" not in props:
            report.errors.append(Issue(E_RISK_LEVEL_MISSING, "properties.risk_level is required", k))
            continue
        value = props["risk_level"]
        try:
            level = RiskLevel.parse(value)
            if level is RiskLevel.P0:
                raise ValueError("0% is not a drawable category")
        except (ValueError, TypeError):
            report.errors.append(Issue(E_RISK_LEVEL_UNKNOWN, f"risk_level {str(value)[:40]!r} is not one of "
                                       "2%, 5%, 10%, 15%, 30%, 45%, 60%", k))
            continue
        if value != level.label:
            report.warnings.append(Issue(W_LEVEL_CANONICALIZED, f"{value!r} read as {level.label!r}", k))
        geo = feat.get("geometry")
        if not isinstance(geo, dict) or geo.get("type") not in ("Polygon", "MultiPolygon"):
            gtype = geo.get("type") if isinstance(geo, dict) else type(geo).__name__
            report.errors.append(Issue(E_GEOMETRY_TYPE, f"geometry must be Polygon or MultiPolygon, "
                                       f"got {str(gtype)[:40]}", k))
            continue
        try:
            g = _geometry(geo)
        except _CoordError as exc:
            report.errors.append(Issue(E_GEOMETRY_COORDS, str(exc), k))
            continue
        except (ValueError, TypeError, shapely.errors.GEOSException) as exc:
            report.errors.append(Issue(E_GEOMETRY_COORDS, f"unusable coordinates ({exc})", k))
            continue
        if not shapely.is_valid(g):
            report.errors.append(Issue(E_GEOMETRY_INVALID, shapely.is_valid_reason(g), k))
            continue
        if level in wgs:
            report.errors.append(Issue(E_DUPLICATE_LEVEL, f"second feature for {level.label}; "
                                       "use one MultiPolygon per level", k))
            continue
        norm = normalize(g)
        if norm.is_empty:
            report.warnings.append(Issue(W_EMPTY_GEOMETRY, f"{level.label} has no area; ignored", k))
            continue
        try:
            proj = forward_project_geometry(norm, cfg)
        except DomainError as exc:
            report.errors.append(Issue(E_GEOMETRY_DOMAIN, str(exc), k))
            continue
        if not shapely.is_valid(proj):
            report.errors.append(Issue(E_GEOMETRY_INVALID, f"invalid after projection: "
                                       f"{shapely.is_valid_reason(proj)}", k))
            continue
        wgs[level] = norm
        projected[level] = normalize(proj)

    if report.errors:
        return PredictionDocument(raw, report)
    levels = sorted(projected)
    for a in range(len(levels)):
        for b in range(a + 1, len(levels)):
            lo, hi = levels[a], levels[b]
            excess = excess_area(projected[lo], projected[hi])
            if excess > eps_area:
                report.errors.append(Issue(E_NESTING, f"{hi.label} extends {excess / 1e6:.3f} km^2 "
                                           f"outside {lo.label}"))
    if report.errors:
        return PredictionDocument(raw, report)
    day = date if date is not None else _doc_date(doc)
    m = RiskMap(day, projected, MapForm.NESTED, source, "grid")
    return PredictionDocument(raw, report, m, dict(sorted(wgs.items())))


def _doc_date(doc: dict) -> dt.date | None:
    try:
        return dt.date.fromisoformat(doc["date"])
    except (KeyError, TypeError, ValueError):
        return None


# --- forecast archive ------------------------------------------------------------

_HOUR_FILE = re.compile(r"^f(\d{2})\.png$")


@dataclass(frozen=True)
class Station:
    id: str
    coord: GeoCoord


@dataclass(frozen=True)
class ArchiveIndex:
    date: dt.date
    root: Path
    map_types: tuple[str, ...]  # top-level folder names under maps/
    maps: dict  # (type path, hour) -> Path; nested types use "folder/sub"
    stations: tuple[Station, ...]
    soundings: dict  # (station id, hour) -> Path

    @property
    def asset_types(self) -> list[str]:
        return sorted({t for t, _ in self.maps})

    def nested_types(self, folder: str) -> list[str]:
        return [t for t in self.asset_types if t.startswith(folder + "/")]

    def map_asset(self, type_path: str, hour: int) -> Path | None:
        return self.maps.get((type_path, hour))

    def sounding_asset(self, station_id: str, hour: int) -> Path | None:
        return self.soundings.get((station_id, hour))

    def station_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([s.coord.lat for s in self.stations]),
                np.array([s.coord.lon for s in self.stations]))


def day_dir(archive_root, date: dt.date) -> Path:
    return Path(archive_root) / f"{date:%Y%m%d}"


def _hour_files(d: Path) -> dict[int, Path]:
    out = {}
    for f in d.iterdir():
        m = _HOUR_FILE.match(f.name)
        if m and f.is_file():
            hour = int(m.group(1))
            if hour in FORECAST_HOURS:
                out[hour] = f
            else:
                logger.debug("ignoring %s: hour outside 12-36", f)
    return out


def read_stations(path: Path) -> tuple[Station, ...]:
    stations = []
    seen = set()
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"id", "lat", "lon"} <= set(reader.fieldnames or []):
            raise ConfigError(f"{path}: station manifest needs id,lat,lon columns")
        for rec in reader:
            sid = rec["id"].strip()
            if sid in seen:
                raise ConfigError(f"{path}:{reader.line_num}: duplicate station id {sid!r}")
            try:
                coord = GeoCoord(float(rec["lat"]), float(rec["lon"]))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}:{reader.line_num}: bad station row ({exc})") from exc
            seen.add(sid)
            stations.append(Station(sid, coord))
    return tuple(sorted(stations, key=lambda s: s.id))


def build_index(archive_root, date: dt.date) -> ArchiveIndex:
    root = Path(archive_root)
    if not root.is_dir():
        raise ConfigError(f"archive root {root} does not exist")
    d = day_dir(root, date)
    maps: dict[tuple[str, int], Path] = {}
    folders: list[str] = []
    maps_dir = d / "maps"
    if maps_dir.is_dir():
        for top in sorted(p for p in maps_dir.iterdir() if p.is_dir()):
            folders.append(top.name)
            for sub in [top, *sorted(p for p in top.rglob("*") if p.is_dir())]:
                type_path = sub.relative_to(maps_dir).as_posix()
                for hour, f in _hour_files(sub).items():
                    maps[(type_path, hour)] = f
    soundings: dict[tuple[str, int], Path] = {}
    stations: tuple[Station, ...] = ()
    snd_dir = d / "soundings"
    manifest = d / "stations.csv"
    if manifest.is_file():
        stations = read_stations(manifest)
    elif snd_dir.is_dir():
        raise ConfigError(f"{d}: soundings/ present but stations.csv missing")
    if snd_dir.is_dir():
        for sd in sorted(p for p in snd_dir.iterdir() if p.is_dir()):
            for hour, f in _hour_files(sd).items():
                soundings[(sd.name, hour)] = f
    if not d.is_dir():
        logger.warning("no archive directory for %s under %s", date, root)
    return ArchiveIndex(date, root, tuple(folders), maps, stations, soundings)


# --- run persistence ---------------------------------------------------------------

TRANSCRIPT = "transcript.json"
PREDICTION = "prediction.geojson"
VALIDATION = "validation.json"
SCORES = "scores.tsv"
MANIFEST = "manifest.json"


def run_dir(runs_root, model: str, date: dt.date) -> Path:
    safe = re.sub(r"[^A-Za-z0-9._:+-]", "_", model)
    return Path(runs_root) / safe / f"{date:%Y%m%d}"


def _atomic_write(path: Path, data: str) -> str:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(data)
    os.replace(tmp, path)
    return hashlib.sha256(data.encode()).hexdigest()


@dataclass(frozen=True)
class LoadedRun:
    path: Path
    complete: bool
    transcript: dict | None
    prediction_text: str | None
    validation: ValidationReport | None
    outcomes: list[DailyOutcome]
    manifest: dict | None
    problems: tuple[str, ...] = ()


def persist_run(path, transcript: dict, prediction_text: str | None,
                validation: ValidationReport | None, outcomes: Sequence[DailyOutcome] = (),
                meta: dict | None = None) -> Path:
    """Write a run directory; the manifest goes last so partial writes are detectable."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    old = path / MANIFEST
    if old.exists():
        old.unlink()
    digests = {TRANSCRIPT: _atomic_write(path / TRANSCRIPT, json.dumps(transcript, indent=1, sort_keys=True) + "\n")}
    if prediction_text is not None:
        digests[PREDICTION] = _atomic_write(path / PREDICTION, prediction_text)
    if validation is not None:
        digests[VALIDATION] = _atomic_write(path / VALIDATION, json.dumps(validation.to_dict(), indent=1) + "\n")
    if outcomes:
        digests[SCORES] = _atomic_write(path / SCORES, format_scores(outcomes))
    manifest = {"files": digests, "meta": meta or {}}
    _atomic_write(path / MANIFEST, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_run(path) -> LoadedRun:
    path = Path(path)
    problems = []
    manifest = None
    mpath = path / MANIFEST
    if mpath.is_file():
        try:
            manifest = json.loads(mpath.read_text())
        except json.JSONDecodeError:
            problems.append("manifest unreadable")
    else:
        problems.append("manifest missing (interrupted run)")
    if manifest is not None:
        for name, digest in manifest.get("files", {}).items():
            f = path / name
            if not f.is_file():
                problems.append(f"{name} missing")
            elif hashlib.sha256(f.read_bytes()).hexdigest() != digest:
                problems.append(f"{name} does not match manifest")

    def opt_text(name):
        f = path / name
        return f.read_text() if f.is_file() else None

    t = opt_text(TRANSCRIPT)
    v = opt_text(VALIDATION)
    try:
        transcript = json.loads(t) if t is not None else None
        validation = ValidationReport.from_dict(json.loads(v)) if v is not None else None
    except (json.JSONDecodeError, TypeError) as exc:
        problems.append(f"unreadable run file ({exc})")
        transcript = validation = None
    outcomes = read_scores(path / SCORES) if (path / SCORES).is_file() else []
    return LoadedRun(path, not problems, transcript, opt_text(PREDICTION), validation, outcomes,
                     manifest, tuple(problems))


def iter_runs(runs_root) -> list[Path]:
    """Every ``<model>/<date>`` run directory under ``runs_root``, sorted."""
    root = Path(runs_root)
    if not root.is_dir():
        raise ConfigError(f"runs directory {root} does not exist")
    return sorted(p for p in root.glob("*/*") if p.is_dir() and re.fullmatch(r"\d{8}", p.name))
