"""Tool catalog, argument checking and dispatch against an archive index."""

from __future__ import annotations

import base64
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from tornadoverif.datastore import FORECAST_HOURS, ArchiveIndex, Station
from tornadoverif.geoproj import haversine_km_arrays

logger = logging.getLogger(__name__)

LIST_MAPS = "list_available_map_types"
REQUEST_MAP = "request_hrrr_map"
REQUEST_SOUNDING = "request_sounding"
SUBMIT = "submit_tornado_prediction"
TOOL_NAMES = (LIST_MAPS, REQUEST_MAP, REQUEST_SOUNDING, SUBMIT)

# result error codes
ARGUMENT_ERROR = "argument_error"
MAP_NOT_FOUND = "map_not_found"
QUOTA_EXCEEDED = "quota_exceeded"
SOUNDING_ERROR = "sounding_generation_error"
UNKNOWN_TOOL = "unknown_tool"
SESSION_COMPLETE = "session_complete"
INVALID_PREDICTION = "invalid_prediction"

_HOUR = {"type": "integer", "minimum": FORECAST_HOURS.start, "maximum": FORECAST_HOURS.stop - 1}


def tool_schemas(quota: int) -> list[dict]:
    """JSON-schema tool descriptions sent to the agent each turn."""
    obj = lambda props, req: {"type": "object", "properties": props, "required": req}  # noqa: E731
    return [
        {"name": LIST_MAPS,
         "description": "Return the names of the HRRR map products available for this forecast day.",
         "parameters": obj({}, [])},
        {"name": REQUEST_MAP,
         "description": "Fetch one HRRR map image (PNG) by product name and forecast hour 12-36.",
         "parameters": obj({
             "map_type_directory": {"type": "string",
                                    "description": "Product name exactly as listed by list_available_map_types."},
             "forecast_hour": {**_HOUR, "description": "Forecast hour from the 00 UTC run, 12 to 36."},
         }, ["map_type_directory", "forecast_hour"])},
        {"name": REQUEST_SOUNDING,
         "description": f"Fetch a skew-T sounding image (PNG) at the model station closest to a point, "
                        f"for forecast hour 12-36. At most {quota} per day.",
         "parameters": obj({
             "latitude": {"type": "number", "description": "Latitude in decimal degrees."},
             "longitude": {"type": "number", "description": "Longitude in decimal degrees (west is negative)."},
             "forecast_hour": {**_HOUR, "description": "Forecast hour from the 00 UTC run, 12 to 36."},
         }, ["latitude", "longitude", "forecast_hour"])},
        {"name": SUBMIT,
         "description": "Submit the final outlook. Allowed once; the day ends after this call. The value is a "
                        "GeoJSON FeatureCollection string whose Features carry properties.risk_level and a "
                        "Polygon or MultiPolygon, one Feature per level, higher levels inside lower ones.",
         "parameters": obj({
             "prediction_geojson": {"type": "string", "description": "The FeatureCollection as a JSON string."},
         }, ["prediction_geojson"])},
    ]


TOOL_SCHEMAS = tool_schemas(50)


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    arguments: Any  # dict once decoded; raw value kept for error reporting

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "arguments": self.arguments}

    @classmethod
    def from_dict(cls, d: dict) -> "ToolCall":
        return cls(str(d["id"]), str(d["name"]), d.get("arguments", {}))


@dataclass(frozen=True)
class ImageRef:
    path: str
    media_type: str = "image/png"

    def part(self, mode: str = "path") -> dict:
        out = {"type": "image", "media_type": self.media_type, "path": self.path}
        if mode == "base64":
            out["data"] = base64.b64encode(Path(self.path).read_bytes()).decode("ascii")
        return out


@dataclass(frozen=True)
class ToolResult:
    call_id: str
    name: str
    text: str
    image: ImageRef | None = None
    error: str | None = None
    quota_remaining: int | None = None
    terminal: bool = False

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {"call_id": self.call_id, "name": self.name, "text": self.text,
                "image": self.image.path if self.image else None, "error": self.error,
                "quota_remaining": self.quota_remaining, "terminal": self.terminal}

    @classmethod
    def from_dict(cls, d: dict) -> "ToolResult":
        img = ImageRef(d["image"]) if d.get("image") else None
        return cls(d["call_id"], d["name"], d["text"], img, d.get("error"), d.get("quota_remaining"),
                   bool(d.get("terminal", False)))


class ArgError(ValueError):
    pass


def decode_arguments(raw) -> dict:
    if isinstance(raw, str):
        try:
            raw = json.loads(raw) if raw.strip() else {}
        except (ValueError, RecursionError) as exc:
            raise ArgError(f"arguments are not valid JSON ({exc})") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ArgError("arguments must be a JSON object")
    return raw


def _need(args: dict, key: str):
    if key not in args:
        raise ArgError(f"missing required argument '{key}'")
    return args[key]


def _hour(args: dict) -> int:
    h = _need(args, "forecast_hour")
    if isinstance(h, bool) or not isinstance(h, int):
        raise ArgError(f"forecast_hour must be an integer, got {json.dumps(h)[:40]}")
    if h not in FORECAST_HOURS:
        raise ArgError(f"forecast_hour must be between 12 and 36, got {h}")
    return h


def _number(args: dict, key: str, limit: float) -> float:
    v = _need(args, key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ArgError(f"{key} must be a number")
    try:
        v = float(v)
    except OverflowError as exc:
        raise ArgError(f"{key} is out of range") from exc
    if not math.isfinite(v) or abs(v) > limit:
        raise ArgError(f"{key} must be within [-{limit:g}, {limit:g}]")
    return v


def nearest_station(stations: tuple[Station, ...], lat: float, lon: float,
                    tie_km: float = 1e-9) -> tuple[Station, float]:
    """Closest station by great-circle distance; ties go to the smallest id.

    ``stations`` must be sorted by id (``ArchiveIndex`` keeps them so).
    """
    slat = np.array([s.coord.lat for s in stations])
    slon = np.array([s.coord.lon for s in stations])
    d = haversine_km_arrays(lat, lon, slat, slon)
    k = int(np.flatnonzero(d <= d.min() + tie_km)[0])
    return stations[k], float(d[k])


class Dispatcher:
    """Executes tool calls for one date; owns no session state besides the archive."""

    def __init__(self, index: ArchiveIndex):
        self.index = index

    def list_map_types(self) -> list[str]:
        return sorted(self.index.map_types)

    def map_asset(self, type_path: str, hour: int) -> tuple[Path | None, str]:
        p = self.index.map_asset(type_path, hour)
        if p is not None and p.is_file():
            return p, ""
        nested = self.index.nested_types(type_path)
        if nested:
            return None, (f"'{type_path}' is a group; request one of: " + ", ".join(nested))
        if any(t == type_path for t in self.index.asset_types):
            return None, f"no image for '{type_path}' at forecast hour {hour}"
        return None, f"unknown map type '{type_path}'"

    def nearest(self, lat: float, lon: float) -> tuple[Station, float]:
        return nearest_station(self.index.stations, lat, lon)
