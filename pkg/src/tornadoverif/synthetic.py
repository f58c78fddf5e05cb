"""Synthetic tornado-report CSVs for the benchmark period.

Real report coordinates are not bundled; only per-day totals and the three
leading states are.  These generators place that many reports at plausible
in-state positions so the ground-truth pipeline has realistic inputs.  The
leading states get their listed counts; any remainder goes to neighbouring
states, never more per neighbour than the smallest listed count so the
listed states stay on top.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
from pathlib import Path
from typing import Sequence

import numpy as np

from tornadoverif.datastore import forecast_window
from tornadoverif.scoring import BenchmarkDay, load_benchmark_days

# rough in-state boxes (lat_min, lat_max, lon_min, lon_max), trimmed away from coasts and borders
STATE_BOXES = {
    "AL": (30.8, 34.8, -88.2, -85.2), "AR": (33.2, 36.3, -94.3, -90.2), "CA": (34.5, 39.5, -121.8, -118.5),
    "FL": (27.2, 30.6, -85.2, -81.3), "GA": (30.8, 34.8, -85.2, -81.6), "IL": (37.3, 42.3, -91.2, -87.8),
    "IN": (38.1, 41.6, -87.8, -85.0), "KS": (37.2, 39.8, -101.5, -95.0), "KY": (36.8, 38.6, -88.5, -83.5),
    "LA": (29.8, 32.9, -93.6, -90.2), "MI": (42.0, 45.0, -86.2, -83.0), "MO": (36.3, 40.4, -94.5, -90.5),
    "MS": (30.8, 34.8, -91.2, -88.5), "NC": (34.4, 36.4, -82.8, -77.2), "OK": (34.0, 36.8, -99.8, -94.8),
    "PA": (40.0, 41.8, -80.2, -75.5), "TN": (35.1, 36.5, -89.8, -82.2), "TX": (28.5, 34.2, -100.5, -94.3),
    "VA": (36.7, 39.0, -82.0, -76.8), "NE": (40.2, 42.8, -102.5, -95.8), "IA": (40.7, 43.3, -96.0, -90.6),
    "OH": (38.8, 41.6, -84.6, -80.8), "SC": (32.5, 35.0, -82.8, -79.0), "WI": (42.7, 45.5, -92.0, -88.0),
}

NEIGHBOURS = {
    "AL": ("MS", "GA", "TN", "FL"), "AR": ("MO", "TN", "MS", "LA", "TX", "OK"), "CA": (),
    "FL": ("GA", "AL"), "GA": ("AL", "FL", "SC", "NC", "TN"), "IL": ("IN", "MO", "IA", "WI", "KY"),
    "IN": ("IL", "OH", "KY", "MI"), "KS": ("NE", "MO", "OK"), "KY": ("TN", "IN", "OH", "VA", "IL", "MO"),
    "LA": ("TX", "AR", "MS"), "MI": ("IN", "OH", "WI"), "MO": ("IA", "IL", "KY", "TN", "AR", "OK", "KS", "NE"),
    "MS": ("LA", "AR", "TN", "AL"), "NC": ("VA", "TN", "GA", "SC"), "OK": ("KS", "MO", "AR", "TX"),
    "PA": ("OH",), "TN": ("KY", "VA", "NC", "GA", "AL", "MS", "AR", "MO"), "TX": ("OK", "AR", "LA"),
    "VA": ("NC", "KY", "TN"),
}

MAGNITUDES = ("EF0", "EF0", "EF1", "EF1", "EF2", "EFU")


def allocate_states(day: BenchmarkDay, rng: np.random.Generator) -> list[str]:
    """One state code per report for ``day``."""
    states = [s for s, n in day.top_states.items() for _ in range(n)]
    remainder = day.report_count - len(states)
    if remainder <= 0:
        return states[:day.report_count]
    cap = min(day.top_states.values())
    pool = sorted({nb for s in day.top_states for nb in NEIGHBOURS.get(s, ())} - set(day.top_states))
    used = dict.fromkeys(pool, 0)
    while remainder > 0:
        open_ = [s for s in pool if used[s] < cap]
        if not open_:  # too few neighbours: spill over onto the listed states
            states += list(rng.choice(sorted(day.top_states), remainder))
            break
        s = open_[int(rng.integers(len(open_)))]
        used[s] += 1
        states.append(s)
        remainder -= 1
    return states


def synthetic_day(day: BenchmarkDay, rng: np.random.Generator) -> list[dict]:
    start, _ = forecast_window(day.date)
    rows = []
    for state in allocate_states(day, rng):
        la0, la1, lo0, lo1 = STATE_BOXES[state]
        minute = int(rng.integers(0, 24 * 60))
        rows.append({
            "time_utc": (start + dt.timedelta(minutes=minute)).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "lat": f"{rng.uniform(la0, la1):.4f}",
            "lon": f"{rng.uniform(lo0, lo1):.4f}",
            "state": state,
            "magnitude": MAGNITUDES[int(rng.integers(len(MAGNITUDES)))],
        })
    rows.sort(key=lambda r: r["time_utc"])
    return rows


def synthetic_reports(days: Sequence[BenchmarkDay] | None = None, seed: int = 2025) -> list[dict]:
    days = load_benchmark_days() if days is None else days
    rows = []
    for d in days:
        rows += synthetic_day(d, np.random.default_rng([seed, d.date.toordinal()]))
    return rows


def reports_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["time_utc", "lat", "lon", "state", "magnitude"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def write_synthetic_reports(path, days: Sequence[BenchmarkDay] | None = None, seed: int = 2025) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(reports_csv(synthetic_reports(days, seed)))
    return path
