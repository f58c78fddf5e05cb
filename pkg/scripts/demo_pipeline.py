"""End-to-end desk demo: synthetic reports -> ground truths -> stub archive -> scripted agent -> scores.

Everything is written under ``--work`` (default ``work/``).  The scripted
agent lists map types, looks at one map, takes one sounding at the day's median
report position, and submits nested boxes (2% to 15%) around it, so the demo
exercises every stage without an external model.

    python3 scripts/demo_pipeline.py --work work --days 2025-03-14 2025-03-15 2025-04-02
"""

import argparse
import datetime as dt
import json
from pathlib import Path

import numpy as np

from tornadoverif.cli import main as cli_main
from tornadoverif.synthetic import synthetic_reports, write_synthetic_reports

PNG = b"\x89PNG\r\n\x1a\n"


def stub_archive(root: Path, date: dt.date, types=("refc", "stp", "uh", "winds/500mb")):
    d = root / f"{date:%Y%m%d}"
    for t in types:
        (d / "maps" / t).mkdir(parents=True, exist_ok=True)
        for h in range(12, 37):
            (d / "maps" / t / f"f{h:02d}.png").write_bytes(PNG + f"{t} f{h}".encode())
    stations = [("KOUN", 35.18, -97.44), ("KSGF", 37.23, -93.40), ("KLZK", 34.83, -92.26),
                ("KJAN", 32.32, -90.08), ("KBMX", 33.17, -86.77), ("KILX", 40.15, -89.34)]
    (d / "stations.csv").write_text("id,lat,lon\n" + "".join(f"{s},{a},{o}\n" for s, a, o in stations))
    for s, _, _ in stations:
        (d / "soundings" / s).mkdir(parents=True, exist_ok=True)
        for h in range(12, 37):
            (d / "soundings" / s / f"f{h:02d}.png").write_bytes(PNG + f"{s} f{h}".encode())


def scripted_agent(rows, date: dt.date) -> dict:
    day = [r for r in rows if r["time_utc"][:10] == date.isoformat()]
    if day:
        lat = float(np.median([float(r["lat"]) for r in day]))
        lon = float(np.median([float(r["lon"]) for r in day]))
    else:
        lat, lon = 35.0, -95.0
    features = []
    for level, hx, hy in (("2%", 7.0, 5.0), ("5%", 5.0, 3.5), ("10%", 3.5, 2.5), ("15%", 2.0, 1.5)):
        box = [[lon - hx, lat - hy], [lon + hx, lat - hy], [lon + hx, lat + hy], [lon - hx, lat + hy],
               [lon - hx, lat - hy]]
        features.append({"type": "Feature", "properties": {"risk_level": level},
                         "geometry": {"type": "Polygon", "coordinates": [box]}})
    fc = {"type": "FeatureCollection", "features": features}
    return {"steps": [
        {"tool_calls": [{"name": "list_available_map_types", "arguments": {}}]},
        {"tool_calls": [{"name": "request_hrrr_map", "arguments": {"map_type_directory": "stp", "forecast_hour": 21}}]},
        {"tool_calls": [{"name": "request_sounding",
                         "arguments": {"latitude": lat, "longitude": lon, "forecast_hour": 21}}]},
        {"tool_calls": [{"name": "submit_tornado_prediction", "arguments": {"prediction_geojson": json.dumps(fc)}}]},
    ]}


def run(argv):
    code = cli_main(argv)
    if code:
        raise SystemExit(f"command failed ({code}): {' '.join(argv)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", default="work")
    ap.add_argument("--days", nargs="+", default=["2025-03-14", "2025-03-15", "2025-04-02"])
    ap.add_argument("--seed", type=int, default=2025)
    args = ap.parse_args()
    work = Path(args.work)
    dates = [dt.date.fromisoformat(d) for d in args.days]
    reports = write_synthetic_reports(work / "reports.csv", seed=args.seed)
    rows = synthetic_reports(seed=args.seed)
    gt_dir, archive, runs = work / "ground_truth", work / "archive", work / "runs"
    run(["ground-truth", "--reports", str(reports), "--out", str(gt_dir)] + sum((["--date", d] for d in args.days), []))
    for date in dates:
        stub_archive(archive, date)
        script = work / "scripts" / f"demo-agent-{date:%Y%m%d}.json"
        script.parent.mkdir(parents=True, exist_ok=True)
        script.write_text(json.dumps(scripted_agent(rows, date), indent=1))
        run(["harness-run", "--date", date.isoformat(), "--endpoint", f"script:{script}", "--model", "demo-agent",
             "--archive", str(archive), "--runs", str(runs), "--gt-dir", str(gt_dir), "--image-mode", "path"])
    run(["bench", "--runs", str(runs), "--gt-dir", str(gt_dir), "--out", str(work / "bench")])
    run(["report", "--runs", str(runs), "--gt-dir", str(gt_dir), "--out", str(work / "report")])


if __name__ == "__main__":
    main()
