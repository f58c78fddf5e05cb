import datetime as dt
import json
import logging

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from tornadoverif import datastore as ds
from tornadoverif.errors import ArgumentError, ConfigError, ParseError
from tornadoverif.geoproj import GRID211, project
from tornadoverif.riskfield import RiskLevel
from tornadoverif.scoring import DailyOutcome, MapForm, RiskMap, daily_tb, to_disjoint_bands

DAY = dt.date(2025, 3, 14)
UTC = dt.timezone.utc
HEADER = "time_utc,lat,lon,state,magnitude\n"


def write_csv(tmp_path, rows, header=HEADER, name="reports.csv"):
    p = tmp_path / name
    p.write_text(header + "".join(r + "\n" for r in rows))
    return p


# --- reports ------------------------------------------------------------------

def test_forecast_window():
    start, end = ds.forecast_window(DAY)
    assert start == dt.datetime(2025, 3, 14, 12, tzinfo=UTC)
    assert end == dt.datetime(2025, 3, 15, 12, tzinfo=UTC)


def test_window_boundaries(tmp_path):
    p = write_csv(tmp_path, [
        "2025-03-14T12:00:00Z,36.0,-94.0,AR,EF1",   # start: kept
        "2025-03-15T11:59:59Z,37.0,-93.0,MO,",      # kept
        "2025-03-15T12:00:00Z,38.0,-92.0,IL,EF0",   # end: dropped
        "2025-03-14T11:59:59+00:00,38.0,-92.0,IL,",  # before: dropped
    ])
    rs = ds.ingest_reports_for_day(p, DAY)
    assert len(rs) == 2
    assert [r.attrs["state"] for r in rs.reports] == ["AR", "MO"]
    assert rs.reports[0].attrs["magnitude"] == "EF1" and rs.reports[1].attrs["magnitude"] is None


def test_three_rows_one_outside(tmp_path):
    p = write_csv(tmp_path, [
        "2025-03-14T18:00:00Z,36.0,-94.0,AR,EF1",
        "2025-03-14T20:00:00,35.0,-90.0,TN,EF2",  # naive means UTC
        "2025-03-16T01:00:00Z,38.0,-92.0,IL,EF0",
    ])
    rs = ds.ingest_reports_for_day(p, DAY)
    assert len(rs) == 2
    r = rs.reports[0]
    p0 = project(GRID211, r.geo)
    assert abs(p0.x - r.proj.x) < 1e-6 and abs(p0.y - r.proj.y) < 1e-6
    rs.check_consistency(GRID211)


def test_empty_csv(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    assert len(ds.ingest_reports_for_day(p, DAY)) == 0
    assert len(ds.ingest_reports_for_day(write_csv(tmp_path, [], name="h.csv"), DAY)) == 0


def test_bad_window_rejected(tmp_path):
    p = write_csv(tmp_path, [])
    start, _ = ds.forecast_window(DAY)
    with pytest.raises(ArgumentError):
        ds.ingest_reports(p, start, start + dt.timedelta(hours=12))
    with pytest.raises(ArgumentError):
        ds.ingest_reports(p, start + dt.timedelta(hours=1), start + dt.timedelta(hours=25))


def test_bad_row_reports_line_number(tmp_path):
    p = write_csv(tmp_path, [
        "2025-03-14T18:00:00Z,36.0,-94.0,AR,EF1",
        "2025-03-14T18:00:00Z,north,-94.0,AR,EF1",
        "not a time,36.0,-94.0,AR,EF1",
    ])
    with pytest.raises(ds.RowError) as info:
        ds.ingest_reports_for_day(p, DAY)
    assert info.value.line == 3 and ":3:" in str(info.value)
    assert len(ds.ingest_reports_for_day(p, DAY, skip_bad_rows=True)) == 1


def test_missing_column(tmp_path):
    p = write_csv(tmp_path, ["2025-03-14T18:00:00Z,36.0,AR"], header="time_utc,lat,state\n")
    with pytest.raises(ParseError, match="lon"):
        ds.ingest_reports_for_day(p, DAY)


def test_outside_conus_warns(tmp_path, caplog):
    p = write_csv(tmp_path, ["2025-03-14T18:00:00Z,19.5,-155.5,HI,EF0"])
    with caplog.at_level(logging.WARNING):
        rs = ds.ingest_reports_for_day(p, DAY)
    assert len(rs) == 1 and "outside CONUS" in caplog.text


def test_column_adapter(tmp_path):
    cols = ds.ReportColumns(time="when", lat="y", lon="x", state="st", magnitude="f")
    p = write_csv(tmp_path, ["2025-03-14T18:00:00Z,36.0,-94.0,AR,EF1,near town"],
                  header="when,y,x,st,f,remarks\n")
    (r,) = ds.ingest_reports_for_day(p, DAY, columns=cols).reports
    assert r.attrs["state"] == "AR" and r.attrs["remarks"] == "near town"


# --- prediction validation ---------------------------------------------------------

def square(lon, lat, size):
    return [[[lon, lat], [lon + size, lat], [lon + size, lat + size], [lon, lat + size], [lon, lat]]]


def feature(level, coords, gtype="Polygon"):
    return {"type": "Feature", "properties": {"risk_level": level},
            "geometry": {"type": gtype, "coordinates": coords}}


def fc(*features):
    return json.dumps({"type": "FeatureCollection", "features": list(features)})


def test_empty_collection_accepted_and_scores_one():
    doc = ds.validate_prediction(fc(), date=DAY)
    assert doc.accepted and doc.pred_max is RiskLevel.P0
    gt = RiskMap(DAY, {})
    assert daily_tb(gt, to_disjoint_bands(doc.risk_map)).tb == 1.0


def test_nested_prediction_accepted():
    doc = ds.validate_prediction(fc(feature("2%", square(-97, 33, 6)), feature("5%", square(-95, 34, 2))), date=DAY)
    assert doc.accepted, doc.report.errors
    assert doc.risk_map.form is MapForm.NESTED and doc.pred_max is RiskLevel.P5
    assert doc.risk_map.crs == "grid"
    assert doc.risk_map.get(RiskLevel.P2).area > doc.risk_map.get(RiskLevel.P5).area > 0
    to_disjoint_bands(doc.risk_map)


def test_nesting_violation_names_pair():
    doc = ds.validate_prediction(fc(feature("2%", square(-97, 33, 2)), feature("5%", square(-90, 33, 2))))
    assert doc.report.codes() == [ds.E_NESTING]
    assert "5%" in doc.report.errors[0].message and "2%" in doc.report.errors[0].message
    assert doc.risk_map is None


def test_canonicalizes_level_without_percent():
    doc = ds.validate_prediction(fc(feature("2", square(-97, 33, 2))))
    assert doc.accepted
    assert [w.code for w in doc.report.warnings] == [ds.W_LEVEL_CANONICALIZED]


def test_empty_geometry_warns():
    doc = ds.validate_prediction(fc(feature("2%", [], "MultiPolygon")))
    assert doc.accepted and doc.pred_max is RiskLevel.P0
    assert [w.code for w in doc.report.warnings] == [ds.W_EMPTY_GEOMETRY]


BOWTIE = [[[-97, 33], [-95, 35], [-95, 33], [-97, 35], [-97, 33]]]


@pytest.mark.parametrize("text,code", [
    ("{not json", ds.E_JSON),
    ('{"type": "FeatureCollection", "features": [], "x": NaN}', ds.E_JSON),
    ("[" * 100000, ds.E_JSON),
    ('{"type": "Feature"}', ds.E_NOT_FEATURECOLLECTION),
    ("[]", ds.E_NOT_FEATURECOLLECTION),
    ('{"type": "FeatureCollection"}', ds.E_FEATURES),
    (fc({"type": "Point"}), ds.E_FEATURE),
    (json.dumps({"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {}, "geometry": None}]}), ds.E_RISK_LEVEL_MISSING),
    (fc(feature("3%", square(-97, 33, 2))), ds.E_RISK_LEVEL_UNKNOWN),
    (fc(feature("0%", square(-97, 33, 2))), ds.E_RISK_LEVEL_UNKNOWN),
    (fc(feature(True, square(-97, 33, 2))), ds.E_RISK_LEVEL_UNKNOWN),
    (fc(feature("2%", [-97, 33], "Point")), ds.E_GEOMETRY_TYPE),
    (fc(feature("2%", [[[-97, 33], [-95, 33], [-95, 35]]])), ds.E_GEOMETRY_COORDS),
    (fc(feature("2%", [[[-97, 33], [-95, 33], [-95, 35], [-97, 35]]])), ds.E_GEOMETRY_COORDS),
    (fc(feature("2%", [[[-97, 33], [-95, 33], [-95, 95], [-97, 33]]])), ds.E_GEOMETRY_COORDS),
    (fc(feature("2%", [[[-97, 33], [-95, "a"], [-95, 35], [-97, 33]]])), ds.E_GEOMETRY_COORDS),
    (fc(feature("2%", [[[-97, 33], [-95, 1e400], [-95, 35], [-97, 33]]])), ds.E_JSON),  # Infinity literal
    (fc(feature("2%", [[[-97, 33], [-95, 1e400], [-95, 35], [-97, 33]]])).replace("Infinity", "1e400"),
     ds.E_GEOMETRY_COORDS),
    (fc(feature("2%", BOWTIE)), ds.E_GEOMETRY_INVALID),
    (fc(feature("2%", square(-97, -90, 1))), ds.E_GEOMETRY_DOMAIN),
    (fc(feature("2%", square(-97, 33, 2)), feature("2%", square(-90, 33, 2))), ds.E_DUPLICATE_LEVEL),
])
def test_coded_rejections(text, code):
    doc = ds.validate_prediction(text)
    assert not doc.accepted and doc.risk_map is None
    assert code in doc.report.codes(), doc.report.errors


def test_errors_keep_feature_index():
    doc = ds.validate_prediction(fc(feature("2%", square(-97, 33, 6)), feature("7%", square(-95, 34, 2))))
    (err,) = doc.report.errors
    assert err.feature == 1 and "feature 1" in str(err)


def test_report_dict_round_trip():
    doc = ds.validate_prediction(fc(feature("3%", square(-97, 33, 2)), feature("5", square(-97, 33, 1))))
    back = ds.ValidationReport.from_dict(json.loads(json.dumps(doc.report.to_dict())))
    assert back == doc.report and not back.ok


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-10**6, 10**6) | st.floats(allow_nan=False) | st.text(max_size=6),
    lambda kids: st.lists(kids, max_size=5) | st.dictionaries(st.text(max_size=8), kids, max_size=5),
    max_leaves=30,
)
levels = st.sampled_from(["2%", "5%", "10%", "15%", "30%", "45%", "60%", "2", 5, "3%", "0%", None])
positions = st.lists(st.floats(-200, 200, allow_nan=False), min_size=2, max_size=3)
rings = st.lists(positions, min_size=0, max_size=6).map(lambda r: r + r[:1] if r else r)
feature_dicts = st.fixed_dictionaries({
    "type": st.sampled_from(["Feature", "Feature", "feature"]),
    "properties": st.fixed_dictionaries({"risk_level": levels}) | json_values,
    "geometry": st.fixed_dictionaries({
        "type": st.sampled_from(["Polygon", "MultiPolygon", "Point"]),
        "coordinates": st.lists(rings, max_size=2) | st.lists(st.lists(rings, max_size=2), max_size=2) | json_values,
    }) | json_values,
})
docs = st.fixed_dictionaries({"type": st.sampled_from(["FeatureCollection", "Feature"]),
                              "features": st.lists(feature_dicts, max_size=4) | json_values}) | json_values


def _check_total(doc):
    if doc.accepted:
        assert doc.risk_map is not None and not doc.report.errors
        to_disjoint_bands(doc.risk_map)
    else:
        assert doc.risk_map is None and doc.report.errors
        assert all(isinstance(i.code, str) and i.code.startswith("E_") for i in doc.report.errors)


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(docs)
def test_validation_is_total_on_structured_input(obj):
    _check_total(ds.validate_prediction(json.dumps(obj)))


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=200) | st.binary(max_size=100))
def test_validation_is_total_on_arbitrary_text(text):
    _check_total(ds.validate_prediction(text))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-110, -80), st.floats(28, 45), st.floats(0.05, 8)), min_size=1, max_size=5))
def test_random_squares_accepted_or_nesting_error(sq):
    feats = [feature(lv.label, square(lon, lat, s))
             for lv, (lon, lat, s) in zip([RiskLevel.P2, RiskLevel.P5, RiskLevel.P10, RiskLevel.P15,
                                            RiskLevel.P30], sq)]
    doc = ds.validate_prediction(fc(*feats))
    _check_total(doc)
    assert set(doc.report.codes()) <= {ds.E_NESTING}


# --- archive ----------------------------------------------------------------------

def make_archive(tmp_path, types=("refc", "uh"), hours=ds.FORECAST_HOURS, stations=None, date=DAY):
    root = tmp_path / "archive"
    d = root / f"{date:%Y%m%d}"
    for t in types:
        td = d / "maps" / t
        td.mkdir(parents=True, exist_ok=True)
        for h in hours:
            (td / f"f{h:02d}.png").write_bytes(b"png")
    if stations is not None:
        d.mkdir(parents=True, exist_ok=True)
        (d / "stations.csv").write_text("id,lat,lon\n" + "".join(f"{s},{a},{o}\n" for s, a, o in stations))
        for s, _, _ in stations:
            sd = d / "soundings" / s
            sd.mkdir(parents=True)
            for h in hours:
                (sd / f"f{h:02d}.png").write_bytes(b"png")
    root.mkdir(exist_ok=True)
    return root


def test_archive_counts(tmp_path):
    root = make_archive(tmp_path, stations=[("KOUN", 35.2, -97.4), ("KSGF", 37.2, -93.4)])
    idx = ds.build_index(root, DAY)
    assert idx.map_types == ("refc", "uh")
    assert len(idx.maps) == 50
    assert [s.id for s in idx.stations] == ["KOUN", "KSGF"]
    assert len(idx.soundings) == 50
    assert idx.map_asset("uh", 36).is_file() and idx.map_asset("uh", 37) is None
    assert idx.sounding_asset("KOUN", 12).is_file()


def test_archive_ignores_out_of_range_hours(tmp_path):
    root = make_archive(tmp_path, types=("refc",), hours=[0, 11, 12, 36, 37, 48])
    idx = ds.build_index(root, DAY)
    assert sorted(h for _, h in idx.maps) == [12, 36]


def test_nested_map_folders(tmp_path):
    root = make_archive(tmp_path, types=("refc", "winds/250mb", "winds/500mb"), hours=[12, 13])
    idx = ds.build_index(root, DAY)
    assert idx.map_types == ("refc", "winds")
    assert idx.asset_types == ["refc", "winds/250mb", "winds/500mb"]
    assert idx.nested_types("winds") == ["winds/250mb", "winds/500mb"]
    assert len(idx.maps) == 6


def test_empty_day_directory(tmp_path):
    root = tmp_path / "archive"
    (root / f"{DAY:%Y%m%d}").mkdir(parents=True)
    idx = ds.build_index(root, DAY)
    assert idx.map_types == () and idx.maps == {} and idx.stations == ()
    assert ds.build_index(root, dt.date(2025, 3, 15)).map_types == ()


def test_missing_root_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        ds.build_index(tmp_path / "nowhere", DAY)


def test_soundings_without_manifest_is_config_error(tmp_path):
    root = make_archive(tmp_path, stations=[("KOUN", 35.2, -97.4)])
    (root / f"{DAY:%Y%m%d}" / "stations.csv").unlink()
    with pytest.raises(ConfigError, match="stations.csv"):
        ds.build_index(root, DAY)


def test_duplicate_station_is_config_error(tmp_path):
    root = make_archive(tmp_path, stations=[("KOUN", 35.2, -97.4)])
    (root / f"{DAY:%Y%m%d}" / "stations.csv").write_text("id,lat,lon\nKOUN,35.2,-97.4\nKOUN,36,-97\n")
    with pytest.raises(ConfigError, match="duplicate"):
        ds.build_index(root, DAY)


# --- runs -------------------------------------------------------------------------

def sample_run(tmp_path):
    text = fc(feature("2%", square(-97, 33, 6)), feature("5%", square(-95, 34, 2)))
    doc = ds.validate_prediction(text, date=DAY)
    gt = RiskMap(DAY, {RiskLevel.P2: doc.risk_map.get(RiskLevel.P5)})
    outcome = daily_tb(gt, to_disjoint_bands(doc.risk_map))
    transcript = {"messages": [{"role": "user", "content": "hi", "images": ["archive/x/f12.png"]}]}
    path = ds.persist_run(ds.run_dir(tmp_path / "runs", "model-a", DAY), transcript, text, doc.report,
                          [outcome], meta={"quota": 50})
    return path, text, doc, outcome, transcript


def test_run_round_trip(tmp_path):
    path, text, doc, outcome, transcript = sample_run(tmp_path)
    assert path == tmp_path / "runs" / "model-a" / "20250314"
    run = ds.load_run(path)
    assert run.complete, run.problems
    assert run.prediction_text == text and run.transcript == transcript
    assert run.validation == doc.report
    assert run.outcomes == [outcome]
    # scoring the reloaded prediction is bit-identical
    again = ds.validate_prediction(run.prediction_text, date=DAY)
    gt = RiskMap(DAY, {RiskLevel.P2: again.risk_map.get(RiskLevel.P5)})
    assert daily_tb(gt, to_disjoint_bands(again.risk_map)) == outcome
    assert ds.iter_runs(tmp_path / "runs") == [path]


def test_interrupted_run_flagged(tmp_path):
    path, *_ = sample_run(tmp_path)
    (path / ds.MANIFEST).unlink()
    run = ds.load_run(path)
    assert not run.complete and "manifest missing" in run.problems[0]


def test_tampered_run_flagged(tmp_path):
    path, *_ = sample_run(tmp_path)
    (path / ds.PREDICTION).write_text("{}")
    run = ds.load_run(path)
    assert not run.complete and any("prediction.geojson" in p for p in run.problems)


def test_no_prediction_run(tmp_path):
    out = DailyOutcome.no_prediction(DAY, RiskLevel.P30)
    path = ds.persist_run(tmp_path / "r", {"messages": []}, None, None, [out])
    run = ds.load_run(path)
    assert run.complete and run.prediction_text is None and run.outcomes == [out]
