"""Daily and aggregate forecast scores.

A day's score is the mean IoU over the risk levels present on either side,
with special cases for quiet days.  Days are weighted by the numeric value of
the observed maximum level, so a 30% outbreak counts thirty times as much as a
quiet day.  Hallucination metrics count false alarms on quiet days and
forecasts that miss the observed risk entirely.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from shapely.geometry import MultiPolygon

from tornadoverif.errors import ArgumentError, NestingError, ParseError, UndefinedMetricError
from tornadoverif.geometry import (
    DEFAULT_EPS_AREA,
    Domain,
    area,
    centroid,
    complement_within,
    difference,
    excess_area,
    intersect,
    iou,
    normalize,
    unary_union,
)
from tornadoverif.geoproj import LambertConfig
from tornadoverif.riskfield import RiskLevel

logger = logging.getLogger(__name__)

ZERO_OVERLAP_AREA = 1.0  # m^2; "no overlap" up to snapping noise


class MapForm(str, enum.Enum):
    NESTED = "nested_cumulative"
    DISJOINT = "disjoint_bands"


class MapSource(str, enum.Enum):
    GROUND_TRUTH = "ground_truth"
    PREDICTION = "prediction"
    SPC_BASELINE = "spc_baseline"


@dataclass(frozen=True)
class RiskMap:
    """Risk level -> geometry for one day, in projected meters unless ``crs`` says otherwise."""

    date: dt.date
    bands: dict
    form: MapForm = MapForm.DISJOINT
    source: MapSource = MapSource.PREDICTION
    crs: str = "grid"

    def __post_init__(self):
        clean = {}
        for lv, g in self.bands.items():
            lv = RiskLevel.parse(lv)
            if lv is RiskLevel.P0:
                raise ArgumentError("risk maps hold non-zero levels only")
            g = normalize(g)
            if not g.is_empty:
                clean[lv] = g
        object.__setattr__(self, "bands", dict(sorted(clean.items())))
        object.__setattr__(self, "form", MapForm(self.form))
        object.__setattr__(self, "source", MapSource(self.source))

    @property
    def levels(self) -> list[RiskLevel]:
        return list(self.bands)

    @property
    def max_level(self) -> RiskLevel:
        return self.levels[-1] if self.bands else RiskLevel.P0

    def get(self, level: RiskLevel) -> MultiPolygon:
        return self.bands.get(level, MultiPolygon())

    def nonzero_union(self) -> MultiPolygon:
        if self.form is MapForm.NESTED:
            return self.get(self.levels[0]) if self.bands else MultiPolygon()
        return unary_union(self.bands.values())

    def to_projected(self, cfg: LambertConfig) -> "RiskMap":
        if self.crs == "grid":
            return self
        from tornadoverif.polygonize import forward_project_geometry

        bands = {lv: forward_project_geometry(g, cfg) for lv, g in self.bands.items()}
        return RiskMap(self.date, bands, self.form, self.source, "grid")

    @classmethod
    def from_ground_truth(cls, gt, cfg: LambertConfig | None = None) -> "RiskMap":
        crs = {b.crs for b in gt.bands} or {"grid"}
        if len(crs) != 1:
            raise ArgumentError("ground truth mixes coordinate systems")
        m = cls(gt.date, {b.level: b.geometry for b in gt.bands}, MapForm.DISJOINT,
                MapSource.GROUND_TRUTH, crs.pop())
        if m.crs != "grid":
            if cfg is None:
                raise ArgumentError("projection config needed for WGS84 ground truth")
            m = m.to_projected(cfg)
        return m


def check_nesting(m: RiskMap, eps_area: float = DEFAULT_EPS_AREA) -> None:
    """Raise :class:`NestingError` for the first level pair that breaks containment."""
    levels = m.levels
    for a in range(len(levels)):
        for b in range(a + 1, len(levels)):
            lo, hi = levels[a], levels[b]
            excess = excess_area(m.bands[lo], m.bands[hi])
            if excess > eps_area:
                raise NestingError(lo, hi, excess)


def to_disjoint_bands(m: RiskMap, eps_area: float = DEFAULT_EPS_AREA) -> RiskMap:
    """Nested cumulative polygons -> one band per level, pairwise disjoint.

    Each higher cumulative polygon is first clipped to the one below it, so
    protrusions within ``eps_area`` are dropped and the union of the output
    equals the lowest cumulative polygon.
    """
    if m.form is MapForm.DISJOINT:
        return m
    check_nesting(m, eps_area)
    levels = m.levels
    clipped = {}
    prev = None
    for lv in levels:
        g = m.bands[lv] if prev is None else intersect(m.bands[lv], prev)
        clipped[lv] = prev = g
    bands = {}
    for k, lv in enumerate(levels):
        above = clipped[levels[k + 1]] if k + 1 < len(levels) else None
        bands[lv] = clipped[lv] if above is None else difference(clipped[lv], above)
    return RiskMap(m.date, bands, MapForm.DISJOINT, m.source, m.crs)


def to_cumulative(m: RiskMap) -> RiskMap:
    """Disjoint bands -> cumulative exceedance polygons (union of bands >= L)."""
    if m.form is MapForm.NESTED:
        return m
    levels = m.levels
    bands = {lv: unary_union(m.bands[x] for x in levels[k:]) for k, lv in enumerate(levels)}
    return RiskMap(m.date, bands, MapForm.NESTED, m.source, m.crs)


@dataclass(frozen=True)
class DailyOutcome:
    date: dt.date
    tb: float | None
    gt_max: RiskLevel
    pred_max: RiskLevel | None
    categories_scored: frozenset = frozenset()
    hallucinated_simple: bool = False
    hard_penalty: int = 0
    centroid_overall_km: float | None = None
    centroid_maxrisk_km: float | None = None
    band_iou: dict = field(default_factory=dict, compare=False)
    zero_complement_iou: float | None = None
    inferred: bool = False  # pred_max reconstructed from a score table

    @property
    def weight(self) -> int:
        return self.gt_max.weight

    @property
    def has_prediction(self) -> bool:
        return self.tb is not None

    @classmethod
    def no_prediction(cls, date: dt.date, gt_max: RiskLevel) -> "DailyOutcome":
        return cls(date, None, gt_max, None)

    @classmethod
    def from_score(cls, date: dt.date, gt_max: RiskLevel, tb: float | None,
                   pred_max: RiskLevel | None = None) -> "DailyOutcome":
        """Outcome rebuilt from a published daily score.

        On quiet days the quiet-day branches pin the predicted maximum down to
        "none" (tb = 1) or "some" (tb = 0); 2% is used as the least severe
        reading of "some".  On risk days ``pred_max`` stays unknown unless given.
        """
        inferred = False
        if tb is not None and pred_max is None and gt_max is RiskLevel.P0:
            pred_max = RiskLevel.P0 if tb == 1 else RiskLevel.P2
            inferred = True
        halluc = tb is not None and gt_max is RiskLevel.P0 and pred_max is not None and pred_max > RiskLevel.P0
        penalty = pred_max.weight if halluc else 0
        return cls(date, tb, gt_max, pred_max, hallucinated_simple=halluc, hard_penalty=penalty,
                   inferred=inferred)


def centroid_distances(gt: RiskMap, pred: RiskMap) -> tuple[float | None, float | None]:
    """Overall and max-level centroid distances in km; None where a side is empty."""
    if not gt.bands or not pred.bands:
        return None, None
    g_all, p_all = gt.nonzero_union(), pred.nonzero_union()
    g_max, p_max = gt.bands[gt.max_level], pred.bands[pred.max_level]

    def dist(a, b):
        ca, cb = centroid(a), centroid(b)
        return math.hypot(ca.x - cb.x, ca.y - cb.y) / 1000.0

    return dist(g_all, p_all), dist(g_max, p_max)


def daily_tb(gt: RiskMap, pred: RiskMap | None, domain: Domain | None = None,
             include_zero_complement: bool = False) -> DailyOutcome:
    """Score one day; ``pred`` None means no valid prediction was made."""
    gt_max = gt.max_level
    if pred is None:
        return DailyOutcome.no_prediction(gt.date, gt_max)
    if gt.form is not MapForm.DISJOINT or pred.form is not MapForm.DISJOINT:
        raise ArgumentError("daily_tb needs both maps as disjoint bands")
    if gt.crs != "grid" or pred.crs != "grid":
        raise ArgumentError("daily_tb needs projected geometry")
    if include_zero_complement and domain is None:
        raise ArgumentError("the 0% complement needs a verification domain")
    pred_max = pred.max_level
    g_union, p_union = gt.nonzero_union(), pred.nonzero_union()

    zero_iou = None
    if domain is not None:
        zero_iou = iou(complement_within(domain, g_union), complement_within(domain, p_union))

    band_iou: dict[RiskLevel, float] = {}
    if gt_max is RiskLevel.P0:
        tb = 1.0 if pred_max is RiskLevel.P0 else 0.0
        scored: frozenset = frozenset()
    else:
        scored = frozenset(set(gt.levels) | set(pred.levels))
        for lv in sorted(scored):
            band_iou[lv] = iou(gt.get(lv), pred.get(lv))
        terms = list(band_iou.values())
        if include_zero_complement:
            terms.append(zero_iou)
            scored = scored | {RiskLevel.P0}
        tb = math.fsum(terms) / len(terms)

    halluc_simple = gt_max is RiskLevel.P0 and pred_max > RiskLevel.P0
    penalty = 0
    if pred_max > RiskLevel.P0:
        if gt_max is RiskLevel.P0 or area(intersect(g_union, p_union)) <= ZERO_OVERLAP_AREA:
            penalty = pred_max.weight
    c_all, c_max = centroid_distances(gt, pred)
    return DailyOutcome(gt.date, tb, gt_max, pred_max, scored, halluc_simple, penalty,
                        c_all, c_max, band_iou, zero_iou)


def _valid(outcomes: Iterable[DailyOutcome]) -> list[DailyOutcome]:
    days = [o for o in outcomes if o.has_prediction]
    if not days:
        raise UndefinedMetricError("no valid prediction days")
    return days


def aggregate_tb(outcomes: Sequence[DailyOutcome], absent_as_zero: bool = True) -> float:
    """Weighted mean of daily scores, in percent."""
    outcomes = list(outcomes)
    if not outcomes:
        raise UndefinedMetricError("no days to aggregate")
    vals, weights = _tb_arrays(outcomes, absent_as_zero)
    if not len(vals):
        raise UndefinedMetricError("no valid prediction days")
    return _weighted_percent(vals, weights)


def _tb_arrays(outcomes, absent_as_zero):
    vals, weights = [], []
    for o in outcomes:
        if o.tb is None and not absent_as_zero:
            continue
        vals.append(0.0 if o.tb is None else o.tb)
        weights.append(o.weight)
    return np.array(vals, dtype=float), np.array(weights, dtype=float)


def _weighted_percent(vals, weights) -> float:
    return 100.0 * math.fsum(vals * weights) / math.fsum(weights)


def hallucination_simple(outcomes: Sequence[DailyOutcome]) -> float:
    days = _valid(outcomes)
    return sum(o.hallucinated_simple for o in days) / len(days)


def hallucination_hard(outcomes: Sequence[DailyOutcome]) -> float:
    days = _valid(outcomes)
    return sum(o.hard_penalty for o in days) / len(days)


def max_risk_match(outcomes: Sequence[DailyOutcome]) -> tuple[float, float, float]:
    """(under, match, over) percentages over prediction days with a known maximum.

    Maxima inferred from a score table are lower bounds and are skipped.
    """
    days = [o for o in _valid(outcomes) if o.pred_max is not None and not o.inferred]
    if not days:
        raise UndefinedMetricError("no prediction days with a known predicted maximum")
    under = sum(o.pred_max < o.gt_max for o in days)
    over = sum(o.pred_max > o.gt_max for o in days)
    n = len(days)
    return 100.0 * under / n, 100.0 * (n - under - over) / n, 100.0 * over / n


def mean_centroid_distances(outcomes: Sequence[DailyOutcome]) -> tuple[float | None, float | None]:
    """Average over days where both sides define the centroid."""
    def avg(vals):
        vals = [v for v in vals if v is not None]
        return math.fsum(vals) / len(vals) if vals else None

    days = [o for o in outcomes if o.has_prediction]
    return avg(o.centroid_overall_km for o in days), avg(o.centroid_maxrisk_km for o in days)


def bootstrap_ci(values: Sequence[float], weights: Sequence[float] | None = None,
                 statistic: str = "aggregate_tb", iterations: int = 1000,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval (2.5th, 97.5th) over resampled days.

    Day indices are drawn with replacement, keeping each score with its
    weight.  Replicate ``r`` draws from ``SeedSequence([seed, r])`` so the
    result does not depend on how replicates are scheduled.  ``aggregate_tb``
    reports percent; ``mean`` reports the unscaled mean.
    """
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        raise UndefinedMetricError("bootstrap over an empty sample")
    if iterations < 1:
        raise ArgumentError("iterations must be >= 1")
    if statistic == "aggregate_tb":
        if weights is None:
            raise ArgumentError("aggregate_tb bootstrap needs paired weights")
        w = np.asarray(weights, dtype=float)
        if w.shape != vals.shape:
            raise ArgumentError("weights must pair one-to-one with values")
        if np.any(w <= 0):
            raise ArgumentError("weights must be positive")

        def stat(idx):
            return 100.0 * np.sum(vals[idx] * w[idx]) / np.sum(w[idx])
    elif statistic == "mean":
        def stat(idx):
            return float(np.mean(vals[idx]))
    else:
        raise ArgumentError(f"unknown bootstrap statistic {statistic!r}")
    n = vals.size
    reps = np.empty(iterations)
    for r in range(iterations):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        reps[r] = stat(rng.integers(0, n, n))
    lo, hi = np.percentile(reps, [2.5, 97.5])
    return float(lo), float(hi)


@dataclass(frozen=True)
class BenchmarkSummary:
    tornado_bench: float
    hallucination_simple: float
    hallucination_hard: float
    max_risk_match: tuple[float, float, float] | None
    prediction_days: int
    total_days: int
    ci: dict = field(default_factory=dict)
    centroid_overall_km: float | None = None
    centroid_maxrisk_km: float | None = None
    bootstrap_iterations: int = 1000
    bootstrap_seed: int = 0


def summarize(outcomes: Sequence[DailyOutcome], iterations: int = 1000, seed: int = 0,
              absent_as_zero: bool = True) -> BenchmarkSummary:
    outcomes = sorted(outcomes, key=lambda o: o.date)
    valid = _valid(outcomes)
    vals, weights = _tb_arrays(outcomes, absent_as_zero)
    ci = {"tornado_bench": bootstrap_ci(vals, weights, "aggregate_tb", iterations, seed)}
    ci["hallucination_simple"] = bootstrap_ci([float(o.hallucinated_simple) for o in valid], None,
                                              "mean", iterations, seed)
    ci["hallucination_hard"] = bootstrap_ci([float(o.hard_penalty) for o in valid], None,
                                            "mean", iterations, seed)
    try:
        match = max_risk_match(outcomes)
    except UndefinedMetricError:
        match = None
    c_all, c_max = mean_centroid_distances(outcomes)
    return BenchmarkSummary(
        tornado_bench=aggregate_tb(outcomes, absent_as_zero),
        hallucination_simple=hallucination_simple(outcomes),
        hallucination_hard=hallucination_hard(outcomes),
        max_risk_match=match,
        prediction_days=len(valid),
        total_days=len(outcomes),
        ci=ci,
        centroid_overall_km=c_all,
        centroid_maxrisk_km=c_max,
        bootstrap_iterations=iterations,
        bootstrap_seed=seed,
    )


# --- score files -----------------------------------------------------------

SCORE_COLUMNS = ("date", "tb", "gt_max", "pred_max", "weight", "categories", "hallucinated_simple",
                 "hard_penalty", "centroid_overall_km", "centroid_maxrisk_km", "zero_complement_iou",
                 "inferred")
NA = "NA"


def _fmt(v) -> str:
    if v is None:
        return NA
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, RiskLevel):
        return v.label
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _opt(s: str, conv):
    return None if s == NA else conv(s)


def format_scores(outcomes: Sequence[DailyOutcome]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for o in sorted(outcomes, key=lambda o: o.date):
        cats = ",".join(lv.label for lv in sorted(o.categories_scored)) or "-"
        w.writerow([o.date.isoformat(), _fmt(o.tb), _fmt(o.gt_max), _fmt(o.pred_max), o.weight, cats,
                    _fmt(o.hallucinated_simple), o.hard_penalty, _fmt(o.centroid_overall_km),
                    _fmt(o.centroid_maxrisk_km), _fmt(o.zero_complement_iou), _fmt(o.inferred)])
    return buf.getvalue()


def write_scores(outcomes: Sequence[DailyOutcome], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_scores(outcomes))
    return path


def read_scores(path) -> list[DailyOutcome]:
    path = Path(path)
    rows = list(csv.reader(path.read_text().splitlines(), delimiter="\t"))
    if not rows or tuple(rows[0]) != SCORE_COLUMNS:
        raise ParseError("missing or unexpected score header", f"{path}:1")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            rec = dict(zip(SCORE_COLUMNS, row, strict=True))
            cats = frozenset() if rec["categories"] == "-" else frozenset(
                RiskLevel.parse(c) for c in rec["categories"].split(","))
            o = DailyOutcome(
                date=dt.date.fromisoformat(rec["date"]),
                tb=_opt(rec["tb"], float),
                gt_max=RiskLevel.parse(rec["gt_max"]),
                pred_max=_opt(rec["pred_max"], RiskLevel.parse),
                categories_scored=cats,
                hallucinated_simple=rec["hallucinated_simple"] == "1",
                hard_penalty=int(rec["hard_penalty"]),
                centroid_overall_km=_opt(rec["centroid_overall_km"], float),
                centroid_maxrisk_km=_opt(rec["centroid_maxrisk_km"], float),
                zero_complement_iou=_opt(rec["zero_complement_iou"], float),
                inferred=rec["inferred"] == "1",
            )
        except (ValueError, KeyError) as exc:
            raise ParseError(str(exc), f"{path}:{lineno}") from exc
        if o.weight != int(rec["weight"]):
            raise ParseError("weight does not match gt_max", f"{path}:{lineno}")
        out.append(o)
    return out


SUMMARY_COLUMNS = ("tornado_bench", "tb_ci_lo", "tb_ci_hi", "hallucination_simple",
                   "hallucination_hard", "under", "match", "over", "prediction_days", "total_days",
                   "centroid_overall_km", "centroid_maxrisk_km", "bootstrap_iterations",
                   "bootstrap_seed")


def format_summary(s: BenchmarkSummary, label: str | None = None) -> str:
    lo, hi = s.ci.get("tornado_bench", (None, None))
    under, match, over = s.max_risk_match or (None, None, None)
    cols = (("model",) if label is not None else ()) + SUMMARY_COLUMNS
    vals = ([label] if label is not None else []) + [
        f"{s.tornado_bench:.2f}", _r2(lo), _r2(hi), f"{s.hallucination_simple:.3f}",
        f"{s.hallucination_hard:.3f}", _r2(under, 1), _r2(match, 1), _r2(over, 1),
        s.prediction_days, s.total_days, _r2(s.centroid_overall_km, 0), _r2(s.centroid_maxrisk_km, 0),
        s.bootstrap_iterations, s.bootstrap_seed,
    ]
    return "\t".join(cols) + "\n" + "\t".join(str(v) for v in vals) + "\n"


def _r2(v, digits=2):
    return NA if v is None else f"{v:.{digits}f}"


# --- bundled benchmark-period table ------------------------------------------

@dataclass(frozen=True)
class BenchmarkDay:
    date: dt.date
    max_risk: RiskLevel
    report_count: int
    top_states: dict
    spc_tb_percent: int


def _parse_states(text: str) -> dict:
    if text.strip() in ("", "N/A"):
        return {}
    out = {}
    for part in text.split(","):
        code, count = part.strip().split(" ")
        out[code] = int(count.strip("()"))
    return out


def load_benchmark_days() -> list[BenchmarkDay]:
    """The 40-day benchmark period: observed max level, report count, SPC daily score."""
    text = resources.files("tornadoverif").joinpath("data/benchmark_days.csv").read_text()
    days = []
    for rec in csv.DictReader(io.StringIO(text)):
        days.append(BenchmarkDay(
            dt.date.fromisoformat(rec["date"]),
            RiskLevel.parse(rec["max_risk"]),
            int(rec["report_count"]),
            _parse_states(rec["top_states"]),
            int(rec["spc_tb_percent"]),
        ))
    return days


def spc_outcomes(days: Sequence[BenchmarkDay] | None = None) -> list[DailyOutcome]:
    """SPC baseline daily outcomes reconstructed from the bundled score table."""
    days = load_benchmark_days() if days is None else days
    return [DailyOutcome.from_score(d.date, d.max_risk, d.spc_tb_percent / 100.0) for d in days]
