"""Command line: ground truth, validation, scoring, benchmark summaries, harness runs, reports.

Exit codes: 0 success, 2 bad arguments, 3 bad data (including rejected
predictions in ``validate``), 4 endpoint failure, 5 configuration.

Output files
------------
``scores.tsv``
    One row per day with columns ``date, tb, gt_max, pred_max, weight,
    categories, hallucinated_simple, hard_penalty, centroid_overall_km,
    centroid_maxrisk_km, zero_complement_iou, inferred``.  ``NA`` marks an
    absent value (``tb`` is NA on no-prediction days); ``categories`` lists the
    scored levels or ``-``.
``summary.tsv``
    One row per model: aggregate score in percent with its bootstrap
    interval, hallucination rates, max-level under/match/over percentages,
    prediction and total days, mean centroid distances in km.
``interaction.tsv``
    One row per model: prediction days, mean assistant turns, mean tool calls
    and mean sounding requests per session.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import re
import sys
from pathlib import Path

import click
import numpy as np

from tornadoverif.config import RunConfig, dump_config, load_config
from tornadoverif.datastore import (
    PredictionDocument,
    build_index,
    ingest_reports_for_day,
    iter_runs,
    load_run,
    persist_run,
    run_dir,
    validate_prediction,
)
from tornadoverif.errors import (
    ArgumentError,
    ConfigError,
    DataError,
    EndpointError,
    TornadoVerifError,
    UndefinedMetricError,
)
from tornadoverif.polygonize import GroundTruth, build_ground_truth, ground_truth_filename, read_ground_truth
from tornadoverif.riskfield import probability_pipeline
from tornadoverif.scoring import (
    DailyOutcome,
    MapSource,
    RiskMap,
    daily_tb,
    format_scores,
    format_summary,
    spc_outcomes,
    summarize,
    to_cumulative,
    to_disjoint_bands,
    write_scores,
)

logger = logging.getLogger("tornadoverif")

EXIT_OK, EXIT_ARGUMENT, EXIT_DATA, EXIT_ENDPOINT, EXIT_CONFIG = 0, 2, 3, 4, 5


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, EndpointError):
        return EXIT_ENDPOINT
    if isinstance(exc, ArgumentError):
        return EXIT_ARGUMENT
    if isinstance(exc, (DataError, UndefinedMetricError)):
        return EXIT_DATA
    return 1


def parse_date(ctx, param, value):
    if value is None:
        return None
    vals = value if isinstance(value, tuple) else (value,)
    out = []
    for v in vals:
        try:
            out.append(dt.date.fromisoformat(v) if "-" in v else dt.datetime.strptime(v, "%Y%m%d").date())
        except ValueError as exc:
            raise click.BadParameter(f"{v!r} is not a date (YYYY-MM-DD)") from exc
    return tuple(out) if isinstance(value, tuple) else out[0]


# --- shared steps -------------------------------------------------------------------

def make_ground_truth(cfg: RunConfig, date: dt.date, reports_path) -> GroundTruth:
    reports = ingest_reports_for_day(reports_path, date, cfg.projection)
    res = probability_pipeline(reports, cfg.grid(), cfg.pipeline)
    meta = {"sigma_m": cfg.pipeline.sigma, "refine_factor": cfg.pipeline.refine_factor,
            "radius_m": cfg.pipeline.radius, "peak_probability": round(float(res.probability.values.max()), 12)}
    return build_ground_truth(date, res.categories, cfg.projection, len(reports), meta)


def score_prediction(cfg: RunConfig, gt: GroundTruth, doc: PredictionDocument | None) -> DailyOutcome:
    gt_map = RiskMap.from_ground_truth(gt, cfg.projection)
    if doc is None or not doc.accepted:
        return daily_tb(gt_map, None)
    pred = to_disjoint_bands(doc.risk_map, cfg.scoring.eps_area)
    return daily_tb(gt_map, pred, cfg.domain(), cfg.scoring.include_zero_complement)


def gt_path(cfg: RunConfig, date: dt.date, gt_dir=None) -> Path:
    return Path(gt_dir or cfg.path("ground_truth")) / ground_truth_filename(date)


def _echo_summary(text: str):
    click.echo(text.rstrip("\n"))


# --- commands ------------------------------------------------------------------------

@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="YAML run configuration.")
@click.option("-v", "--verbose", count=True, help="More logging (-v info, -vv debug).")
@click.pass_context
def cli(ctx, config_path, verbose):
    """Tornado outlook verification toolkit."""
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    ctx.obj = load_config(config_path)


@cli.command("ground-truth")
@click.option("--date", "dates", multiple=True, required=True, callback=parse_date, help="Forecast date.")
@click.option("--reports", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Report CSV (default: paths.reports).")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: paths.ground_truth).")
@click.pass_obj
def ground_truth_cmd(cfg: RunConfig, dates, reports, out):
    """Build daily ground-truth GeoJSON from tornado reports."""
    from tornadoverif.polygonize import write_ground_truth

    reports = reports or cfg.path("reports")
    out = Path(out or cfg.path("ground_truth"))
    out.mkdir(parents=True, exist_ok=True)
    for date in dates:
        try:
            gt = make_ground_truth(cfg, date, reports)
        except TornadoVerifError as exc:
            click.echo(f"error: {date}: {exc}", err=True)
            raise SystemExit(exit_code_for(exc)) from exc
        path = write_ground_truth(gt, out)
        click.echo(f"{date}: max risk {gt.max_level.label}, {gt.report_count} reports -> {path}")


@cli.command("validate")
@click.argument("prediction", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def validate_cmd(cfg: RunConfig, prediction):
    """Check a prediction GeoJSON; prints the coded report, exit 3 if rejected."""
    doc = validate_prediction(Path(prediction).read_text(), cfg.projection, cfg.scoring.eps_area)
    click.echo(json.dumps(doc.report.to_dict(), indent=1))
    if doc.accepted:
        click.echo(f"accepted: max level {doc.pred_max.label}", err=True)
    else:
        raise SystemExit(EXIT_DATA)


@cli.command("score")
@click.option("--date", required=True, callback=parse_date)
@click.option("--gt", "gt_file", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--pred", "pred_file", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write scores.tsv here.")
@click.pass_obj
def score_cmd(cfg: RunConfig, date, gt_file, pred_file, out):
    """Score one prediction against one ground truth."""
    gt = read_ground_truth(gt_file)
    if gt.date != date:
        raise ArgumentError(f"ground truth is for {gt.date}, not {date}")
    doc = validate_prediction(Path(pred_file).read_text(), cfg.projection, cfg.scoring.eps_area, date)
    declared = json.loads(doc.raw).get("date") if doc.accepted else None
    if isinstance(declared, str) and declared != date.isoformat():
        raise ArgumentError(f"prediction declares date {declared}, not {date}")
    if not doc.accepted:
        for issue in doc.report.errors:
            click.echo(f"rejected: {issue}", err=True)
    o = score_prediction(cfg, gt, doc)
    text = format_scores([o])
    if out:
        write_scores([o], out)
    click.echo(text.rstrip("\n"))


def _model_outcomes(cfg: RunConfig, runs: list[Path], gt_dir) -> tuple[list[DailyOutcome], list[dict]]:
    outcomes, stats = [], []
    for path in runs:
        run = load_run(path)
        if not run.complete:
            logger.warning("%s: incomplete run (%s); skipped", path, "; ".join(run.problems))
            continue
        date = dt.datetime.strptime(path.name, "%Y%m%d").date()
        if run.transcript:
            stats.append(run.transcript.get("stats", {}))
        gp = gt_path(cfg, date, gt_dir) if gt_dir else None
        if gp is not None and gp.is_file():
            doc = None
            if run.prediction_text is not None:
                doc = validate_prediction(run.prediction_text, cfg.projection, cfg.scoring.eps_area, date)
            outcomes.append(score_prediction(cfg, read_ground_truth(gp), doc))
        elif run.outcomes:
            outcomes.extend(run.outcomes)
        else:
            logger.warning("%s: no scores and no ground truth; skipped", path)
    return outcomes, stats


def interaction_table(rows: list[tuple[str, int, list[dict]]]) -> str:
    lines = ["model\tprediction_days\tavg_assistant_turns\tavg_tool_calls\tavg_sounding_requests"]
    for model, pred_days, stats in rows:
        def avg(k):
            vals = [s.get(k, 0) for s in stats]
            return f"{np.mean(vals):.2f}" if vals else "NA"
        lines.append(f"{model}\t{pred_days}\t{avg('assistant_turns')}\t{avg('tool_calls')}\t{avg('sounding_requests')}")
    return "\n".join(lines) + "\n"


def _summary_rows(cfg, labelled, skip_undefined: bool = False):
    header, body = None, []
    for label, outcomes in labelled:
        try:
            s = summarize(outcomes, cfg.scoring.bootstrap_iterations, cfg.scoring.bootstrap_seed,
                          cfg.scoring.absent_as_zero)
        except UndefinedMetricError as exc:
            if not skip_undefined:
                raise UndefinedMetricError(f"{label}: {exc}") from exc
            click.echo(f"warning: {label}: {exc}; no summary row", err=True)
            continue
        h, row = format_summary(s, label).splitlines()
        header = header or h
        body.append(row)
    return (header + "\n" + "\n".join(body) + "\n") if header else ""


@cli.command("bench")
@click.option("--runs", "runs_root", type=click.Path(file_okay=False), default=None,
              help="Runs directory (default: paths.runs).")
@click.option("--model", "models", multiple=True, help="Restrict to these model directories.")
@click.option("--gt-dir", type=click.Path(file_okay=False), default=None,
              help="Rescore predictions against ground truths in this directory.")
@click.option("--spc-replay", is_flag=True, help="Summarize the bundled SPC daily score table instead.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Write tables here.")
@click.pass_obj
def bench_cmd(cfg: RunConfig, runs_root, models, gt_dir, spc_replay, out):
    """Aggregate scores, bootstrap intervals and interaction statistics."""
    labelled, inter, per_model = [], [], {}
    if spc_replay:
        outcomes = spc_outcomes()
        labelled.append(("SPC", outcomes))
        per_model["SPC"] = outcomes
    else:
        root = Path(runs_root or cfg.path("runs"))
        by_model: dict[str, list[Path]] = {}
        for p in iter_runs(root):
            by_model.setdefault(p.parent.name, []).append(p)
        if models:
            missing = set(models) - set(by_model)
            if missing:
                raise ArgumentError(f"no runs for model(s) {', '.join(sorted(missing))} under {root}")
            by_model = {m: by_model[m] for m in models}
        for model, runs in sorted(by_model.items()):
            outcomes, stats = _model_outcomes(cfg, runs, gt_dir)
            if not outcomes:
                logger.warning("%s: nothing to score", model)
                continue
            labelled.append((model, outcomes))
            per_model[model] = outcomes
            inter.append((model, sum(o.has_prediction for o in outcomes), stats))
    if not labelled:
        raise DataError("no scored days found")
    summary = _summary_rows(cfg, labelled)
    _echo_summary(summary)
    if inter:
        _echo_summary(interaction_table(inter))
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.tsv").write_text(summary)
        if inter:
            (out / "interaction.tsv").write_text(interaction_table(inter))
        for model, outcomes in per_model.items():
            write_scores(outcomes, out / f"{_safe(model)}_scores.tsv")


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._+-]", "_", name)


def _model_name(spec: str) -> str:
    kind, _, rest = spec.partition(":")
    if kind == "script":
        return Path(rest).stem
    if kind == "openai":
        return rest
    return _safe(rest.split("/")[-1] or kind) or kind


@cli.command("harness-run")
@click.option("--date", "dates", multiple=True, required=True, callback=parse_date)
@click.option("--endpoint", "spec", required=True,
              help="script:FILE, http:URL, cmd:COMMAND or openai:MODEL.")
@click.option("--model", default=None, help="Run directory name (default: derived from the endpoint).")
@click.option("--archive", type=click.Path(file_okay=False), default=None)
@click.option("--runs", "runs_root", type=click.Path(file_okay=False), default=None)
@click.option("--gt-dir", type=click.Path(file_okay=False), default=None,
              help="Score each submission against ground truths here (default: paths.ground_truth).")
@click.option("--image-mode", type=click.Choice(["base64", "path"]), default=None)
@click.pass_obj
def harness_run_cmd(cfg: RunConfig, dates, spec, model, archive, runs_root, gt_dir, image_mode):
    """Run agent sessions; one run directory per date."""
    import dataclasses

    from tornadoverif.harness import parse_endpoint_spec, run_session
    from tornadoverif.harness.endpoints import close_endpoint

    model = model or _model_name(spec)
    archive = Path(archive or cfg.path("archive"))
    runs_root = Path(runs_root or cfg.path("runs"))
    hcfg = cfg.harness_config()
    if image_mode:
        hcfg = dataclasses.replace(hcfg, image_mode=image_mode)
    close_endpoint(parse_endpoint_spec(spec, cfg.harness.endpoint_timeout))  # reject bad specs up front
    failures = 0
    for date in dates:
        index = build_index(archive, date)
        endpoint = parse_endpoint_spec(spec, cfg.harness.endpoint_timeout)
        try:
            session = run_session(endpoint, index, date, hcfg)
        finally:
            close_endpoint(endpoint)
        doc = session.prediction
        outcomes = []
        gp = gt_path(cfg, date, gt_dir)
        if gp.is_file():
            outcomes = [score_prediction(cfg, read_ground_truth(gp), doc)]
        meta = {"model": model, "endpoint": spec, "date": date.isoformat(), "config": cfg.to_dict()}
        path = persist_run(run_dir(runs_root, model, date), session.transcript(),
                           doc.raw if doc else None, doc.report if doc else None, outcomes, meta)
        state = session.terminal.value
        if session.terminal.value == "agent_error":
            failures += 1
            state += f" ({session.error})"
        tb = f", tb {outcomes[0].tb}" if outcomes and outcomes[0].tb is not None else ""
        click.echo(f"{date}: {state}, {session.assistant_turns} turns, {session.tool_calls} tool calls, "
                   f"{session.quota_used} soundings{tb} -> {path}")
    if failures:
        click.echo(f"{failures} session(s) ended with an endpoint failure", err=True)
        raise SystemExit(EXIT_ENDPOINT)


@cli.command("report")
@click.option("--runs", "runs_root", type=click.Path(file_okay=False), default=None)
@click.option("--gt-dir", type=click.Path(file_okay=False), default=None)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.pass_obj
def report_cmd(cfg: RunConfig, runs_root, gt_dir, out):
    """Overlay images (one per prediction day) and summary tables."""
    from tornadoverif.plotting import render_overlay

    out = Path(out)
    root = Path(runs_root or cfg.path("runs"))
    gdir = Path(gt_dir or cfg.path("ground_truth"))
    labelled, inter, images = [], [], 0
    by_model: dict[str, list[Path]] = {}
    for p in iter_runs(root):
        by_model.setdefault(p.parent.name, []).append(p)
    for model, runs in sorted(by_model.items()):
        outcomes, stats = _model_outcomes(cfg, runs, gdir)
        for path in runs:
            run = load_run(path)
            date = dt.datetime.strptime(path.name, "%Y%m%d").date()
            gp = gt_path(cfg, date, gdir)
            if not run.complete or run.prediction_text is None or not gp.is_file():
                continue
            doc = validate_prediction(run.prediction_text, cfg.projection, cfg.scoring.eps_area, date)
            if not doc.accepted:
                continue
            gt = read_ground_truth(gp)
            gt_cum = to_cumulative(RiskMap(date, {b.level: b.geometry for b in gt.bands},
                                           source=MapSource.GROUND_TRUTH, crs="wgs84"))
            tb = next((o.tb for o in outcomes if o.date == date), None)
            title = f"{model} {date}  observed max {gt.max_level.label}, forecast max {doc.pred_max.label}"
            if tb is not None:
                title += f", score {100 * tb:.1f}%"
            render_overlay(gt_cum.bands, doc.wgs84, out / _safe(model) / f"{date:%Y%m%d}.png", title)
            images += 1
        if outcomes:
            labelled.append((model, outcomes))
            inter.append((model, sum(o.has_prediction for o in outcomes), stats))
    out.mkdir(parents=True, exist_ok=True)
    rows = 0
    if labelled:
        table = _summary_rows(cfg, labelled, skip_undefined=True)
        if table:
            (out / "summary.tsv").write_text(table)
            rows = len(table.splitlines()) - 1
        (out / "interaction.tsv").write_text(interaction_table(inter))
    click.echo(f"{images} overlay image(s) and {rows} model summary row(s) -> {out}")


@cli.command("show-config")
@click.pass_obj
def show_config_cmd(cfg: RunConfig):
    """Print the effective configuration."""
    click.echo(dump_config(cfg).rstrip("\n"))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="tornadoverif", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return EXIT_ARGUMENT if isinstance(exc, click.UsageError) else exc.exit_code
    except TornadoVerifError as exc:
        click.echo(f"error: {exc}", err=True)
        return exit_code_for(exc)
    except SystemExit as exc:
        return int(exc.code or 0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
