"""Command-line entry points.

Exit codes: 0 success, 2 usage or configuration problem, 3 numerical
failure with no usable output.  All outputs are directories of CSV and
JSON files; every output directory carries a manifest that fully
determines the run.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np
from threadpoolctl import threadpool_limits

from .data_io import (
    aggregate_table,
    parse_rate_csv,
    round_counts,
    to_model_dataset,
    write_rate_csv,
)
from .design import ModelSpec, build_design
from .effects import model_effect_tables
from .errors import ApcError, FitError
from .glm import FittedApcModel, fit_apc
from .reporting import (
    study_config_dict,
    write_csv,
    write_manifest,
    write_study_report,
)
from .simulate import PROFILES, run_study, study_setup

CONFIG_EXIT = 2
NUMERICAL_EXIT = 3
OUT_ROOT_ENV = "APCSMOOTH_OUT_ROOT"


@click.group()
@click.pass_context
def main(ctx):
    """Age-period-cohort models with penalized smoothing splines."""
    # the linear algebra here is all small; BLAS threading only adds overhead
    ctx.with_resource(threadpool_limits(1))


def _fail(exc: Exception, code: int):
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


def _resolve_out(path: Path) -> Path:
    """Relative outputs land under $APCSMOOTH_OUT_ROOT when it is set."""
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


@main.command()
@click.option("--profile", type=click.Choice(PROFILES), required=True)
@click.option(
    "--family",
    type=click.Choice(["gaussian", "binomial", "poisson"]),
    default="binomial",
    show_default=True,
)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--replicates", type=int, default=100, show_default=True)
@click.option("--drop", type=click.Choice(["age", "period", "cohort"]), default="cohort")
@click.option("--workers", type=int, default=None, help="default: machine parallelism")
@click.option("--out", required=True, type=click.Path(path_type=Path))
def simulate(profile, family, seed, replicates, drop, workers, out):
    """Run a preconfigured simulation study and write its report."""
    out = _resolve_out(out)
    workers = workers or os.cpu_count() or 1
    try:
        cfg, truths, models = study_setup(profile, family, seed, S=replicates)
        report = run_study(cfg, truths, models, drop=drop, workers=workers)
    except FitError as exc:
        _fail(exc, NUMERICAL_EXIT)
    except ApcError as exc:
        _fail(exc, CONFIG_EXIT)
    out.mkdir(parents=True, exist_ok=True)
    write_study_report(report, out)
    write_manifest(
        out, "simulate", study_config_dict(report, {"profile": profile})
    )
    excluded = sum(len(m.excluded) for m in report.models.values())
    click.echo(f"wrote study report to {out} ({excluded} non-converged fits excluded)")


def _parse_knots(text):
    if not text:
        return None
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise click.UsageError("--knots takes three comma-separated counts: age,period,cohort")
    return {"age": parts[0], "period": parts[1], "cohort": parts[2]}


def _fit_dataset(data: Path, kind, drop, knots, family, augment_periodic, dense_knots):
    table = round_counts(parse_rate_csv(data))
    dataset = to_model_dataset(table, family_kind=family)
    spec = ModelSpec(
        kind=kind,
        knots=knots,
        dense_knots=dense_knots,
        augment_periodic=augment_periodic,
    )
    design = build_design(dataset.grid, spec, drop=drop)
    fit = fit_apc(design, dataset.y, dataset.family())
    return table, dataset, fit


def _write_fit_outputs(out: Path, fit, table, config, warnings_list):
    out.mkdir(parents=True, exist_ok=True)
    write_rate_csv(table, out / "dataset.csv")
    design = fit.design
    grid = design.grid
    mids = {
        "age": grid.age_midpoints,
        "period": grid.period_midpoints,
        "cohort": grid.cohort_midpoints,
    }
    rows = []
    for dim in ("age", "period", "cohort"):
        for x, v in zip(mids[dim], fit.block_fit(dim, mids[dim])):
            rows.append((dim, x, v))
    write_csv(out / "smooth_curvatures.csv", ("dimension", "x", "value"), rows)

    tables = model_effect_tables(fit)
    rows = []
    for dim in ("age", "period", "cohort"):
        t = tables[dim]
        for x, e, c in zip(t.x, t.effect, t.curvature):
            rows.append((dim, x, e, c))
    write_csv(out / "effects.csv", ("dimension", "x", "effect", "curvature"), rows)

    fit_record = {
        "beta": [float(b) for b in fit.beta],
        "lambdas": {k: float(v) for k, v in fit.lambdas.items()},
        "deviance": float(fit.deviance),
        "edf": float(fit.edf),
        "gcv": None if fit.gcv is None else float(fit.gcv),
        "converged": bool(fit.converged),
        "iterations": int(fit.iterations),
        "smoothing_criterion": fit.report.get("criterion"),
        "deviance_rtol": fit.report.get("deviance_rtol"),
        "dropped_columns": {k: int(v) for k, v in design.dropped_columns.items()},
        "grid": {
            "A": grid.A,
            "P": grid.P,
            "M": grid.M,
            "C": grid.C,
            "age_start": grid.age_start,
            "age_width": grid.age_width,
            "period_start": grid.period_start,
            "period_width": grid.period_width,
        },
        "config": config,
        "warnings": warnings_list,
    }
    with open(out / "fit.json", "w", encoding="utf-8") as fh:
        json.dump(fit_record, fh, indent=2, sort_keys=True)
        fh.write("\n")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--kind", type=click.Choice(["fa", "rss", "pss"]), default="pss", show_default=True)
@click.option("--drop", type=click.Choice(["age", "period", "cohort"]), default="cohort", show_default=True)
@click.option("--knots", default="10,10,20", show_default=True, help="age,period,cohort knot counts")
@click.option("--family", type=click.Choice(["binomial", "poisson"]), default="binomial", show_default=True)
@click.option("--augment-periodic", is_flag=True, default=False)
@click.option("--dense-knots", is_flag=True, default=False)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), help="JSON overriding the flags")
def fit(data, out, kind, drop, knots, family, augment_periodic, dense_knots, config_path):
    """Fit an APC model to a rate CSV; counts are rounded to integers."""
    out = _resolve_out(out)
    knots_map = _parse_knots(knots)
    if config_path is not None:
        with open(config_path, encoding="utf-8") as fh:
            overrides = json.load(fh)
        kind = overrides.get("kind", kind)
        drop = overrides.get("drop", drop)
        family = overrides.get("family", family)
        knots_map = overrides.get("knots", knots_map)
        augment_periodic = overrides.get("augment_periodic", augment_periodic)
        dense_knots = overrides.get("dense_knots", dense_knots)
    try:
        table, dataset, fitted = _fit_dataset(
            data, kind, drop, knots_map, family, augment_periodic, dense_knots
        )
    except FitError as exc:
        _fail(exc, NUMERICAL_EXIT)
    except ApcError as exc:
        _fail(exc, CONFIG_EXIT)

    config = {
        "kind": kind,
        "drop": drop,
        "knots": knots_map,
        "family": family,
        "augment_periodic": augment_periodic,
        "dense_knots": dense_knots,
        "data": str(data),
    }
    notes = []
    if kind == "fa" and dataset.grid.M > 1:
        note = (
            "factor curvatures are not identifiable for unequal intervals "
            f"(M={dataset.grid.M}); estimates may show an M-periodic artefact"
        )
        notes.append(note)
        click.echo(f"warning: {note}", err=True)
    _write_fit_outputs(out, fitted, table, config, notes)
    write_manifest(out, "fit", config, inputs={"data": data})
    click.echo(
        f"fit written to {out} (deviance {fitted.deviance:.3f}, edf {fitted.edf:.1f}, "
        f"converged {fitted.converged})"
    )


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--age", "age_factor", type=int, default=1, show_default=True)
@click.option("--period", "period_factor", type=int, default=1, show_default=True)
@click.option("--round/--no-round", "do_round", default=False, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
def aggregate(data, age_factor, period_factor, do_round, out):
    """Aggregate a rate CSV over age/period blocks."""
    out = _resolve_out(out)
    try:
        table = parse_rate_csv(data)
        table = aggregate_table(table, age_factor=age_factor, period_factor=period_factor)
        if do_round:
            table = round_counts(table)
    except ApcError as exc:
        _fail(exc, CONFIG_EXIT)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rate_csv(table, out)
    click.echo(f"wrote {table.n_rows} cells to {out}")


@main.command()
@click.option("--fit-dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
def effects(fit_dir, out):
    """Recompute effect tables from a fit directory."""
    out = _resolve_out(out)
    fit_path = fit_dir / "fit.json"
    data_path = fit_dir / "dataset.csv"
    if not fit_path.exists() or not data_path.exists():
        _fail(FileNotFoundError(f"{fit_dir} is not a fit directory"), CONFIG_EXIT)
    with open(fit_path, encoding="utf-8") as fh:
        record = json.load(fh)
    config = record["config"]
    try:
        table = parse_rate_csv(data_path)
        dataset = to_model_dataset(table, family_kind=config["family"])
        spec = ModelSpec(
            kind=config["kind"],
            knots=config.get("knots"),
            dense_knots=config.get("dense_knots", False),
            augment_periodic=config.get("augment_periodic", False),
        )
        design = build_design(dataset.grid, spec, drop=config["drop"])
    except ApcError as exc:
        _fail(exc, CONFIG_EXIT)
    beta = np.asarray(record["beta"], dtype=float)
    if beta.size != design.ncol:
        _fail(
            ValueError("stored coefficients do not match the rebuilt design"),
            CONFIG_EXIT,
        )
    fitted = FittedApcModel(
        beta=beta,
        lambdas=record["lambdas"],
        deviance=record["deviance"],
        edf=record["edf"],
        converged=record["converged"],
        iterations=record["iterations"],
        design=design,
        family=dataset.family(),
    )
    tables = model_effect_tables(fitted)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for dim in ("age", "period", "cohort"):
        t = tables[dim]
        for x, e, c in zip(t.x, t.effect, t.curvature):
            rows.append((dim, x, e, c))
    write_csv(out / "effects.csv", ("dimension", "x", "effect", "curvature"), rows)
    write_manifest(out, "effects", {"fit_dir": str(fit_dir)}, inputs={"fit": fit_path, "data": data_path})
    click.echo(f"wrote effect tables to {out}")


if __name__ == "__main__":
    main()
