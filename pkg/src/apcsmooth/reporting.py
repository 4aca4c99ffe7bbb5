"""Study and fit outputs: directories of CSV and JSON, never binary.

Floats are written with ``repr`` (shortest round-trip form), so equal
numbers always serialize to equal bytes and reruns with equal seeds
produce byte-identical CSVs regardless of worker count.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .effects import periodicity_amplitude
from .simulate import StudyReport


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir: Path, command: str, config: dict, inputs: dict | None = None):
    """Every output directory gets exactly one manifest describing the run."""
    manifest = {
        "command": command,
        "config": config,
        "artifact_version": __version__,
        "input_digests": {str(k): file_digest(v) for k, v in (inputs or {}).items()},
        "created": datetime.now(timezone.utc).isoformat(),
    }
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _effect_rows(tables: dict):
    for dim in ("age", "period", "cohort"):
        t = tables[dim]
        curv = t.curvature if t.curvature is not None else np.full_like(t.effect, np.nan)
        for x, e, c in zip(t.x, t.effect, curv):
            yield dim, x, e, c


def write_study_report(report: StudyReport, outdir) -> Path:
    """Write the full study directory: truth, per-model effect tables,
    curvature bias/MSE, periodicity amplitudes and the convergence log."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    write_csv(
        outdir / "truth.csv",
        ("dimension", "x", "effect", "curvature"),
        _effect_rows(report.truth),
    )

    amp_rows = []
    conv_rows = []
    summary = {}
    for name, mr in report.models.items():
        write_csv(
            outdir / f"effects_{name}.csv",
            ("dimension", "x", "effect", "curvature"),
            _effect_rows(mr.mean_effects),
        )
        rows = []
        for dim in ("age", "period", "cohort"):
            s = mr.curvature_summary[dim]
            for x, b, m in zip(report.truth[dim].x, s.bias, s.mse):
                rows.append((dim, x, b, m))
        write_csv(outdir / f"bias_mse_{name}.csv", ("dimension", "x", "bias", "mse"), rows)

        for dim in ("period", "cohort"):
            for s, a in zip(mr.converged, mr.amplitudes[dim]):
                amp_rows.append((name, dim, s, a))
        for s in mr.converged:
            conv_rows.append((name, s, True, ""))
        for s, reason in mr.excluded:
            conv_rows.append((name, s, False, reason))

        summary[name] = {
            "replicates_converged": int(mr.converged.size),
            "replicates_excluded": len(mr.excluded),
            "amplitude_median": {
                dim: float(np.median(mr.amplitudes[dim])) for dim in ("period", "cohort")
            },
            "amplitude_of_mean_curvature": {
                dim: periodicity_amplitude(
                    mr.mean_effects[dim].curvature, report.config.amplitude_period
                )
                for dim in ("period", "cohort")
            },
        }

    conv_rows.sort(key=lambda r: (r[0], r[1]))
    write_csv(
        outdir / "amplitudes.csv", ("model", "dimension", "replicate", "amplitude"), amp_rows
    )
    write_csv(
        outdir / "convergence.csv", ("model", "replicate", "converged", "note"), conv_rows
    )
    with open(outdir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return outdir


def study_config_dict(report: StudyReport, extra: dict | None = None) -> dict:
    cfg = asdict(report.config)
    cfg["drop"] = report.drop
    cfg["models"] = {
        name: {
            "kind": mr.spec.kind,
            "knots": dict(mr.spec.knots) if mr.spec.knots else None,
            "dense_knots": mr.spec.dense_knots,
            "augment_periodic": mr.spec.augment_periodic,
        }
        for name, mr in report.models.items()
    }
    if extra:
        cfg.update(extra)
    return cfg
