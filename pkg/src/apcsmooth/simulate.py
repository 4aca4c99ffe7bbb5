"""Synthetic APC data generation and the model-comparison study runner.

Data are generated on a single-year grid from known quadratic temporal
shapes, then optionally aggregated in age by a factor M before fitting,
mirroring how providers release data that was collected in single years.
Each replicate draws from its own counter-based random stream (Philox
keyed with seed XOR replicate), so replicates can run in any order or in
parallel with bit-identical results.

A study fits several model flavours (factor, unpenalized spline,
penalized spline) to every replicate, extracts detrended effects and
curvatures, and reduces them to pointwise bias/MSE against the comparable
(aggregated) truth plus the periodicity amplitude of the period and
cohort curvatures.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from threadpoolctl import threadpool_limits

from .data_io import ApcDataset
from .design import ApcDesign, ModelSpec, build_design
from .effects import (
    EffectTable,
    aggregate_true_age,
    aggregate_true_cohort,
    bias_mse,
    detrend,
    marginal_effect,
    model_effect_tables,
    periodicity_amplitude,
)
from .errors import ApcError, ConfigurationError, DomainError, FitError
from .glm import fit_apc
from .grid import TemporalGrid, build_grid


@dataclass(frozen=True)
class Quadratic:
    """Picklable quadratic b1*x + b2*x^2 (workers must be able to ship it)."""

    b1: float
    b2: float

    def __call__(self, x):
        return self.b1 * x + self.b2 * x * x


@dataclass(frozen=True)
class TrueFunctions:
    """True temporal shapes plus the family-specific offset and scale.

    The linear predictor of a cell is
    ``offset + scale * (h_age(a) + h_period(p) + h_cohort(c))``.
    """

    h_age: object = field(default_factory=lambda: Quadratic(0.3, -0.01))
    h_period: object = field(default_factory=lambda: Quadratic(-0.04, 0.02))
    h_cohort: object = field(default_factory=lambda: Quadratic(0.35, -0.0015))
    offset: float = 0.0
    scale: float = 1.0
    include_cohort: bool = True

    @classmethod
    def for_family(cls, family_kind: str, include_cohort: bool = True) -> "TrueFunctions":
        offsets = {"gaussian": (0.0, 1.0), "binomial": (0.4, 1.0 / 50.0), "poisson": (-1.5, 1.0 / 50.0)}
        if family_kind not in offsets:
            raise ConfigurationError(f"unknown family {family_kind!r}")
        offset, scale = offsets[family_kind]
        return cls(offset=offset, scale=scale, include_cohort=include_cohort)

    def eta(self, a, p, c) -> np.ndarray:
        h = self.h_age(np.asarray(a, dtype=float)) + self.h_period(
            np.asarray(p, dtype=float)
        )
        if self.include_cohort:
            h = h + self.h_cohort(np.asarray(c, dtype=float))
        return self.offset + self.scale * h


@dataclass(frozen=True)
class SimConfig:
    """Study geometry: single-year ages on [0, A], periods on [0, P]."""

    family: str = "binomial"
    A: int = 60
    P: int = 20
    n_cell: int = 150
    S: int = 100
    M_aggregate: int = 1
    seed: int = 0
    amplitude_period: int = 5  # samples per cycle probed by the amplitude statistic

    def base_grid(self) -> TemporalGrid:
        return build_grid(self.A, self.P, 1)

    def fit_grid(self) -> TemporalGrid:
        """Grid the models are fit on, after any aggregation."""
        if self.M_aggregate == 1:
            return self.base_grid()
        if self.A % self.M_aggregate:
            raise DomainError(f"M={self.M_aggregate} does not divide A={self.A}")
        return build_grid(
            self.A // self.M_aggregate, self.P, self.M_aggregate
        )


def replicate_rng(seed: int, s: int) -> np.random.Generator:
    """Independent counter-based stream for replicate ``s``."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(s)))


def generate_replicate(cfg: SimConfig, truths: TrueFunctions, s: int) -> ApcDataset:
    """Draw one replicate on the single-year grid."""
    grid = cfg.base_grid()
    a, p, c = grid.cell_covariates()
    eta = truths.eta(a, p, c)
    rng = replicate_rng(cfg.seed, s)
    n = grid.n_cells

    if cfg.family == "gaussian":
        draws = rng.normal(loc=eta[:, None], scale=1.0, size=(n, cfg.n_cell))
        return ApcDataset(
            grid=grid,
            family_kind="gaussian",
            y=draws.mean(axis=1),
            weights=np.full(n, float(cfg.n_cell)),
        )
    if cfg.family == "binomial":
        trials = np.full(n, float(cfg.n_cell))
        y = rng.binomial(cfg.n_cell, expit(eta)).astype(float)
        return ApcDataset(grid=grid, family_kind="binomial", y=y, trials=trials)
    if cfg.family == "poisson":
        exposure = np.full(n, float(cfg.n_cell))
        y = rng.poisson(exposure * np.exp(eta)).astype(float)
        return ApcDataset(grid=grid, family_kind="poisson", y=y, exposure=exposure)
    raise ConfigurationError(f"unknown family {cfg.family!r}")


def aggregate_replicate(dataset: ApcDataset, M: int) -> ApcDataset:
    """Pool M consecutive age groups within each period."""
    grid = dataset.grid
    if M < 1:
        raise DomainError("M must be >= 1")
    if M == 1:
        return dataset
    if grid.A % M:
        raise DomainError(f"M={M} does not divide A={grid.A}")
    A2 = grid.A // M
    new_grid = build_grid(
        A2,
        grid.P,
        grid.M * M,
        age_start=grid.age_start,
        age_width=grid.age_width * M,
        period_start=grid.period_start,
        period_width=grid.period_width,
    )

    def pool_sum(v):
        return v.reshape(A2, M, grid.P).sum(axis=1).reshape(-1)

    if dataset.family_kind == "gaussian":
        wsum = pool_sum(dataset.weights)
        ysum = pool_sum(dataset.weights * dataset.y)
        return ApcDataset(
            grid=new_grid, family_kind="gaussian", y=ysum / wsum, weights=wsum
        )
    if dataset.family_kind == "binomial":
        return ApcDataset(
            grid=new_grid,
            family_kind="binomial",
            y=pool_sum(dataset.y),
            trials=pool_sum(dataset.trials),
        )
    return ApcDataset(
        grid=new_grid,
        family_kind="poisson",
        y=pool_sum(dataset.y),
        exposure=pool_sum(dataset.exposure),
    )


def true_effect_tables(cfg: SimConfig, truths: TrueFunctions) -> dict:
    """Detrended true effects over the single-year grid."""
    grid = cfg.base_grid()
    ha = truths.scale * truths.h_age(grid.age_midpoints)
    hp = truths.scale * truths.h_period(grid.period_midpoints)
    hc = truths.scale * truths.h_cohort(grid.cohort_midpoints)
    if not truths.include_cohort:
        hc = np.zeros_like(hc)
    cube = (
        truths.offset
        + ha[:, None, None]
        + hp[None, :, None]
        + hc[None, None, :]
    )
    return {
        dim: detrend(marginal_effect(cube, dim, grid))
        for dim in ("age", "period", "cohort")
    }


def aggregated_truth(tables: dict, M: int, grid_agg: TemporalGrid) -> dict:
    """True effects made comparable to estimates from M-aggregated data."""
    if M == 1:
        return tables
    age = EffectTable(
        dimension="age",
        x=grid_agg.age_midpoints,
        effect=aggregate_true_age(tables["age"].effect, M),
    )
    cohort = EffectTable(
        dimension="cohort",
        x=grid_agg.cohort_midpoints,
        effect=aggregate_true_cohort(tables["cohort"].effect, M),
    )
    return {
        "age": detrend(age),
        "period": tables["period"],
        "cohort": detrend(cohort),
    }


DEFAULT_MODELS = (
    ("fa", ModelSpec(kind="fa")),
    ("rss", ModelSpec(kind="rss")),
    ("pss", ModelSpec(kind="pss")),
)

PROFILES = ("equal", "unequal", "unequal-dense", "unequal-periodic")


def study_setup(profile: str, family: str, seed: int, S: int = 100):
    """Preconfigured study profiles: geometry, truths, and model list."""
    if profile == "equal":
        cfg = SimConfig(family=family, M_aggregate=1, seed=seed, S=S)
        models = DEFAULT_MODELS
    elif profile == "unequal":
        cfg = SimConfig(family=family, M_aggregate=5, seed=seed, S=S)
        models = DEFAULT_MODELS
    elif profile == "unequal-dense":
        cfg = SimConfig(family=family, M_aggregate=5, seed=seed, S=S)
        models = (
            ("rss", ModelSpec(kind="rss", dense_knots=True)),
            ("pss", ModelSpec(kind="pss", dense_knots=True)),
        )
    elif profile == "unequal-periodic":
        cfg = SimConfig(family=family, M_aggregate=5, seed=seed, S=S)
        models = (
            ("rss", ModelSpec(kind="rss", augment_periodic=True)),
            ("pss", ModelSpec(kind="pss", augment_periodic=True)),
        )
    else:
        raise ConfigurationError(f"unknown profile {profile!r}")
    truths = TrueFunctions.for_family(family)
    return cfg, truths, models


_DESIGN_CACHE: dict = {}


def _cached_design(grid: TemporalGrid, spec: ModelSpec, drop: str) -> ApcDesign:
    key = (
        grid.A, grid.P, grid.M,
        grid.age_start, grid.age_width, grid.period_start, grid.period_width,
        spec, drop,
    )
    design = _DESIGN_CACHE.get(key)
    if design is None:
        design = build_design(grid, spec, drop)
        _DESIGN_CACHE[key] = design
    return design


def _run_replicate(cfg: SimConfig, truths: TrueFunctions, models, drop: str, s: int):
    """Generate, aggregate, fit and extract one replicate; returns plain
    arrays so results can cross process boundaries."""
    with threadpool_limits(1):
        return _run_replicate_inner(cfg, truths, models, drop, s)


def _run_replicate_inner(cfg, truths, models, drop, s):
    # single-threaded BLAS: the matrices are far too small to share
    dataset = aggregate_replicate(
        generate_replicate(cfg, truths, s), cfg.M_aggregate
    )
    family = dataset.family()
    out = {}
    for name, spec in models:
        design = _cached_design(dataset.grid, spec, drop)
        try:
            fit = fit_apc(design, dataset.y, family)
        except ApcError as exc:
            out[name] = {"error": str(exc)}
            continue
        tables = model_effect_tables(fit)
        out[name] = {
            "converged": fit.converged,
            "iterations": fit.iterations,
            "effects": {d: t.effect for d, t in tables.items()},
            "curvatures": {d: t.curvature for d, t in tables.items()},
            "amplitudes": {
                d: periodicity_amplitude(tables[d].curvature, cfg.amplitude_period)
                for d in ("period", "cohort")
            },
            "lambdas": {k: float(v) for k, v in fit.lambdas.items()},
            "deviance": fit.deviance,
            "edf": fit.edf,
        }
    return out


@dataclass
class ModelStudyResult:
    """Replicate-level and reduced results for one model flavour."""

    name: str
    spec: ModelSpec
    effects: dict
    curvatures: dict
    mean_effects: dict
    curvature_summary: dict
    amplitudes: dict
    converged: np.ndarray
    excluded: list
    lambda_log: list


@dataclass
class StudyReport:
    config: SimConfig
    drop: str
    truth: dict
    models: dict
    replicates_used: int


def run_study(
    cfg: SimConfig,
    truths: TrueFunctions,
    models=DEFAULT_MODELS,
    drop: str = "cohort",
    workers: int = 1,
) -> StudyReport:
    """Run the full replicate-fit-extract-summarize pipeline.

    Replicates use independent random streams, so the report is a pure
    function of (cfg, truths, models, drop) regardless of ``workers``.
    Non-convergent or failed fits are excluded from summaries and counted.
    """
    grid_fit = cfg.fit_grid()
    truth_base = true_effect_tables(cfg, truths)
    truth = aggregated_truth(truth_base, cfg.M_aggregate, grid_fit)

    reps = range(1, cfg.S + 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(
                    _run_replicate,
                    *zip(*[(cfg, truths, models, drop, s) for s in reps]),
                    chunksize=max(1, cfg.S // (4 * workers)),
                )
            )
    else:
        results = [_run_replicate(cfg, truths, models, drop, s) for s in reps]

    model_results = {}
    for name, spec in models:
        ok = [
            (s, r[name])
            for s, r in zip(reps, results)
            if "error" not in r[name] and r[name]["converged"]
        ]
        excluded = [
            (s, r[name].get("error", "did not converge"))
            for s, r in zip(reps, results)
            if "error" in r[name] or not r[name]["converged"]
        ]
        if not ok:
            raise FitError(f"model {name!r} produced no converged fits")
        dims = ("age", "period", "cohort")
        curvatures = {
            d: np.vstack([r["curvatures"][d] for _, r in ok]) for d in dims
        }
        effects = {d: np.vstack([r["effects"][d] for _, r in ok]) for d in dims}
        mean_effects = {
            d: EffectTable(
                dimension=d,
                x=truth[d].x,
                effect=effects[d].mean(axis=0),
                curvature=curvatures[d].mean(axis=0),
            )
            for d in dims
        }
        curvature_summary = {
            d: bias_mse(curvatures[d], truth[d].curvature) for d in dims
        }
        amplitudes = {
            d: np.array([r["amplitudes"][d] for _, r in ok])
            for d in ("period", "cohort")
        }
        model_results[name] = ModelStudyResult(
            name=name,
            spec=spec,
            effects=effects,
            curvatures=curvatures,
            mean_effects=mean_effects,
            curvature_summary=curvature_summary,
            amplitudes=amplitudes,
            converged=np.array([s for s, _ in ok], dtype=int),
            excluded=excluded,
            lambda_log=[r["lambdas"] for _, r in ok],
        )

    return StudyReport(
        config=cfg,
        drop=drop,
        truth=truth,
        models=model_results,
        replicates_used=cfg.S,
    )
