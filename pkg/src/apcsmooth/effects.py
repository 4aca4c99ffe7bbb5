"""Identifiable quantities extracted from fitted APC models.

Individual temporal trends are not identifiable under the structural link
c = p - M*a, so comparisons run through quantities that are: the linear
predictor is evaluated over the full cube of age-period-cohort midpoint
combinations (including combinations that cannot occur in data), each
marginal mean minus the grand mean gives a temporal effect, and the
residual of that effect after removing its ordinary least squares fit on
[1 : x] gives the identifiable curvature.

For data aggregated by a factor of M in age, true single-year effects are
made comparable to estimates by averaging: block means of M consecutive
ages, and a moving window of M consecutive cohorts advancing one period
at a time.

The module also provides the frequency-domain amplitude used to quantify
M-periodic artefacts in curvature estimates, and a quadrature check of
the roughness decomposition for natural cubic splines with knots spaced
M apart (the cross term between the spline curvature and any M-periodic
disturbance integrates to zero, so the disturbance can only add
roughness).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .basis import KnotSet, NaturalCubicSpline
from .errors import ConfigurationError, DomainError
from .glm import FittedApcModel
from .grid import TemporalGrid

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(40)


@dataclass(frozen=True)
class EffectTable:
    """Effect (and optionally curvature) of one temporal dimension."""

    dimension: str
    x: np.ndarray
    effect: np.ndarray
    curvature: np.ndarray | None = None


@dataclass(frozen=True)
class ReplicateSummary:
    """Pointwise bias and mean squared error across replicates."""

    bias: np.ndarray
    mse: np.ndarray
    S: int


def full_cube_eta(model: FittedApcModel) -> np.ndarray:
    """Linear predictor over every (age, period, cohort) midpoint triple.

    The cube deliberately includes structurally impossible combinations;
    marginal means over it are what make effects comparable across models
    and across the slope-drop choice.
    """
    design = model.design
    grid = design.grid
    mids = {
        "age": grid.age_midpoints,
        "period": grid.period_midpoints,
        "cohort": grid.cohort_midpoints,
    }
    contrib = {}
    for dim in ("age", "period", "cohort"):
        vec = model.block_fit(dim, mids[dim])
        slope_key = f"slope_{dim}"
        if slope_key in design.column_map:
            coef = model.beta[design.column_map[slope_key]][0]
            vec = vec + coef * design.scales[dim].scale(mids[dim])
        contrib[dim] = vec
    intercept = model.beta[design.column_map["intercept"]][0]
    return (
        intercept
        + contrib["age"][:, None, None]
        + contrib["period"][None, :, None]
        + contrib["cohort"][None, None, :]
    )


def marginal_effect(cube: np.ndarray, dimension: str, grid: TemporalGrid) -> EffectTable:
    """Marginal mean of the cube along one dimension, grand mean removed."""
    axes = {"age": (1, 2), "period": (0, 2), "cohort": (0, 1)}
    if dimension not in axes:
        raise ConfigurationError(f"unknown dimension {dimension!r}")
    mids = {
        "age": grid.age_midpoints,
        "period": grid.period_midpoints,
        "cohort": grid.cohort_midpoints,
    }[dimension]
    effect = cube.mean(axis=axes[dimension]) - cube.mean()
    return EffectTable(dimension=dimension, x=mids, effect=effect)


def detrend(table: EffectTable) -> EffectTable:
    """Fill the curvature: residual of the effect regressed on [1 : x]."""
    x = np.asarray(table.x, dtype=float)
    if x.size < 3:
        raise DomainError("detrending needs at least 3 points")
    basis = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(basis, table.effect, rcond=None)
    return replace(table, curvature=table.effect - basis @ coef)


def model_effect_tables(model: FittedApcModel) -> dict:
    """Detrended effect tables for all three dimensions of a fit."""
    cube = full_cube_eta(model)
    return {
        dim: detrend(marginal_effect(cube, dim, model.design.grid))
        for dim in ("age", "period", "cohort")
    }


def aggregate_true_age(effect: np.ndarray, M: int) -> np.ndarray:
    """Block means of M consecutive single-age values."""
    effect = np.asarray(effect, dtype=float)
    if M < 1:
        raise DomainError("M must be >= 1")
    if effect.size % M:
        raise DomainError(f"M={M} does not divide {effect.size} ages")
    return effect.reshape(-1, M).mean(axis=1)


def aggregate_true_cohort(effect: np.ndarray, M: int) -> np.ndarray:
    """Moving average of window M advancing in single steps."""
    effect = np.asarray(effect, dtype=float)
    if M < 1:
        raise DomainError("M must be >= 1")
    if effect.size < M:
        raise DomainError(f"need at least M={M} cohorts, got {effect.size}")
    kernel = np.full(M, 1.0 / M)
    return np.convolve(effect, kernel, mode="valid")


def bias_mse(estimates: np.ndarray, truth: np.ndarray) -> ReplicateSummary:
    """Pointwise bias and MSE of an S x n matrix of estimates."""
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    truth = np.asarray(truth, dtype=float)
    if estimates.shape[0] == 0:
        raise DomainError("no replicates")
    if estimates.shape[1] != truth.size:
        raise ConfigurationError("estimate/truth length mismatch")
    err = estimates - truth[None, :]
    return ReplicateSummary(
        bias=err.mean(axis=0), mse=(err**2).mean(axis=0), S=estimates.shape[0]
    )


def periodicity_amplitude(curvature: np.ndarray, M: int) -> float:
    """Peak amplitude of the period-M component of a sequence.

    Uses the discrete Fourier coefficient at frequency 1/M, scaled so a
    pure sinusoid of peak amplitude 1 returns 1.
    """
    curvature = np.asarray(curvature, dtype=float)
    n = curvature.size
    if M < 2:
        raise DomainError("period must be at least 2 samples")
    if n < 2 * M:
        raise DomainError(f"need at least 2*M={2*M} samples, got {n}")
    t = np.arange(n)
    coef = np.sum(curvature * np.exp(-2j * np.pi * t / M))
    return float(2.0 * np.abs(coef) / n)


def _integrate(f, a: float, b: float) -> float:
    xs = (a + b) / 2.0 + (b - a) / 2.0 * _GL_NODES
    return float((b - a) / 2.0 * np.sum(_GL_WEIGHTS * f(xs)))


def penalty_inequality_check(
    knots: KnotSet,
    values_at_knots: np.ndarray,
    v_curvature,
    m: float,
) -> tuple[float, float, float]:
    """Roughness decomposition of a disturbed natural cubic spline.

    For a natural cubic spline f with knots spaced ``m`` apart and an
    m-periodic disturbance v (supplied through its second derivative
    ``v_curvature``), integrates over the knot span and returns

        (lhs, cross, rhs) = (int (f''+v'')^2, 2 int f'' v'', int f''^2).

    The cross term vanishes analytically, so lhs >= rhs: disturbing a
    curvature estimate by a periodic function can only add roughness.
    """
    if knots.kind != "standard":
        raise ConfigurationError("check requires standard knots")
    k = knots.knots
    gaps = np.diff(k)
    if np.any(np.abs(gaps - m) > 1e-9 * max(m, 1.0)):
        raise ConfigurationError(f"knots must be spaced {m} apart")
    f = NaturalCubicSpline(k, np.asarray(values_at_knots, dtype=float))

    lhs = cross = rhs = 0.0
    for a, b in zip(k[:-1], k[1:]):
        lhs += _integrate(
            lambda x: (f.second_derivative(x) + v_curvature(x)) ** 2, a, b
        )
        cross += 2.0 * _integrate(
            lambda x: f.second_derivative(x) * v_curvature(x), a, b
        )
        rhs += _integrate(lambda x: f.second_derivative(x) ** 2, a, b)
    return lhs, cross, rhs
