"""Assembly of the estimable age-period-cohort model matrix.

The model is  g(mu) = b0 + s1*b1 + s2*b2 + f_A(a) + f_P(p) + f_C(c)  where
s1, s2 are the two retained temporal slopes and each f is a curvature
term orthogonalized to the intercept and to its own linear trend.  Exactly
one of the three slopes is dropped; the curvature blocks do not depend on
that choice.  Curvature terms are factor contrasts ("fa") or cubic
regression splines, unpenalized ("rss") or penalized ("pss").

Covariates are centered and scaled to unit half-range before slope and
constraint construction so that year-scale covariates stay well
conditioned.  After assembly, numerically dependent columns are dropped by
a rank-revealing sweep (never silently): with unequal intervals, functions
that are periodic in M period steps are expressible through both the
period and cohort blocks, which makes the unpenalized design singular.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .basis import (
    BasisBlock,
    KnotSet,
    crs_basis,
    cyclic_crs_basis,
    default_knot_count,
    default_knots,
)
from .errors import ConfigurationError, DependentColumnsWarning
from .grid import TemporalGrid
from .reparam import orthogonalize_to_linear

DIMENSIONS = ("age", "period", "cohort")
MODEL_KINDS = ("fa", "rss", "pss")


@dataclass(frozen=True)
class CovariateScale:
    """Affine map onto [-1, 1] used for slopes and constraints."""

    center: float
    half_range: float

    def scale(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.half_range

    @classmethod
    def from_values(cls, values: np.ndarray) -> "CovariateScale":
        lo, hi = float(np.min(values)), float(np.max(values))
        if hi <= lo:
            raise ConfigurationError("covariate has no spread")
        return cls(center=(hi + lo) / 2.0, half_range=(hi - lo) / 2.0)


@dataclass(frozen=True)
class ModelSpec:
    """Which flavour of curvature terms to fit and on what basis.

    ``knots`` overrides the per-dimension knot count; otherwise the count
    is 25% of the number of distinct covariate values (floored at 3), or
    one less than the number of distinct values when ``dense_knots`` is
    set.  ``augment_periodic`` adds cyclic spline columns to the period
    and cohort blocks (spline kinds only).
    """

    kind: str
    knots: tuple | None = None  # ((dimension, count), ...); dicts accepted
    dense_knots: bool = False
    augment_periodic: bool = False

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if self.kind == "fa" and (self.dense_knots or self.augment_periodic):
            raise ConfigurationError("factor model takes no basis options")
        if self.knots is not None:
            items = (
                self.knots.items() if isinstance(self.knots, dict) else self.knots
            )
            normalized = tuple(sorted((str(d), int(k)) for d, k in items))
            for dim, _ in normalized:
                if dim not in DIMENSIONS:
                    raise ConfigurationError(f"unknown dimension {dim!r} in knots")
            object.__setattr__(self, "knots", normalized)

    @property
    def penalized(self) -> bool:
        return self.kind == "pss"

    def knot_count(self, dim: str, n_unique: int) -> int:
        if self.knots:
            for d, k in self.knots:
                if d == dim:
                    return k
        if self.dense_knots:
            return max(3, n_unique - 1)
        return default_knot_count(n_unique)

    @classmethod
    def from_config(cls, config: dict) -> tuple["ModelSpec", str]:
        """Build from the JSON model configuration; returns (spec, drop)."""
        spec = cls(
            kind=config.get("kind", "pss"),
            knots=config.get("knots"),
            dense_knots=bool(config.get("dense_knots", False)),
            augment_periodic=bool(config.get("augment_periodic", False)),
        )
        return spec, config.get("drop", "cohort")


class FactorEvaluator:
    """One-hot indicator rows keyed by the distinct covariate values."""

    def __init__(self, level_values: np.ndarray):
        self.level_values = np.asarray(level_values, dtype=float)

    def rows(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.searchsorted(self.level_values, x)
        idx = np.clip(idx, 0, self.level_values.size - 1)
        left = np.clip(idx - 1, 0, self.level_values.size - 1)
        use_left = np.abs(x - self.level_values[left]) < np.abs(
            x - self.level_values[idx]
        )
        idx = np.where(use_left, left, idx)
        tol = 1e-8 * max(1.0, float(np.max(np.abs(self.level_values))))
        if np.any(np.abs(x - self.level_values[idx]) > tol):
            raise ConfigurationError("value does not match any factor level")
        out = np.zeros((x.size, self.level_values.size))
        out[np.arange(x.size), idx] = 1.0
        return out


def factor_curvature_block(levels: int, covariate: np.ndarray) -> BasisBlock:
    """Factor curvature term: one-hot levels orthogonalized to [1 : x]."""
    if levels < 3:
        raise ConfigurationError(f"factor needs >= 3 levels, got {levels}")
    covariate = np.asarray(covariate, dtype=float)
    level_values = np.unique(covariate)
    if level_values.size != levels:
        raise ConfigurationError(
            f"covariate has {level_values.size} distinct values, expected {levels}"
        )
    ev = FactorEvaluator(level_values)
    block = BasisBlock(
        design=ev.rows(covariate),
        penalty=np.zeros((levels, levels)),
        knots=None,
        evaluator=ev,
    )
    return orthogonalize_to_linear(block, covariate)


class _CompositeEvaluator:
    """Column concatenation of already-transformed blocks."""

    def __init__(self, blocks):
        self.blocks = blocks

    def rows(self, x):
        return np.hstack([b.rows(x) for b in self.blocks])


def _concat_blocks(parts: list[BasisBlock]) -> BasisBlock:
    if len(parts) == 1:
        return parts[0]
    return BasisBlock(
        design=np.hstack([b.design for b in parts]),
        penalty=scipy.linalg.block_diag(*[b.penalty for b in parts]),
        knots=parts[0].knots,
        evaluator=_CompositeEvaluator(parts),
        transform=None,
        keep=None,
    )


@dataclass(frozen=True)
class ApcDesign:
    """Assembled model matrix with block bookkeeping.

    ``X`` is partitioned [intercept : slope1 : slope2 : age : period :
    cohort] with ``column_map`` mapping block names to column slices.
    ``blocks`` evaluates curvature terms at new covariate values, which is
    how the linear predictor is reconstructed over the full cube of
    age-period-cohort combinations.
    """

    X: np.ndarray
    grid: TemporalGrid
    spec: ModelSpec
    drop: str
    column_map: dict
    blocks: dict
    scales: dict
    slope_dims: tuple[str, str]
    dropped_columns: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def ncol(self) -> int:
        return self.X.shape[1]

    @property
    def penalized_blocks(self) -> tuple[str, ...]:
        """Dimensions whose curvature penalty is active during fitting."""
        if not self.spec.penalized:
            return ()
        return DIMENSIONS

    def penalties(self) -> list[tuple[str, np.ndarray]]:
        """Per-block penalty matrices, in block coordinates."""
        return [(dim, self.blocks[dim].penalty) for dim in self.penalized_blocks]

    def embedded_penalty(self, dim: str) -> np.ndarray:
        """Block penalty placed into the full coefficient space."""
        S = np.zeros((self.ncol, self.ncol))
        sl = self.column_map[dim]
        S[sl, sl] = self.blocks[dim].penalty
        return S

    def block_coefficients(self, beta: np.ndarray, dim: str) -> np.ndarray:
        return beta[self.column_map[dim]]


def _cell_covariate(grid: TemporalGrid, dim: str) -> np.ndarray:
    a, p, c = grid.cell_covariates()
    return {"age": a, "period": p, "cohort": c}[dim]


def _grid_midpoints(grid: TemporalGrid, dim: str) -> np.ndarray:
    return {
        "age": grid.age_midpoints,
        "period": grid.period_midpoints,
        "cohort": grid.cohort_midpoints,
    }[dim]


def _curvature_block(
    grid: TemporalGrid, dim: str, spec: ModelSpec, scale: CovariateScale
) -> BasisBlock:
    cov = _cell_covariate(grid, dim)
    distinct = np.unique(cov)
    if distinct.size < 3:
        raise ConfigurationError(f"{dim} has fewer than 3 distinct values")
    x_s = scale.scale(cov)

    if spec.kind == "fa":
        return factor_curvature_block(distinct.size, cov)

    count = spec.knot_count(dim, distinct.size)
    knots = default_knots(cov, count)
    parts = [orthogonalize_to_linear(crs_basis(cov, knots), x_s)]

    if spec.augment_periodic and dim in ("period", "cohort"):
        period = grid.M * grid.period_width
        if grid.M < 3:
            raise ConfigurationError("periodic augmentation needs M >= 3")
        cyc_knots = KnotSet(
            np.linspace(distinct[0], distinct[0] + period, grid.M + 1),
            kind="cyclic",
        )
        cyc = cyclic_crs_basis(cov, cyc_knots, period)
        parts.append(orthogonalize_to_linear(cyc, x_s))

    return _concat_blocks(parts)


def _rank_repair(X: np.ndarray, n_protected: int, tol: float = 1e-9):
    """Indices of a maximal independent column set, protecting the first
    ``n_protected`` columns and preferring earlier columns."""
    n, k = X.shape
    norms = np.linalg.norm(X, axis=0)
    Q = np.empty((n, 0))
    keep = []
    for j in range(k):
        v = X[:, j].copy()
        for _ in range(2):  # reorthogonalize for stability
            if Q.shape[1]:
                v -= Q @ (Q.T @ v)
        r = np.linalg.norm(v)
        if j >= n_protected and r <= tol * max(norms[j], 1e-300):
            continue
        if r == 0.0:
            if j < n_protected:
                raise ConfigurationError("parametric columns are dependent")
            continue
        Q = np.hstack([Q, (v / r)[:, None]])
        keep.append(j)
    return np.array(keep, dtype=int)


def build_design(
    grid: TemporalGrid, spec: ModelSpec, drop: str = "cohort"
) -> ApcDesign:
    """Assemble the estimable APC design for the given grid and model.

    ``drop`` names the temporal slope excluded from the parametric part
    ("cohort" gives the cross-sectional model, "period" the longitudinal
    one).  Curvature blocks are identical for every choice.
    """
    if drop not in DIMENSIONS:
        raise ConfigurationError(f"unknown slope to drop: {drop!r}")
    slope_dims = tuple(d for d in DIMENSIONS if d != drop)

    scales = {
        dim: CovariateScale.from_values(_grid_midpoints(grid, dim))
        for dim in DIMENSIONS
    }
    blocks = {dim: _curvature_block(grid, dim, spec, scales[dim]) for dim in DIMENSIONS}

    n = grid.n_cells
    columns = [np.ones((n, 1))]
    column_map = {"intercept": slice(0, 1)}
    pos = 1
    for dim in slope_dims:
        columns.append(scales[dim].scale(_cell_covariate(grid, dim))[:, None])
        column_map[f"slope_{dim}"] = slice(pos, pos + 1)
        pos += 1
    for dim in DIMENSIONS:
        b = blocks[dim]
        columns.append(b.design)
        column_map[dim] = slice(pos, pos + b.width)
        pos += b.width
    X = np.hstack(columns)

    keep = _rank_repair(X, n_protected=3)
    dropped: dict[str, int] = {}
    if keep.size < X.shape[1]:
        removed = np.setdiff1d(np.arange(X.shape[1]), keep)
        new_blocks = {}
        # rebuild blocks and the column map with survivors only
        pos = 3
        new_map = {
            "intercept": slice(0, 1),
            f"slope_{slope_dims[0]}": slice(1, 2),
            f"slope_{slope_dims[1]}": slice(2, 3),
        }
        for dim in DIMENSIONS:
            sl = column_map[dim]
            local_keep = keep[(keep >= sl.start) & (keep < sl.stop)] - sl.start
            lost = (sl.stop - sl.start) - local_keep.size
            if lost:
                dropped[dim] = lost
            new_blocks[dim] = blocks[dim].restrict(local_keep)
            new_map[dim] = slice(pos, pos + local_keep.size)
            pos += local_keep.size
        warnings.warn(
            f"dropped {removed.size} dependent design column(s): "
            + ", ".join(f"{d}={c}" for d, c in dropped.items()),
            DependentColumnsWarning,
            stacklevel=2,
        )
        X = X[:, keep]
        blocks = new_blocks
        column_map = new_map

    return ApcDesign(
        X=X,
        grid=grid,
        spec=spec,
        drop=drop,
        column_map=column_map,
        blocks=blocks,
        scales=scales,
        slope_dims=slope_dims,
        dropped_columns=dropped,
    )


def augment_with_periodic(design: ApcDesign, period: float) -> ApcDesign:
    """Rebuild the design with cyclic spline columns on period and cohort.

    ``period`` must equal M period widths, the spacing at which cohorts
    recur across periods.
    """
    if design.spec.kind == "fa":
        raise ConfigurationError("periodic augmentation applies to spline models")
    expected = design.grid.M * design.grid.period_width
    if abs(period - expected) > 1e-9 * max(expected, 1.0):
        raise ConfigurationError(
            f"period {period} != M * period_width = {expected}"
        )
    spec = ModelSpec(
        kind=design.spec.kind,
        knots=design.spec.knots,
        dense_knots=design.spec.dense_knots,
        augment_periodic=True,
    )
    return build_design(design.grid, spec, design.drop)
