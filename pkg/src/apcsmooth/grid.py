"""Age-period-cohort index geometry.

An A x P table of age groups and period groups determines C = M*(A-1)+P
birth cohorts, where M is the ratio of the age interval width to the
period interval width.  Cohorts are indexed so that the oldest age group
in the first period is cohort 1; the cohort of cell (a, p) is
c = M*(A-a)+p.  Model covariates are interval midpoints in natural units
(e.g. years), not integer indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError


def cohort_index(a: int, p: int, A: int, M: int) -> int:
    """Cohort index of the cell in age group ``a`` and period group ``p``.

    Indices are 1-based.  The oldest age group in the first period is
    cohort 1 and the youngest age group in the last period is cohort
    ``M*(A-1)+P``.
    """
    if not (1 <= a <= A):
        raise DomainError(f"age index {a} outside [1, {A}]")
    if p < 1:
        raise DomainError(f"period index {p} must be >= 1")
    if M < 1:
        raise DomainError(f"interval ratio M={M} must be >= 1")
    return M * (A - a) + p


@dataclass(frozen=True)
class CellIndex:
    """1-based (age, period, cohort) indices of one table cell."""

    a: int
    p: int
    c: int


@dataclass(frozen=True)
class TemporalGrid:
    """Index geometry of an A x P age-period table with interval ratio M.

    Midpoint vectors are strictly increasing and live on the natural time
    scale, so a cohort midpoint is the period midpoint minus the age
    midpoint of any cell in that cohort.
    """

    A: int
    P: int
    M: int
    C: int
    age_midpoints: np.ndarray
    period_midpoints: np.ndarray
    cohort_midpoints: np.ndarray
    age_start: float
    age_width: float
    period_start: float
    period_width: float
    _cells: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False, default=None)

    @property
    def n_cells(self) -> int:
        return self.A * self.P

    def cell_indices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """1-based (a, p, c) index arrays over all cells, age-major order."""
        return self._cells

    def cell_covariates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Midpoint (age, period, cohort) covariate vectors over all cells."""
        ai, pi, ci = self._cells
        return (
            self.age_midpoints[ai - 1],
            self.period_midpoints[pi - 1],
            self.cohort_midpoints[ci - 1],
        )

    def cells(self):
        """Iterate over all cells as :class:`CellIndex`, age-major order."""
        ai, pi, ci = self._cells
        for a, p, c in zip(ai, pi, ci):
            yield CellIndex(int(a), int(p), int(c))


def build_grid(
    A: int,
    P: int,
    M: int,
    age_start: float = 0.0,
    age_width: float | None = None,
    period_start: float = 0.0,
    period_width: float = 1.0,
) -> TemporalGrid:
    """Construct the grid of interval midpoints for an A x P table.

    ``age_width`` must equal ``M * period_width``; it defaults to that
    product.  Cohort midpoints are spaced one period width apart and
    satisfy ``cohort = period midpoint - age midpoint`` for every cell.
    """
    if A < 1 or P < 1 or M < 1:
        raise ConfigurationError(f"A={A}, P={P}, M={M} must all be >= 1")
    if period_width <= 0:
        raise ConfigurationError("period_width must be positive")
    if age_width is None:
        age_width = M * period_width
    if age_width <= 0:
        raise ConfigurationError("age_width must be positive")
    if abs(age_width - M * period_width) > 1e-9 * age_width:
        raise ConfigurationError(
            f"age_width {age_width} != M * period_width = {M * period_width}"
        )

    C = M * (A - 1) + P
    age_mid = age_start + age_width * (np.arange(1, A + 1) - 0.5)
    period_mid = period_start + period_width * (np.arange(1, P + 1) - 0.5)
    # Cell (a, p) has cohort value period_mid[p] - age_mid[a]; expressed in
    # the cohort index k = M*(A-a)+p this is an affine function of k with
    # step equal to one period width.
    k = np.arange(1, C + 1)
    cohort_mid = (
        (period_start - age_start)
        + period_width * (k - M * A)
        + period_width * (M - 1) / 2.0
    )

    ai = np.repeat(np.arange(1, A + 1), P)
    pi = np.tile(np.arange(1, P + 1), A)
    ci = M * (A - ai) + pi

    for arr in (age_mid, period_mid, cohort_mid):
        arr.flags.writeable = False
    for arr in (ai, pi, ci):
        arr.flags.writeable = False

    return TemporalGrid(
        A=A,
        P=P,
        M=M,
        C=C,
        age_midpoints=age_mid,
        period_midpoints=period_mid,
        cohort_midpoints=cohort_mid,
        age_start=float(age_start),
        age_width=float(age_width),
        period_start=float(period_start),
        period_width=float(period_width),
        _cells=(ai, pi, ci),
    )
