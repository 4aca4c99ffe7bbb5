import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apcsmooth.errors import ConfigurationError, DomainError
from apcsmooth.grid import build_grid, cohort_index


@pytest.mark.parametrize(
    "a, p, A, M, expected",
    [
        (8, 1, 8, 1, 1),
        (1, 8, 8, 1, 15),
        (8, 6, 8, 5, 6),
        (1, 1, 8, 5, 36),
        (1, 10, 8, 5, 45),
    ],
)
def test_cohort_index_values(a, p, A, M, expected):
    assert cohort_index(a, p, A, M) == expected


def test_cohort_index_rejects_out_of_range():
    with pytest.raises(DomainError):
        cohort_index(0, 1, 8, 1)
    with pytest.raises(DomainError):
        cohort_index(9, 1, 8, 1)
    with pytest.raises(DomainError):
        cohort_index(1, 0, 8, 1)
    with pytest.raises(DomainError):
        cohort_index(1, 1, 8, 0)


def test_equal_interval_cohort_table():
    # 8x8, M=1: the anti-diagonal layout, top-left cell is cohort 1.  One
    # published rendition of this table misprints a single cell; the index
    # formula is authoritative.
    A = P = 8
    table = {(a, p): cohort_index(a, p, A, 1) for a in range(1, 9) for p in range(1, 9)}
    assert table[(8, 1)] == 1
    assert table[(1, 8)] == 15
    for a in range(1, 9):
        for p in range(1, 9):
            assert table[(a, p)] == (A - a) + p


def test_unequal_interval_cohort_table():
    # 8 age groups x 10 periods, M=5: cohorts recur every 5th period
    A, P, M = 8, 10, 5
    for a in range(1, A + 1):
        row = [cohort_index(a, p, A, M) for p in range(1, P + 1)]
        assert row == list(range(M * (A - a) + 1, M * (A - a) + P + 1))
    first_col = [cohort_index(a, 1, A, M) for a in range(A, 0, -1)]
    assert first_col == [1, 6, 11, 16, 21, 26, 31, 36]


def test_cohort_recurrence_every_m_periods():
    A, P, M = 8, 10, 5
    g = build_grid(A, P, M)
    ai, pi, ci = g.cell_indices()
    for c in range(1, g.C + 1):
        periods = np.sort(pi[ci == c])
        if periods.size > 1:
            assert np.all(np.diff(periods) == M)


@pytest.mark.parametrize(
    "A, P, M, C",
    [(8, 8, 1, 15), (8, 10, 5, 45), (12, 20, 5, 75), (60, 20, 1, 79)],
)
def test_grid_cohort_counts(A, P, M, C):
    assert build_grid(A, P, M).C == C


def test_grid_midpoints():
    g = build_grid(60, 20, 1)
    assert g.age_midpoints[0] == 0.5
    assert g.age_midpoints[-1] == 59.5
    assert g.period_midpoints[-1] == 19.5
    assert g.cohort_midpoints[0] == -59.0
    assert g.cohort_midpoints[-1] == 19.0


def test_cell_cohort_midpoint_is_period_minus_age():
    for A, P, M in [(8, 8, 1), (8, 10, 5), (12, 20, 5)]:
        g = build_grid(A, P, M)
        am, pm, cm = g.cell_covariates()
        np.testing.assert_allclose(cm, pm - am, atol=1e-12)


def test_grid_rejects_width_mismatch():
    with pytest.raises(ConfigurationError):
        build_grid(8, 10, 5, age_width=4.0, period_width=1.0)


def test_grid_rejects_nonpositive():
    with pytest.raises(ConfigurationError):
        build_grid(0, 10, 5)
    with pytest.raises(ConfigurationError):
        build_grid(8, 10, 5, period_width=-1.0)


@settings(max_examples=50, deadline=None)
@given(
    A=st.integers(1, 20),
    P=st.integers(1, 20),
    M=st.integers(1, 6),
)
def test_grid_properties(A, P, M):
    g = build_grid(A, P, M)
    assert g.C == M * (A - 1) + P
    ai, pi, ci = g.cell_indices()
    assert ci.min() >= 1 and ci.max() <= g.C
    # cells with equal index share exactly one cohort midpoint
    am, pm, cm = g.cell_covariates()
    for c in np.unique(ci):
        values = np.unique(cm[ci == c])
        assert values.size == 1
    for mids in (g.age_midpoints, g.period_midpoints, g.cohort_midpoints):
        if mids.size > 1:
            assert np.all(np.diff(mids) > 0)
