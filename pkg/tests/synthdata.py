"""Synthetic all-cause-mortality-style rate table for pipeline tests.

Known smooth age/period/cohort shapes on single-year ages 0-99 and
periods 1926-2015, binomial deaths out of realistic populations.  The
generating functions are smooth so that penalized fits at different
aggregations should recover essentially the same curvature curves.
"""

import numpy as np
from scipy.special import expit

from apcsmooth.data_io import RateTable

AGES = np.arange(100)
YEARS = np.arange(1926, 2016)


def true_logit_rate(age, year):
    age = np.asarray(age, dtype=float)
    year = np.asarray(year, dtype=float)
    cohort = year - age
    f_age = -6.2 + 0.055 * age + 2.4 * np.exp(-age / 1.8) - 8e-4 * (age - 60) ** 2 / 10
    f_period = -0.012 * (year - 1970) + 0.22 * np.sin(2 * np.pi * (year - 1926) / 45.0)
    f_cohort = -0.35 * np.arctan((cohort - 1880.0) / 30.0)
    return f_age + f_period + f_cohort


def synthetic_table(seed: int = 0) -> RateTable:
    """Single-year (1x1) table with binomial deaths."""
    rng = np.random.default_rng(np.random.Philox(key=seed))
    a, y = np.meshgrid(AGES, YEARS, indexing="ij")
    a, y = a.ravel(), y.ravel()
    pop = np.round(
        420000.0 * np.exp(-(((a - 30.0) / 55.0) ** 2)) + 60000.0 + 300.0 * (y - 1926)
    )
    pi = expit(true_logit_rate(a + 0.5, y + 0.5))
    deaths = rng.binomial(pop.astype(np.int64), pi).astype(float)
    return RateTable(
        age_start=a.astype(float),
        age_width=np.ones(a.size),
        period_start=y.astype(float),
        period_width=np.ones(a.size),
        exposure=pop,
        events=deaths,
    )
