"""Rate-table ingestion: normalized CSV, subsetting, aggregation.

The input contract is a UTF-8 CSV with header

    age_start, age_width, period_start, period_width, population, deaths

one row per age-period cell.  Widths must be constant within each
dimension and cells must not repeat.  Tables can be subset on boundaries,
aggregated by integer factors (1x1 -> 5x1 -> 5x5 and so on), rounded to
integer counts, and turned into model-ready datasets with the events as
a binomial response on the population.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GeometryError, RateTableParseError
from .glm import Family
from .grid import TemporalGrid, build_grid

CSV_COLUMNS = (
    "age_start",
    "age_width",
    "period_start",
    "period_width",
    "population",
    "deaths",
)


@dataclass
class RateTable:
    """Exposure (population) and event (deaths) counts per grid cell."""

    age_start: np.ndarray
    age_width: np.ndarray
    period_start: np.ndarray
    period_width: np.ndarray
    exposure: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, f), dtype=float) for f in CSV_COLUMNS[:4]]
        arrays.append(np.asarray(self.exposure, dtype=float))
        arrays.append(np.asarray(self.events, dtype=float))
        n = arrays[0].size
        if any(a.size != n for a in arrays):
            raise GeometryError("rate table columns differ in length")
        order = np.lexsort((arrays[2], arrays[0]))
        for name, arr in zip(
            ("age_start", "age_width", "period_start", "period_width", "exposure", "events"),
            arrays,
        ):
            setattr(self, name, arr[order])
        self._validate()

    def _validate(self):
        if self.n_rows == 0:
            return
        for name, w in (("age", self.age_width), ("period", self.period_width)):
            if np.any(w <= 0):
                raise GeometryError(f"{name} widths must be positive")
            if np.ptp(w) > 1e-9 * w[0]:
                raise GeometryError(f"{name} widths are not constant")
        if np.any(self.exposure < 0) or np.any(self.events < 0):
            raise GeometryError("counts must be non-negative")
        cells = np.column_stack([self.age_start, self.period_start])
        if np.unique(cells, axis=0).shape[0] != self.n_rows:
            raise GeometryError("duplicate (age, period) cells")

    @property
    def n_rows(self) -> int:
        return self.age_start.size

    def rows(self):
        return zip(
            self.age_start,
            self.age_width,
            self.period_start,
            self.period_width,
            self.exposure,
            self.events,
        )


def parse_rate_csv(path) -> RateTable:
    """Read and validate a normalized rate CSV.

    Errors carry the 1-based row number of the offending line.
    Non-integer counts are accepted (upstream sources interpolate).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RateTableParseError("empty file") from None
        header = [h.strip().lower() for h in header]
        if header != list(CSV_COLUMNS):
            raise RateTableParseError(
                f"expected header {','.join(CSV_COLUMNS)}, got {','.join(header)}",
                row=1,
            )
        data = {c: [] for c in CSV_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(CSV_COLUMNS):
                raise RateTableParseError(
                    f"expected {len(CSV_COLUMNS)} fields, got {len(row)}", row=lineno
                )
            try:
                values = [float(f) for f in row]
            except ValueError as exc:
                raise RateTableParseError(str(exc), row=lineno) from None
            record = dict(zip(CSV_COLUMNS, values))
            if record["population"] < 0 or record["deaths"] < 0:
                raise RateTableParseError("negative count", row=lineno)
            if record["deaths"] > record["population"]:
                raise RateTableParseError("deaths exceed population", row=lineno)
            if record["age_width"] <= 0 or record["period_width"] <= 0:
                raise RateTableParseError("widths must be positive", row=lineno)
            for c in CSV_COLUMNS:
                data[c].append(record[c])
    try:
        return RateTable(
            age_start=np.array(data["age_start"]),
            age_width=np.array(data["age_width"]),
            period_start=np.array(data["period_start"]),
            period_width=np.array(data["period_width"]),
            exposure=np.array(data["population"]),
            events=np.array(data["deaths"]),
        )
    except GeometryError as exc:
        raise RateTableParseError(str(exc)) from None


def write_rate_csv(table: RateTable, path):
    """Serialize in canonical (age, period) order; round-trips exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in table.rows():
            writer.writerow([repr(float(v)) for v in row])


def subset(table: RateTable, age_range=None, period_range=None) -> RateTable:
    """Keep cells fully inside the given [lo, hi) ranges.

    Ranges must align with cell boundaries: a cell straddling a range
    endpoint is a misalignment error.  An empty intersection is fine.
    """

    def mask_for(starts, widths, rng, name):
        if rng is None:
            return np.ones(starts.size, dtype=bool)
        lo, hi = float(rng[0]), float(rng[1])
        ends = starts + widths
        tol = 1e-9 * max(1.0, abs(hi), abs(lo))
        inside = (starts >= lo - tol) & (ends <= hi + tol)
        straddle = ((starts < lo - tol) & (ends > lo + tol)) | (
            (starts < hi - tol) & (ends > hi + tol)
        )
        if np.any(straddle):
            raise DomainError(f"{name} range {rng} does not align with cell boundaries")
        return inside

    keep = mask_for(table.age_start, table.age_width, age_range, "age") & mask_for(
        table.period_start, table.period_width, period_range, "period"
    )
    return RateTable(
        age_start=table.age_start[keep],
        age_width=table.age_width[keep],
        period_start=table.period_start[keep],
        period_width=table.period_width[keep],
        exposure=table.exposure[keep],
        events=table.events[keep],
    )


def _complete_grid_indices(table: RateTable):
    """Map rows onto a complete (age x period) lattice or fail."""
    ages = np.unique(table.age_start)
    periods = np.unique(table.period_start)
    if ages.size * periods.size != table.n_rows:
        raise GeometryError(
            f"table is not a complete grid: {ages.size} ages x {periods.size} "
            f"periods != {table.n_rows} rows"
        )
    ai = np.searchsorted(ages, table.age_start)
    pi = np.searchsorted(periods, table.period_start)
    return ages, periods, ai, pi


def aggregate_table(
    table: RateTable, age_factor: int = 1, period_factor: int = 1
) -> RateTable:
    """Sum exposure and events over blocks of consecutive groups."""
    if age_factor < 1 or period_factor < 1:
        raise DomainError("aggregation factors must be >= 1")
    ages, periods, ai, pi = _complete_grid_indices(table)
    if ages.size % age_factor:
        raise DomainError(f"age factor {age_factor} does not divide {ages.size} groups")
    if periods.size % period_factor:
        raise DomainError(
            f"period factor {period_factor} does not divide {periods.size} groups"
        )
    A2, P2 = ages.size // age_factor, periods.size // period_factor
    block = (ai // age_factor) * P2 + (pi // period_factor)
    exposure = np.bincount(block, weights=table.exposure, minlength=A2 * P2)
    events = np.bincount(block, weights=table.events, minlength=A2 * P2)
    aw = table.age_width[0] * age_factor
    pw = table.period_width[0] * period_factor
    a_idx, p_idx = np.divmod(np.arange(A2 * P2), P2)
    return RateTable(
        age_start=ages[a_idx * age_factor],
        age_width=np.full(A2 * P2, aw),
        period_start=periods[p_idx * period_factor],
        period_width=np.full(A2 * P2, pw),
        exposure=exposure,
        events=events,
    )


def round_counts(table: RateTable) -> RateTable:
    """Round counts half away from zero; clamp events to exposure."""

    def away(v):
        return np.sign(v) * np.floor(np.abs(v) + 0.5)

    exposure = away(table.exposure)
    events = np.minimum(away(table.events), exposure)
    return RateTable(
        age_start=table.age_start,
        age_width=table.age_width,
        period_start=table.period_start,
        period_width=table.period_width,
        exposure=exposure,
        events=events,
    )


@dataclass
class ApcDataset:
    """Grid plus responses in the design's age-major cell order.

    Gaussian responses are cell means with cell weights, which is
    sufficient for fitting and exactly equivalent to the individual
    observations they summarize.
    """

    grid: TemporalGrid
    family_kind: str
    y: np.ndarray
    trials: np.ndarray | None = None
    exposure: np.ndarray | None = None
    weights: np.ndarray | None = None

    def family(self) -> Family:
        return Family(
            kind=self.family_kind,
            trials=self.trials,
            exposure=self.exposure,
            weights=self.weights,
        )


def _check_contiguous(starts: np.ndarray, width: float, name: str):
    if starts.size > 1 and not np.allclose(np.diff(starts), width, rtol=1e-9):
        raise GeometryError(f"{name} groups are not contiguous blocks of width {width}")


def to_model_dataset(table: RateTable, family_kind: str = "binomial") -> ApcDataset:
    """Build the temporal grid from the table geometry and attach counts.

    The age width must be an integer multiple M of the period width;
    events become the response with the exposure as binomial trials (or a
    Poisson offset when ``family_kind`` is "poisson").
    """
    if table.n_rows == 0:
        raise GeometryError("empty rate table")
    ages, periods, ai, pi = _complete_grid_indices(table)
    aw, pw = float(table.age_width[0]), float(table.period_width[0])
    ratio = aw / pw
    M = int(round(ratio))
    if abs(ratio - M) > 1e-9 or M < 1:
        raise GeometryError(f"age width {aw} is not an integer multiple of {pw}")
    _check_contiguous(ages, aw, "age")
    _check_contiguous(periods, pw, "period")
    grid = build_grid(
        ages.size,
        periods.size,
        M,
        age_start=float(ages[0]),
        age_width=aw,
        period_start=float(periods[0]),
        period_width=pw,
    )
    order = np.argsort(ai * periods.size + pi, kind="stable")
    y = table.events[order]
    exposure = table.exposure[order]
    if family_kind == "binomial":
        return ApcDataset(grid=grid, family_kind="binomial", y=y, trials=exposure)
    if family_kind == "poisson":
        return ApcDataset(grid=grid, family_kind="poisson", y=y, exposure=exposure)
    raise GeometryError(f"unsupported family {family_kind!r} for rate tables")
