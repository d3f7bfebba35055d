"""Daily forcing ingestion and train/validation/test period handling.

Forcing CSVs carry one row per day with the exact header
``date,prcp_mm,pet_mm,q_mm``.  Dates are ISO ``YYYY-MM-DD`` and must be
contiguous; missing discharge is an empty field or the sentinel ``-999``
and is stored as nan.  Basin attribute CSVs carry
``basin_id,h_soil_mm,region``.

Calibration periods are inclusive date ranges.  Year-pair shorthand like
``(1987, 2004)`` means 1987-01-01 through 2003-12-31, so consecutive
pairs sharing a boundary year do not overlap.  Each period is simulated
from a spin-up start a fixed number of years earlier; spin-up days and
missing-discharge days are never part of an evaluation mask.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DateGapError,
    ForcingFormatError,
    InvalidInputError,
    PeriodRangeError,
)

FORCING_HEADER = ("date", "prcp_mm", "pet_mm", "q_mm")
ATTRIBUTES_HEADER = ("basin_id", "h_soil_mm", "region")
MISSING_Q_SENTINEL = -999.0
DEFAULT_SPINUP_YEARS = 3


@dataclass(frozen=True)
class ForcingSeries:
    """Aligned daily series; ``q_obs`` is nan where discharge is missing."""

    dates: np.ndarray   # datetime64[D], contiguous
    p: np.ndarray       # precipitation [mm/day]
    pet: np.ndarray     # potential evapotranspiration [mm/day]
    q_obs: np.ndarray   # observed discharge [mm/day], nan = missing

    def __post_init__(self) -> None:
        n = len(self.dates)
        for name in ("p", "pet", "q_obs"):
            if len(getattr(self, name)) != n:
                raise InvalidInputError(f"{name} is not aligned with dates")

    def __len__(self) -> int:
        return len(self.dates)

    def window(self, start: int, stop: int) -> "ForcingSeries":
        """Contiguous sub-series over ``[start, stop)`` indices."""
        return ForcingSeries(
            dates=self.dates[start:stop],
            p=self.p[start:stop],
            pet=self.pet[start:stop],
            q_obs=self.q_obs[start:stop],
        )

    def index_of(self, day: dt.date) -> int:
        """Index of a calendar day; raises PeriodRangeError if absent."""
        d64 = np.datetime64(day, "D")
        first = self.dates[0]
        idx = int((d64 - first) / np.timedelta64(1, "D"))
        if idx < 0 or idx >= len(self):
            raise PeriodRangeError(f"{day} is outside the loaded series")
        return idx

    @classmethod
    def from_arrays(cls, start: dt.date, p, pet, q_obs=None) -> "ForcingSeries":
        """Convenience constructor from a start day and aligned arrays."""
        p = np.asarray(p, dtype=float)
        pet = np.asarray(pet, dtype=float)
        q = np.full_like(p, np.nan) if q_obs is None else np.asarray(q_obs, dtype=float)
        dates = np.datetime64(start, "D") + np.arange(len(p))
        return cls(dates=dates, p=p, pet=pet, q_obs=q)


def load_forcing(path) -> ForcingSeries:
    """Load and validate a forcing CSV.

    Raises ForcingFormatError (with the offending line number) for header
    mismatches, unparsable fields, or negative forcing values, and
    DateGapError when the date column is not contiguous daily.
    """
    dates: list[np.datetime64] = []
    p: list[float] = []
    pet: list[float] = []
    q: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ForcingFormatError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != FORCING_HEADER:
            raise ForcingFormatError(
                f"{path}:1: expected header {','.join(FORCING_HEADER)}, got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise ForcingFormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise ForcingFormatError(
                    f"{path}:{lineno}: bad date {row[0]!r} (want YYYY-MM-DD)"
                ) from None
            vals = []
            for name, cell in zip(("prcp_mm", "pet_mm"), row[1:3]):
                try:
                    v = float(cell)
                except ValueError:
                    raise ForcingFormatError(
                        f"{path}:{lineno}: bad {name} value {cell!r}"
                    ) from None
                if not np.isfinite(v) or v < 0.0:
                    raise ForcingFormatError(
                        f"{path}:{lineno}: {name} must be finite and non-negative, got {cell}"
                    )
                vals.append(v)
            qcell = row[3].strip()
            if qcell == "":
                qv = np.nan
            else:
                try:
                    qv = float(qcell)
                except ValueError:
                    raise ForcingFormatError(f"{path}:{lineno}: bad q_mm value {qcell!r}") from None
                if qv == MISSING_Q_SENTINEL:
                    qv = np.nan
                elif not np.isfinite(qv) or qv < 0.0:
                    raise ForcingFormatError(
                        f"{path}:{lineno}: q_mm must be non-negative, missing (-999) or empty"
                    )
            dates.append(np.datetime64(day, "D"))
            p.append(vals[0])
            pet.append(vals[1])
            q.append(qv)
    if not dates:
        raise ForcingFormatError(f"{path}: no data rows")
    darr = np.array(dates, dtype="datetime64[D]")
    gaps = np.flatnonzero(np.diff(darr) != np.timedelta64(1, "D"))
    if len(gaps):
        i = int(gaps[0])
        raise DateGapError(
            f"{path}: dates must be contiguous daily; gap after {darr[i]} (data row {i + 1})"
        )
    return ForcingSeries(
        dates=darr,
        p=np.array(p),
        pet=np.array(pet),
        q_obs=np.array(q),
    )


def write_forcing(path, series: ForcingSeries) -> None:
    """Write a forcing CSV in the canonical format (round-trips exactly)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FORCING_HEADER)
        for i in range(len(series)):
            qv = series.q_obs[i]
            writer.writerow([
                str(series.dates[i]),
                repr(float(series.p[i])),
                repr(float(series.pet[i])),
                "" if np.isnan(qv) else repr(float(qv)),
            ])


@dataclass(frozen=True)
class BasinAttributes:
    basin_id: str
    h_soil_mm: float
    region: str


def load_attributes(path) -> dict[str, BasinAttributes]:
    """Load a basin attribute CSV keyed by basin id."""
    out: dict[str, BasinAttributes] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ForcingFormatError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != ATTRIBUTES_HEADER:
            raise ForcingFormatError(
                f"{path}:1: expected header {','.join(ATTRIBUTES_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise ForcingFormatError(f"{path}:{lineno}: expected 3 fields")
            basin_id = row[0].strip()
            try:
                h_soil = float(row[1])
            except ValueError:
                raise ForcingFormatError(f"{path}:{lineno}: bad h_soil_mm {row[1]!r}") from None
            if not np.isfinite(h_soil) or h_soil <= 0.0:
                raise ForcingFormatError(f"{path}:{lineno}: h_soil_mm must be positive")
            if basin_id in out:
                raise ForcingFormatError(f"{path}:{lineno}: duplicate basin id {basin_id!r}")
            out[basin_id] = BasinAttributes(basin_id, h_soil, row[2].strip())
    if not out:
        raise ForcingFormatError(f"{path}: no basins")
    return out


def _years_before(day: dt.date, years: int) -> dt.date:
    try:
        return day.replace(year=day.year - years)
    except ValueError:
        # Feb 29 with no leap-year counterpart.
        return day.replace(year=day.year - years, day=28)


@dataclass(frozen=True)
class PeriodSpec:
    """Inclusive evaluation date ranges plus the spin-up length."""

    train: tuple[dt.date, dt.date]
    val: tuple[dt.date, dt.date]
    test: tuple[dt.date, dt.date]
    spinup_years: int = DEFAULT_SPINUP_YEARS

    def __post_init__(self) -> None:
        ranges = {"train": self.train, "val": self.val, "test": self.test}
        for name, (a, b) in ranges.items():
            if a > b:
                raise InvalidInputError(f"{name} period start {a} is after end {b}")
        if self.spinup_years < 0:
            raise InvalidInputError("spinup_years must be non-negative")
        items = list(ranges.items())
        for i, (name_a, ra) in enumerate(items):
            for name_b, rb in items[i + 1:]:
                if ra[0] <= rb[1] and rb[0] <= ra[1]:
                    raise InvalidInputError(
                        f"{name_a} and {name_b} evaluation periods overlap"
                    )

    @classmethod
    def from_year_pairs(
        cls,
        train: tuple[int, int] = (1987, 2004),
        val: tuple[int, int] = (1980, 1987),
        test: tuple[int, int] = (2004, 2014),
        spinup_years: int = DEFAULT_SPINUP_YEARS,
    ) -> "PeriodSpec":
        """Year-pair shorthand: (a, b) means Jan 1 of a through Dec 31 of b-1."""
        def rng(pair: tuple[int, int]) -> tuple[dt.date, dt.date]:
            a, b = pair
            if b <= a:
                raise InvalidInputError(f"year pair {pair} must be increasing")
            return dt.date(a, 1, 1), dt.date(b - 1, 12, 31)

        return cls(train=rng(train), val=rng(val), test=rng(test),
                   spinup_years=spinup_years)


DEFAULT_PERIODS = PeriodSpec.from_year_pairs()


@dataclass(frozen=True)
class PeriodWindow:
    """Index bookkeeping for one period within a loaded series."""

    sim_start: int           # index where the spin-up simulation begins
    eval_start: int          # first evaluated index
    eval_stop: int           # one past the last evaluated index
    eval_mask: np.ndarray    # full-length mask: period days with observed q
    spinup_mask: np.ndarray  # full-length mask of spin-up days
    spinup_clipped: bool     # true when data begin after the nominal spin-up start

    @property
    def window(self) -> slice:
        """Slice covering spin-up plus evaluation, for simulation."""
        return slice(self.sim_start, self.eval_stop)


@dataclass(frozen=True)
class PeriodWindows:
    train: PeriodWindow
    val: PeriodWindow
    test: PeriodWindow

    def __getitem__(self, name: str) -> PeriodWindow:
        if name not in ("train", "val", "test"):
            raise KeyError(name)
        return getattr(self, name)


def split_periods(series: ForcingSeries, spec: PeriodSpec = DEFAULT_PERIODS) -> PeriodWindows:
    """Resolve a PeriodSpec against a loaded series.

    Every evaluation range must be fully covered by the data; spin-up
    ranges may be clipped at the start of the data (flagged).  Evaluation
    masks exclude missing-discharge days by construction.
    """
    windows = {}
    for name in ("train", "val", "test"):
        start, end = getattr(spec, name)
        i0 = series.index_of(start)
        i1 = series.index_of(end)
        nominal = _years_before(start, spec.spinup_years)
        first_day = series.dates[0].astype(dt.date)
        clipped = nominal < first_day
        sim_start = 0 if clipped else series.index_of(nominal)
        eval_mask = np.zeros(len(series), dtype=bool)
        eval_mask[i0:i1 + 1] = np.isfinite(series.q_obs[i0:i1 + 1])
        spinup_mask = np.zeros(len(series), dtype=bool)
        spinup_mask[sim_start:i0] = True
        windows[name] = PeriodWindow(
            sim_start=sim_start,
            eval_start=i0,
            eval_stop=i1 + 1,
            eval_mask=eval_mask,
            spinup_mask=spinup_mask,
            spinup_clipped=bool(clipped),
        )
    return PeriodWindows(**windows)
