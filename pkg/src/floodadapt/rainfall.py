"""Stationary per-period rainfall distributions and annual event sampling.

Each climate period (e.g. 2011-2040) carries an empirical quantile table:
ordered (cumulative probability, rainfall depth) points. Sampling inverts
the table piecewise-linearly, so the supplied points fully determine the
distribution — no parametric family is assumed. The table is interpreted
as the distribution of the single heavy event drawn once per simulated
year (daily accumulated depth, uniform in space).

Sampling is keyed by (seed, year): the uniform draw for a given year is
independent of call order, so competing policies face identical weather
(common random numbers).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class RainfallCdf:
    """Quantile table for one climate period.

    probabilities must start at 0.0, end at 1.0 and be strictly
    increasing; rainfall_mm must be non-decreasing and non-negative.
    """

    period_start: int
    period_end: int
    probabilities: tuple[float, ...]
    rainfall_mm: tuple[float, ...]

    def __post_init__(self):
        if self.period_start > self.period_end:
            raise ValueError(
                f"period_start {self.period_start} > period_end {self.period_end}"
            )
        p = self.probabilities
        r = self.rainfall_mm
        if len(p) != len(r) or len(p) < 2:
            raise ValueError("need >= 2 quantile points with matching lengths")
        if p[0] != 0.0 or p[-1] != 1.0:
            raise ValueError("cumulative probabilities must span 0.0 .. 1.0")
        for a, b in zip(p, p[1:]):
            if not b > a:
                raise ValueError(f"probabilities not strictly increasing at {b}")
        for a, b in zip(r, r[1:]):
            if b < a:
                raise ValueError(f"rainfall_mm decreases at {b}")
        if r[0] < 0:
            raise ValueError("rainfall_mm must be non-negative")

    def inverse(self, u: float) -> float:
        """Piecewise-linear inverse CDF: probability u -> rainfall depth (mm)."""
        if not 0.0 <= u <= 1.0:
            raise ValueError(f"probability {u} outside [0, 1]")
        return float(np.interp(u, self.probabilities, self.rainfall_mm))

    @property
    def min_mm(self) -> float:
        return self.rainfall_mm[0]

    @property
    def max_mm(self) -> float:
        return self.rainfall_mm[-1]


@dataclass(frozen=True)
class RainEvent:
    """One sampled heavy rainfall event."""

    year: int
    rainfall_mm: float


@dataclass(frozen=True)
class ClimateScenario:
    """Contiguous sequence of RainfallCdf periods with no gaps or overlaps."""

    cdfs: tuple[RainfallCdf, ...]

    def __post_init__(self):
        if not self.cdfs:
            raise ValueError("scenario needs at least one period")
        cdfs = tuple(sorted(self.cdfs, key=lambda c: c.period_start))
        object.__setattr__(self, "cdfs", cdfs)
        for prev, nxt in zip(cdfs, cdfs[1:]):
            if nxt.period_start > prev.period_end + 1:
                raise ValueError(f"year gap at {prev.period_end + 1}")
            if nxt.period_start <= prev.period_end:
                raise ValueError(f"year overlap at {nxt.period_start}")

    @property
    def start_year(self) -> int:
        return self.cdfs[0].period_start

    @property
    def end_year(self) -> int:
        return self.cdfs[-1].period_end

    def period_index(self, year: int) -> int:
        for i, cdf in enumerate(self.cdfs):
            if cdf.period_start <= year <= cdf.period_end:
                return i
        raise ValueError(
            f"year {year} outside scenario span {self.start_year}-{self.end_year}"
        )

    def cdf_for_year(self, year: int) -> RainfallCdf:
        """Return the unique quantile table governing `year`."""
        return self.cdfs[self.period_index(year)]


def cdf_for_year(scenario: ClimateScenario, year: int) -> RainfallCdf:
    return scenario.cdf_for_year(year)


def inverse_cdf(cdf: RainfallCdf, u: float) -> float:
    return cdf.inverse(u)


def sample_annual_event(scenario: ClimateScenario, year: int, seed) -> RainEvent:
    """Draw the year's heavy event, deterministically from (seed, year).

    The uniform variate comes from a PCG64 stream seeded with the entropy
    sequence (*seed, year); seed may be an int or a tuple of ints. Same
    (seed, year) always yields the same event regardless of call order.
    """
    cdf = scenario.cdf_for_year(year)
    key = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    u = np.random.default_rng(key + [year]).random()
    return RainEvent(year=year, rainfall_mm=cdf.inverse(u))


RAINFALL_CSV_HEADER = ["period_start", "period_end", "cum_probability", "rainfall_mm"]


def load_quantile_tables(path: str) -> ClimateScenario:
    """Read a rainfall quantile CSV into a validated ClimateScenario.

    Schema: header `period_start,period_end,cum_probability,rainfall_mm`,
    one row per quantile point, rows of one period contiguous and sorted.
    Errors carry the offending line number.
    """
    groups: list[tuple[int, int, list[float], list[float], int]] = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(str(exc), path=path) from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != RAINFALL_CSV_HEADER:
            raise InputError(
                f"expected header {','.join(RAINFALL_CSV_HEADER)}", path=path, line=1
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise InputError(f"expected 4 fields, got {len(row)}", path, lineno)
            try:
                start, end = int(row[0]), int(row[1])
                prob, mm = float(row[2]), float(row[3])
            except ValueError as exc:
                raise InputError(f"malformed row: {exc}", path, lineno) from exc
            if not 0.0 <= prob <= 1.0:
                raise InputError(f"probability {prob} outside [0, 1]", path, lineno)
            if mm < 0:
                raise InputError(f"negative rainfall {mm}", path, lineno)
            if groups and groups[-1][0] == start and groups[-1][1] == end:
                groups[-1][2].append(prob)
                groups[-1][3].append(mm)
            else:
                groups.append((start, end, [prob], [mm], lineno))

    if not groups:
        raise InputError("no quantile rows found", path=path)
    cdfs = []
    for start, end, probs, mms, lineno in groups:
        try:
            cdfs.append(
                RainfallCdf(start, end, tuple(probs), tuple(mms))
            )
        except ValueError as exc:
            raise InputError(f"period {start}-{end}: {exc}", path, lineno) from exc
    try:
        return ClimateScenario(tuple(cdfs))
    except ValueError as exc:
        raise InputError(str(exc), path=path) from exc
