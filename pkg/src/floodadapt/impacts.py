"""Monetized flood impacts on road infrastructure and mobility.

Direct damage: each road segment carries a construction cost (per road
type and lane count, with a lighting surcharge); the water depth at its
cells maps through a depth-damage curve to a damage fraction, and the
per-zone sum of fraction x cost is the zone's damage R_i. The damage
covers reconstruction, repair, cleaning and resurfacing as one monetized
fraction; roads are restored before the next event.

Indirect damage: depths reduce vehicle speeds through a depth-disruption
curve, increasing travel times; extra trip-minutes are priced at the value
of time and aggregated per origin zone as the delay loss D_i. Trips whose
destination becomes unreachable are stranded and charged a flat cost each.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import InputError
from .floodgrid import DepthField, depth_at_cells

if TYPE_CHECKING:  # avoid a circular import; only used in annotations
    from .transport import RoutingResult


@dataclass(frozen=True)
class RoadSegment:
    """A costed, cell-referenced piece of road, assigned to a TAZ."""

    id: str
    taz_id: str
    edge: tuple[str, str] | None
    length_m: float
    road_type: str
    lanes: int
    lit: bool
    cells: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.length_m <= 0:
            raise ValueError(f"segment {self.id}: length must be positive")
        if self.lanes < 1:
            raise ValueError(f"segment {self.id}: lanes must be >= 1")
        if not self.cells:
            raise ValueError(f"segment {self.id}: needs at least one DEM cell")


@dataclass(frozen=True)
class CostTable:
    """Construction costi per (road_type, lanes) plus lighting surcharge."""

    cost_per_km: dict[tuple[str, int], float]
    lighting_per_km: dict[tuple[str, int], float]

    def lookup(self, road_type: str, lanes: int) -> tuple[float, float]:
        key = (road_type, lanes)
        if key not in self.cost_per_km:
            raise KeyError(f"no cost entry for road_type={road_type!r} lanes={lanes}")
        return self.cost_per_km[key], self.lighting_per_km.get(key, 0.0)


@dataclass(frozen=True)
class DamageCurve:
    """Depth (m) to damage-fraction mapping for one road type."""

    road_type: str
    depths_m: tuple[float, ...]
    fractions: tuple[float, ...]

    def __post_init__(self):
        d, f = self.depths_m, self.fractions
        if len(d) != len(f) or len(d) < 1:
            raise ValueError("curve needs matching depth/fraction points")
        if d[0] != 0.0 or f[0] != 0.0:
            raise ValueError("curve must anchor at (0, 0)")
        for a, b in zip(d, d[1:]):
            if not b > a:
                raise ValueError("curve depths must be strictly increasing")
        for a, b in zip(f, f[1:]):
            if b < a:
                raise ValueError("curve fractions must be non-decreasing")
        if f[-1] > 1.0 or min(f) < 0.0:
            raise ValueError("curve fractions must stay within [0, 1]")


@dataclass
class LedgerRow:
    """Impacts of one (year, zone): damage, delay, action cost, context."""

    year: int
    taz_id: str
    rainfall_mm: float
    damage: float  # R_i
    delay: float  # D_i
    action_cost: float  # A_i
    stranded_trips: float = 0.0


@dataclass
class ImpactLedger:
    """Per-year, per-TAZ record of an episode's monetized impacts."""

    rows: list[LedgerRow]

    def years(self) -> list[int]:
        return sorted({r.year for r in self.rows})

    def totals_for_year(self, year: int) -> tuple[float, float, float]:
        damage = delay = action = 0.0
        for r in self.rows:
            if r.year == year:
                damage += r.damage
                delay += r.delay
                action += r.action_cost
        return damage, delay, action

    def loss_for_year(self, year: int, beta_r: float, beta_d: float, beta_a: float) -> float:
        loss = 0.0
        for r in self.rows:
            if r.year == year:
                loss += beta_r * r.damage + beta_d * r.delay + beta_a * r.action_cost
        return loss


# ---------------------------------------------------------------------------
# Core impact functions
# ---------------------------------------------------------------------------

def segment_construction_cost(segment: RoadSegment, table: CostTable) -> float:
    """Replacement cost of a segment: (base + lighting if lit) x km."""
    base, lighting = table.lookup(segment.road_type, segment.lanes)
    per_km = base + (lighting if segment.lit else 0.0)
    return per_km * segment.length_m / 1000.0


def damage_fraction(depth_m: float, curve: DamageCurve) -> float:
    """Piecewise-linear damage fraction, clamped at the curve ends."""
    if depth_m < 0:
        raise ValueError(f"negative depth {depth_m}")
    return float(np.interp(depth_m, curve.depths_m, curve.fractions))


def disrupted_speed(depth_mm: float) -> float:
    """Attainable vehicle speed (km/h) under `depth_mm` of standing water.

    Quadratic adopted from the depth-disruption literature:
    v(w) = 0.0009 w^2 - 0.5529 w + 86.9448 for w < 300 mm, floored at 0;
    at and beyond 300 mm the road is impassable (v = 0).
    """
    if depth_mm < 0:
        raise ValueError(f"negative depth {depth_mm}")
    if depth_mm >= 300.0:
        return 0.0
    v = 0.0009 * depth_mm * depth_mm - 0.5529 * depth_mm + 86.9448
    return max(v, 0.0)


def zone_damage(
    segments: list[RoadSegment],
    depth_field: DepthField,
    offsets: dict[str, float],
    cost_table: CostTable,
    curves: dict[str, DamageCurve],
) -> dict[str, float]:
    """Direct damage R_i per zone: sum of fraction x construction cost."""
    damage: dict[str, float] = {}
    for seg in segments:
        if seg.road_type not in curves:
            raise KeyError(f"no damage curve for road_type {seg.road_type!r}")
        eff = depth_at_cells(depth_field, list(seg.cells), offsets.get(seg.taz_id, 0.0))
        frac = damage_fraction(eff, curves[seg.road_type])
        cost = segment_construction_cost(seg, cost_table)
        damage[seg.taz_id] = damage.get(seg.taz_id, 0.0) + frac * cost
    return damage


def zone_delay(
    dry: "RoutingResult",
    wet: "RoutingResult",
    od: np.ndarray,
    zone_ids: list[str],
    vot_per_hour: float,
    stranded_trip_cost: float,
) -> tuple[dict[str, float], dict[str, float]]:
    """Delay losses D_i and stranded trips, attributed to the origin zone.

    Per OD pair, delay = max(0, wet - dry) minutes priced at the value of
    time. Pairs reachable dry but unreachable wet contribute their trips
    as stranded at the flat per-trip cost. Pairs unreachable even dry are
    skipped: there is no service to lose.
    """
    od = np.asarray(od, dtype=float)
    n = len(zone_ids)
    if od.shape != (n, n):
        raise ValueError("OD matrix shape does not match zone list")
    delay: dict[str, float] = {z: 0.0 for z in zone_ids}
    stranded: dict[str, float] = {z: 0.0 for z in zone_ids}
    for i, src in enumerate(zone_ids):
        for j, dst in enumerate(zone_ids):
            if i == j:
                continue
            trips = od[i, j]
            if trips == 0:
                continue
            pair = (src, dst)
            if pair in dry.unreachable:
                continue
            if pair in wet.unreachable:
                stranded[src] += trips
                delay[src] += trips * stranded_trip_cost
                continue
            extra_min = max(0.0, wet.od_time_min[pair] - dry.od_time_min[pair])
            delay[src] += trips * extra_min * vot_per_hour / 60.0
    return delay, stranded


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------

def _parse_cells(text: str) -> tuple[tuple[int, int], ...]:
    cells = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        r, _, c = part.partition(":")
        cells.append((int(r), int(c)))
    return tuple(cells)


def load_road_segments(path: str) -> list[RoadSegment]:
    """Read roads CSV; cells are encoded `r:c;r:c;...`."""
    expected = [
        "segment_id", "taz_id", "edge_a", "edge_b", "length_m",
        "road_type", "lanes", "lit", "cells",
    ]
    segments: list[RoadSegment] = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(str(exc), path=path) from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != expected:
            raise InputError(f"expected header {','.join(expected)}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                edge_a = row["edge_a"].strip()
                edge_b = row["edge_b"].strip()
                edge = (edge_a, edge_b) if edge_a and edge_b else None
                lit = row["lit"].strip().lower()
                if lit not in ("true", "false", "0", "1"):
                    raise ValueError(f"lit must be boolean, got {row['lit']!r}")
                segments.append(
                    RoadSegment(
                        id=row["segment_id"].strip(),
                        taz_id=row["taz_id"].strip(),
                        edge=edge,
                        length_m=float(row["length_m"]),
                        road_type=row["road_type"].strip(),
                        lanes=int(row["lanes"]),
                        lit=lit in ("true", "1"),
                        cells=_parse_cells(row["cells"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise InputError(f"malformed segment row: {exc}", path, lineno) from exc
    return segments


def load_cost_table(path: str) -> CostTable:
    """Read cost CSV `road_type,lanes,cost_per_km,lighting_per_km`."""
    expected = ["road_type", "lanes", "cost_per_km", "lighting_per_km"]
    cost: dict[tuple[str, int], float] = {}
    lighting: dict[tuple[str, int], float] = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(str(exc), path=path) from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != expected:
            raise InputError(f"expected header {','.join(expected)}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                key = (row["road_type"].strip(), int(row["lanes"]))
                c = float(row["cost_per_km"])
                l = float(row["lighting_per_km"])
            except (TypeError, ValueError) as exc:
                raise InputError(f"malformed cost row: {exc}", path, lineno) from exc
            if c < 0 or l < 0:
                raise InputError("costs must be non-negative", path, lineno)
            cost[key] = c
            lighting[key] = l
    return CostTable(cost_per_km=cost, lighting_per_km=lighting)


def load_damage_curves(path: str) -> dict[str, DamageCurve]:
    """Read damage-curve CSV `road_type,depth_m,fraction` (grouped rows)."""
    expected = ["road_type", "depth_m", "fraction"]
    points: dict[str, list[tuple[float, float]]] = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(str(exc), path=path) from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != expected:
            raise InputError(f"expected header {','.join(expected)}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                rt = row["road_type"].strip()
                points.setdefault(rt, []).append(
                    (float(row["depth_m"]), float(row["fraction"]))
                )
            except (TypeError, ValueError) as exc:
                raise InputError(f"malformed curve row: {exc}", path, lineno) from exc
    curves = {}
    for rt, pts in points.items():
        try:
            curves[rt] = DamageCurve(
                road_type=rt,
                depths_m=tuple(p[0] for p in pts),
                fractions=tuple(p[1] for p in pts),
            )
        except ValueError as exc:
            raise InputError(f"curve for {rt!r}: {exc}", path=path) from exc
    if not curves:
        raise InputError("no damage curves found", path=path)
    return curves
