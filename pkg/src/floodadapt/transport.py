"""Simplified four-step travel demand model on a TAZ centroid graph.

Trips are generated from per-zone production/attraction marginals,
distributed with a negative-exponential gravity seed balanced by iterative
proportional fitting, and assigned all-or-nothing to shortest-travel-time
paths between zone centroids. Edge travel times react to flooding through
the depth-disruption speed curve, so the same machinery produces dry and
flooded (wet) routing results.
"""

from __future__ import annotations

import csv
import heapq
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .floodgrid import DepthField, depth_at_cells
from .impacts import RoadSegment, disrupted_speed

#: Edge value marking an impassable (fully flooded) edge.
BLOCKED = math.inf

#: Dry-road speed; equals the disruption curve at zero depth so the dry and
#: flooded regimes coincide when no water is present.
DEFAULT_FREE_FLOW_KMH = 86.9448


@dataclass(frozen=True)
class TazZone:
    """Traffic analysis zone: centroid plus daily trip marginals."""

    id: str
    x: float
    y: float
    trips_out: float
    trips_in: float

    def __post_init__(self):
        if self.trips_out < 0 or self.trips_in < 0:
            raise ValueError(f"zone {self.id}: negative trip marginal")


@dataclass
class TazEdge:
    a: str
    b: str
    length_m: float
    speed_kmh: float
    segment_ids: list[str] = field(default_factory=list)

    @property
    def key(self) -> tuple[str, str]:
        return edge_key(self.a, self.b)


def edge_key(a: str, b: str) -> tuple[str, str]:
    """Canonical undirected edge key."""
    return (a, b) if a <= b else (b, a)


@dataclass
class TazGraph:
    zones: dict[str, TazZone]
    edges: dict[tuple[str, str], TazEdge]

    @property
    def zone_ids(self) -> list[str]:
        return list(self.zones)

    def neighbors(self, zone_id: str):
        for key, edge in self.edges.items():
            if zone_id == key[0]:
                yield key[1], edge
            elif zone_id == key[1]:
                yield key[0], edge


@dataclass
class RoutingResult:
    """All-or-nothing assignment of an OD matrix onto shortest paths."""

    od_time_min: dict[tuple[str, str], float]
    od_path: dict[tuple[str, str], tuple[str, ...] | None]
    edge_volume: dict[tuple[str, str], float]
    origin_total_min: dict[str, float]
    unreachable: set[tuple[str, str]]
    stranded_od: dict[tuple[str, str], float]


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------

def load_zones(path: str) -> list[TazZone]:
    """Read zones CSV `taz_id,centroid_x,centroid_y,trips_out,trips_in`."""
    zones: list[TazZone] = []
    seen: set[str] = set()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(str(exc), path=path) from exc
    with fh:
        reader = csv.DictReader(fh)
        expected = ["taz_id", "centroid_x", "centroid_y", "trips_out", "trips_in"]
        if reader.fieldnames != expected:
            raise InputError(f"expected header {','.join(expected)}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                zone = TazZone(
                    id=row["taz_id"].strip(),
                    x=float(row["centroid_x"]),
                    y=float(row["centroid_y"]),
                    trips_out=float(row["trips_out"]),
                    trips_in=float(row["trips_in"]),
                )
            except (TypeError, ValueError) as exc:
                raise InputError(f"malformed zone row: {exc}", path, lineno) from exc
            if zone.id in seen:
                raise InputError(f"duplicate taz_id {zone.id}", path, lineno)
            seen.add(zone.id)
            zones.append(zone)
    if len(zones) < 1:
        raise InputError("no zones found", path=path)
    return zones


def load_adjacency(path: str) -> list[tuple[str, str]]:
    """Read adjacency CSV `taz_a,taz_b` (undirected pairs)."""
    pairs: list[tuple[str, str]] = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(str(exc), path=path) from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["taz_a", "taz_b"]:
            raise InputError("expected header taz_a,taz_b", path, 1)
        for lineno, row in enumerate(reader, start=2):
            a, b = row["taz_a"].strip(), row["taz_b"].strip()
            if not a or not b:
                raise InputError("empty zone id", path, lineno)
            pairs.append((a, b))
    return pairs


# ---------------------------------------------------------------------------
# Trip distribution
# ---------------------------------------------------------------------------

def build_seed_matrix(zones: list[TazZone], lambda_m: float) -> np.ndarray:
    """Gravity seed exp(-d_ij / lambda_m) over centroid distances.

    The diagonal distance is zero, so intrazonal seeds are exp(0) = 1.
    """
    if lambda_m <= 0:
        raise ValueError(f"impedance scale must be positive, got {lambda_m}")
    if len(zones) < 2:
        raise ValueError("need at least two zones")
    xy = np.array([[z.x, z.y] for z in zones])
    d = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
    return np.exp(-d / lambda_m)


def ipf_fit(
    seed: np.ndarray,
    row_marginals,
    col_marginals,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> np.ndarray:
    """Balance `seed` to the marginals by alternating row/column scaling.

    Stops when the largest relative marginal deviation is at most `tol`.
    Zeros in the seed are preserved, as are all 2x2 cross-product ratios.
    """
    m = np.asarray(seed, dtype=float).copy()
    rows = np.asarray(row_marginals, dtype=float)
    cols = np.asarray(col_marginals, dtype=float)
    if m.ndim != 2 or m.shape != (len(rows), len(cols)):
        raise ValueError("seed shape does not match marginals")
    if (m < 0).any():
        raise ValueError("seed must be non-negative")
    if (rows < 0).any() or (cols < 0).any():
        raise ValueError("marginals must be non-negative")
    total_r, total_c = rows.sum(), cols.sum()
    if abs(total_r - total_c) > 1e-9 * max(total_r, total_c, 1.0):
        raise ValueError(
            f"marginal totals differ: rows {total_r} vs cols {total_c}"
        )
    empty_rows = (m.sum(axis=1) == 0) & (rows > 0)
    empty_cols = (m.sum(axis=0) == 0) & (cols > 0)
    if empty_rows.any() or empty_cols.any():
        raise ValueError("seed has an all-zero row/column with positive marginal")

    def deviation(mat: np.ndarray) -> float:
        rs, cs = mat.sum(axis=1), mat.sum(axis=0)
        dr = np.abs(rs - rows) / np.maximum(rows, 1e-300)
        dc = np.abs(cs - cols) / np.maximum(cols, 1e-300)
        dr[rows == 0] = np.abs(rs[rows == 0])
        dc[cols == 0] = np.abs(cs[cols == 0])
        return float(max(dr.max(initial=0.0), dc.max(initial=0.0)))

    for _ in range(max_iter):
        if deviation(m) <= tol:
            break
        rs = m.sum(axis=1)
        scale = np.divide(rows, rs, out=np.zeros_like(rows), where=rs > 0)
        m *= scale[:, None]
        cs = m.sum(axis=0)
        scale = np.divide(cols, cs, out=np.zeros_like(cols), where=cs > 0)
        m *= scale[None, :]
    return m


# ---------------------------------------------------------------------------
# Graph construction and edge times
# ---------------------------------------------------------------------------

def build_taz_graph(
    zones: list[TazZone],
    adjacency: list[tuple[str, str]],
    road_segments: list[RoadSegment] = (),
    default_speed_kmh: float = DEFAULT_FREE_FLOW_KMH,
    speed_overrides: dict[tuple[str, str], float] | None = None,
) -> TazGraph:
    """Assemble the routing graph from zones, neighbour pairs and roads."""
    zmap = {z.id: z for z in zones}
    edges: dict[tuple[str, str], TazEdge] = {}
    for a, b in adjacency:
        if a not in zmap:
            raise InputError(f"adjacency references unknown zone '{a}'")
        if b not in zmap:
            raise InputError(f"adjacency references unknown zone '{b}'")
        if a == b:
            raise InputError(f"self-loop on zone '{a}'")
        key = edge_key(a, b)
        if key in edges:
            warnings.warn(f"duplicate adjacency {a}-{b} collapsed", stacklevel=2)
            continue
        za, zb = zmap[key[0]], zmap[key[1]]
        length = math.hypot(za.x - zb.x, za.y - zb.y)
        if length <= 0:
            raise InputError(f"zero-length edge {a}-{b} (coincident centroids)")
        speed = default_speed_kmh
        if speed_overrides and key in speed_overrides:
            speed = speed_overrides[key]
        edges[key] = TazEdge(a=key[0], b=key[1], length_m=length, speed_kmh=speed)
    for seg in road_segments:
        if seg.taz_id not in zmap:
            raise InputError(f"segment {seg.id} references unknown zone {seg.taz_id}")
        if seg.edge is not None:
            key = edge_key(*seg.edge)
            if key not in edges:
                raise InputError(
                    f"segment {seg.id} references unknown edge {seg.edge[0]}-{seg.edge[1]}"
                )
            edges[key].segment_ids.append(seg.id)
    return TazGraph(zones={z.id: z for z in zones}, edges=edges)


def edge_travel_time(
    edge: TazEdge,
    depth_field: DepthField | None = None,
    offsets: dict[str, float] | None = None,
    segments: dict[str, RoadSegment] | None = None,
) -> float:
    """Travel time over one edge in minutes, or BLOCKED.

    Dry (no depth field): length over free-flow speed. Flooded: each
    attached road segment runs at the disruption-curve speed for its
    effective depth (worst cell, minus the zone's elevation offset, in mm),
    clamped to the edge free-flow speed; any unattributed remainder of the
    edge length stays at free flow. A zero-speed segment blocks the edge.
    """
    if depth_field is None:
        return edge.length_m / 1000.0 * 60.0 / edge.speed_kmh
    offsets = offsets or {}
    segments = segments or {}
    total = 0.0
    seg_len = 0.0
    for sid in edge.segment_ids:
        seg = segments[sid]
        eff_m = depth_at_cells(depth_field, seg.cells, offsets.get(seg.taz_id, 0.0))
        speed = min(disrupted_speed(eff_m * 1000.0), edge.speed_kmh)
        if speed <= 0.0:
            return BLOCKED
        total += seg.length_m / 1000.0 * 60.0 / speed
        seg_len += seg.length_m
    remainder = max(0.0, edge.length_m - seg_len)
    total += remainder / 1000.0 * 60.0 / edge.speed_kmh
    return total


def compute_edge_times(
    graph: TazGraph,
    depth_field: DepthField | None = None,
    offsets: dict[str, float] | None = None,
    segments: dict[str, RoadSegment] | None = None,
) -> dict[tuple[str, str], float]:
    """Edge travel times for the whole graph (dry when no field given)."""
    return {
        key: edge_travel_time(edge, depth_field, offsets, segments)
        for key, edge in graph.edges.items()
    }


# ---------------------------------------------------------------------------
# Shortest paths and assignment
# ---------------------------------------------------------------------------

def shortest_paths(
    graph: TazGraph, edge_times: dict[tuple[str, str], float]
) -> tuple[dict[tuple[str, str], float], dict[tuple[str, str], tuple[str, ...] | None]]:
    """All-pairs shortest travel times with deterministic tie-breaking.

    BLOCKED edges are excluded. Among equal-time paths the smallest
    lexicographic node-id sequence wins. Unreachable pairs get time inf
    and path None.
    """
    ids = graph.zone_ids
    adj: dict[str, list[tuple[str, float]]] = {z: [] for z in ids}
    for key, t in edge_times.items():
        if t == BLOCKED:
            continue
        if t < 0:
            raise ValueError(f"negative edge time on {key}")
        adj[key[0]].append((key[1], t))
        adj[key[1]].append((key[0], t))

    times: dict[tuple[str, str], float] = {}
    paths: dict[tuple[str, str], tuple[str, ...] | None] = {}
    for src in ids:
        dist: dict[str, tuple[float, tuple[str, ...]]] = {}
        heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (src,))]
        while heap:
            t, path = heapq.heappop(heap)
            node = path[-1]
            if node in dist:
                continue
            dist[node] = (t, path)
            for nxt, w in adj[node]:
                if nxt not in dist:
                    heapq.heappush(heap, (t + w, path + (nxt,)))
        for dst in ids:
            if dst in dist:
                times[(src, dst)] = dist[dst][0]
                paths[(src, dst)] = dist[dst][1]
            else:
                times[(src, dst)] = math.inf
                paths[(src, dst)] = None
    return times, paths


def assign_trips(
    od: np.ndarray,
    zone_ids: list[str],
    times: dict[tuple[str, str], float],
    paths: dict[tuple[str, str], tuple[str, ...] | None],
) -> RoutingResult:
    """All-or-nothing loading of the OD matrix onto the shortest paths.

    Intrazonal trips carry zero travel time and load no edge. Trips on
    unreachable pairs are tallied as stranded rather than silently lost.
    """
    od = np.asarray(od, dtype=float)
    n = len(zone_ids)
    if od.shape != (n, n):
        raise ValueError("OD matrix shape does not match zone list")
    edge_volume: dict[tuple[str, str], float] = {}
    origin_total: dict[str, float] = {z: 0.0 for z in zone_ids}
    unreachable: set[tuple[str, str]] = set()
    stranded: dict[tuple[str, str], float] = {}
    for i, src in enumerate(zone_ids):
        for j, dst in enumerate(zone_ids):
            if i == j:
                continue
            trips = od[i, j]
            pair = (src, dst)
            path = paths[pair]
            if path is None:
                unreachable.add(pair)
                if trips > 0:
                    stranded[pair] = trips
                continue
            if trips == 0:
                continue
            origin_total[src] += trips * times[pair]
            for a, b in zip(path, path[1:]):
                key = edge_key(a, b)
                edge_volume[key] = edge_volume.get(key, 0.0) + trips
    od_time = {pair: times[pair] for pair in times}
    return RoutingResult(
        od_time_min=od_time,
        od_path=dict(paths),
        edge_volume=edge_volume,
        origin_total_min=origin_total,
        unreachable=unreachable,
        stranded_od=stranded,
    )
