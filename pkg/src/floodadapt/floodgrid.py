"""Steady-state pluvial flood depths on a raster DEM.

A uniform rainfall depth lands on every cell, runs downhill by steepest
descent, ponds in depressions, and exits across the grid boundary. A
depression fills to a flat surface; once the water reaches its spill
elevation the excess overflows across the saddle and continues downstream
into the neighbouring catchment (fill-spill-merge over a depression
hierarchy). Mass balance holds exactly: input = stored + outflow.

Conventions
-----------
* Row 0 is the northern edge; positions are (row, col).
* Off-grid and nodata cells are perfect sinks (open boundary). Along a
  degenerate axis (single row or single column) there is no off-grid
  neighbour, so a 1xN grid behaves as a 1-D terrain profile.
* Steepest descent over the 8-connected neighbourhood; ties broken by the
  fixed scan order N, NE, E, SE, S, SW, W, NW.
* Flat areas drain toward their nearest outlet cell (breadth-first over
  the flat); flats with no lower rim are depression bottoms.
* `closed=True` seals the boundary (and nodata cells) so no water leaves;
  useful for conservation checks.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

# Scan order for neighbours and all tie-breaking: N, NE, E, SE, S, SW, W, NW.
NEIGHBOR_ORDER = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))

_OCEAN = -1  # terminal code: water leaves the grid
_PIT = -3  # flow-target code: cell belongs to a depression bottom
_UNSET = -2


@dataclass(frozen=True)
class DemGrid:
    """Raster of terrain elevations with cell size and nodata mask."""

    nrows: int
    ncols: int
    cell_size_m: float
    elevation: np.ndarray  # (nrows, ncols) float64, metres
    nodata_mask: np.ndarray  # (nrows, ncols) bool, True = missing
    origin: tuple[float, float] = (0.0, 0.0)  # (xllcorner, yllcorner)

    def __post_init__(self):
        if self.nrows < 1 or self.ncols < 1:
            raise ValueError("grid must have at least one cell")
        if self.cell_size_m <= 0:
            raise ValueError(f"cell size must be positive, got {self.cell_size_m}")
        if self.elevation.shape != (self.nrows, self.ncols):
            raise ValueError("elevation shape does not match nrows x ncols")
        if self.nodata_mask.shape != (self.nrows, self.ncols):
            raise ValueError("nodata mask shape does not match nrows x ncols")
        if not np.all(np.isfinite(self.elevation[~self.nodata_mask])):
            raise ValueError("non-finite elevation on a valid cell")

    @property
    def cell_area_m2(self) -> float:
        return self.cell_size_m * self.cell_size_m

    @property
    def n_valid(self) -> int:
        return int((~self.nodata_mask).sum())


@dataclass(frozen=True)
class DepthField:
    """Water depths produced by one flood event on a DemGrid."""

    grid: DemGrid
    depth_m: np.ndarray  # (nrows, ncols) float64, >= 0, 0 on nodata
    outflow_m3: float  # total volume that exited the grid

    @property
    def stored_m3(self) -> float:
        return float(self.depth_m.sum()) * self.grid.cell_area_m2


# ---------------------------------------------------------------------------
# ASCII raster I/O (ESRI-style grid)
# ---------------------------------------------------------------------------

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def load_dem(path: str) -> DemGrid:
    """Read an ASCII raster grid (`ncols`/`nrows`/... headers, then rows)."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError(str(exc), path=path) from exc

    headers: dict[str, float] = {}
    row_start = 0
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            row_start = lineno
            continue
        key = tokens[0].lower()
        if key in _HEADER_KEYS:
            if len(tokens) != 2:
                raise InputError(f"malformed header line '{line}'", path, lineno)
            try:
                headers[key] = float(tokens[1])
            except ValueError as exc:
                raise InputError(f"non-numeric header value '{tokens[1]}'", path, lineno) from exc
            row_start = lineno
        else:
            break

    for required in ("ncols", "nrows", "cellsize"):
        if required not in headers:
            raise InputError(f"missing header '{required}'", path=path)
    ncols, nrows = int(headers["ncols"]), int(headers["nrows"])
    if ncols < 1 or nrows < 1:
        raise InputError("ncols and nrows must be positive", path=path)
    cellsize = headers["cellsize"]
    if cellsize <= 0:
        raise InputError(f"nonpositive cellsize {cellsize}", path=path)
    nodata = headers.get("nodata_value")

    rows: list[list[float]] = []
    for lineno, line in enumerate(lines[row_start:], start=row_start + 1):
        tokens = line.split()
        if not tokens:
            continue
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            bad = next(t for t in tokens if not _is_number(t))
            raise InputError(f"non-numeric cell value '{bad}'", path, lineno)
        if len(rows[-1]) != ncols:
            raise InputError(
                f"expected {ncols} values per row, got {len(rows[-1])}", path, lineno
            )
    if len(rows) != nrows:
        raise InputError(f"expected {nrows} data rows, got {len(rows)}", path=path)

    elev = np.array(rows, dtype=float)
    mask = np.zeros_like(elev, dtype=bool) if nodata is None else elev == nodata
    elev = np.where(mask, 0.0, elev)
    return DemGrid(
        nrows=nrows,
        ncols=ncols,
        cell_size_m=cellsize,
        elevation=elev,
        nodata_mask=mask,
        origin=(headers.get("xllcorner", 0.0), headers.get("yllcorner", 0.0)),
    )


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def write_ascii_grid(path: str, grid: DemGrid, values: np.ndarray | None = None,
                     nodata_value: float = -9999.0) -> None:
    """Write `values` (default: the DEM elevations) as an ASCII raster."""
    data = grid.elevation if values is None else values
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"ncols {grid.ncols}\n")
        fh.write(f"nrows {grid.nrows}\n")
        fh.write(f"xllcorner {grid.origin[0]:.10g}\n")
        fh.write(f"yllcorner {grid.origin[1]:.10g}\n")
        fh.write(f"cellsize {grid.cell_size_m:.10g}\n")
        fh.write(f"NODATA_value {nodata_value:.10g}\n")
        for r in range(grid.nrows):
            out = [
                f"{nodata_value:.10g}" if grid.nodata_mask[r, c] else f"{data[r, c]:.10g}"
                for c in range(grid.ncols)
            ]
            fh.write(" ".join(out) + "\n")


# ---------------------------------------------------------------------------
# Fill-spill-merge solver
# ---------------------------------------------------------------------------

@dataclass
class _DepNode:
    """One depression in the hierarchy (leaf = single bottom, parent = merge)."""

    index: int
    children: tuple[int, int] | None = None
    parent: int | None = None
    outlet: float = math.inf  # spill elevation; inf until the node merges away
    overflow_to: int | None = None  # terminal code beyond the outlet (_OCEAN or pit cell)
    cells: np.ndarray | None = None  # member cell ids at merge-away time
    els: np.ndarray | None = None  # member elevations, ascending
    prefix: np.ndarray | None = None  # prefix sums of els
    capacity: float = math.inf  # volume (m^3 per unit area factored out) at outlet


class FloodSolver:
    """Reusable flood solver for one DemGrid.

    The depression hierarchy and flow routing depend only on the terrain,
    so one solver instance amortises them across many rainfall depths.
    """

    def __init__(self, dem: DemGrid, closed: bool = False):
        self.dem = dem
        self.closed = closed
        self._build_flow()
        self._build_hierarchy()
        self._aggregate_inflow_counts()

    # -- terrain analysis ---------------------------------------------------

    def _offsets(self) -> list[tuple[int, int]]:
        row_active = self.dem.nrows > 1
        col_active = self.dem.ncols > 1
        return [
            (dr, dc)
            for dr, dc in NEIGHBOR_ORDER
            if (dr == 0 or row_active) and (dc == 0 or col_active)
        ]

    def _build_flow(self) -> None:
        dem = self.dem
        nr, nc = dem.nrows, dem.ncols
        n = nr * nc
        elev = dem.elevation.ravel()
        valid = ~dem.nodata_mask.ravel()
        offs = self._offsets()

        target = np.full(n, _UNSET, dtype=np.int64)
        boundary = np.zeros(n, dtype=bool)  # has an off-grid or nodata neighbour
        for i in range(n):
            if not valid[i]:
                continue
            r, c = divmod(i, nc)
            best = _UNSET
            best_e = math.inf
            ocean = False
            for dr, dc in offs:
                rr, cc = r + dr, c + dc
                if 0 <= rr < nr and 0 <= cc < nc:
                    j = rr * nc + cc
                    if valid[j]:
                        if elev[j] < best_e:
                            best_e = elev[j]
                            best = j
                        continue
                ocean = True
            if ocean:
                boundary[i] = True
            if ocean and not self.closed:
                target[i] = _OCEAN  # off-grid surface is -inf: always steepest
            elif best != _UNSET and best_e < elev[i]:
                target[i] = best

        # Flats: route across equal-elevation regions toward their outlets;
        # flats with no outlet are depression bottoms.
        pit_canon = np.full(n, -1, dtype=np.int64)
        seen = np.zeros(n, dtype=bool)
        for i in range(n):
            if not valid[i] or target[i] != _UNSET or seen[i]:
                continue
            e0 = elev[i]
            comp = []
            stack = [i]
            seen[i] = True
            while stack:
                j = stack.pop()
                comp.append(j)
                r, c = divmod(j, nc)
                for dr, dc in offs:
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < nr and 0 <= cc < nc:
                        k = rr * nc + cc
                        if valid[k] and not seen[k] and elev[k] == e0:
                            seen[k] = True
                            stack.append(k)
            comp.sort()
            drains = [j for j in comp if target[j] != _UNSET]
            if drains:
                assigned = {j: True for j in drains}
                queue = deque(drains)
                while queue:
                    j = queue.popleft()
                    r, c = divmod(j, nc)
                    for dr, dc in offs:
                        rr, cc = r + dr, c + dc
                        if 0 <= rr < nr and 0 <= cc < nc:
                            k = rr * nc + cc
                            if (
                                valid[k]
                                and elev[k] == e0
                                and target[k] == _UNSET
                                and k not in assigned
                            ):
                                assigned[k] = True
                                target[k] = j
                                queue.append(k)
            else:
                canon = comp[0]
                for j in comp:
                    target[j] = _PIT
                    pit_canon[j] = canon

        # Terminal of every cell: _OCEAN or the canonical pit cell it drains to.
        term = np.full(n, _UNSET, dtype=np.int64)
        for i in range(n):
            if not valid[i]:
                continue
            j = i
            path = []
            while term[j] == _UNSET and target[j] >= 0:
                path.append(j)
                j = target[j]
            if term[j] != _UNSET:
                t = term[j]
            elif target[j] == _OCEAN:
                t = _OCEAN
            else:  # _PIT
                t = pit_canon[j]
            term[j] = t
            for p in path:
                term[p] = t

        self._elev = elev
        self._valid = valid
        self._boundary = boundary
        self._terminal = term

    # -- depression hierarchy (Kruskal over minimax saddles) -----------------

    def _build_hierarchy(self) -> None:
        dem = self.dem
        nr, nc = dem.nrows, dem.ncols
        n = nr * nc
        elev = self._elev
        valid = self._valid
        offs = [(dr, dc) for dr, dc in ((0, 1), (1, 1), (1, 0), (1, -1)) if (dr == 0 or nr > 1) and (dc == 0 or nc > 1)]

        edges: list[tuple[float, int, int]] = []
        for i in range(n):
            if not valid[i]:
                continue
            r, c = divmod(i, nc)
            for dr, dc in offs:
                rr, cc = r + dr, c + dc
                if 0 <= rr < nr and 0 <= cc < nc:
                    j = rr * nc + cc
                    if valid[j]:
                        edges.append((max(elev[i], elev[j]), i, j))
            if self._boundary[i] and not self.closed:
                edges.append((elev[i], i, n))  # virtual ocean node
        edges.sort()

        uf = np.arange(n + 1, dtype=np.int64)

        def find(x: int) -> int:
            root = x
            while uf[root] != root:
                root = uf[root]
            while uf[x] != root:
                uf[x], x = root, uf[x]
            return root

        comp_min: dict[int, float] = {i: elev[i] for i in range(n) if valid[i]}
        comp_cells: dict[int, list[int]] = {i: [i] for i in range(n) if valid[i]}
        comp_node: dict[int, int | None] = {i: None for i in range(n) if valid[i]}
        comp_ocean: dict[int, bool] = {i: False for i in range(n) if valid[i]}
        if not self.closed:
            comp_min[n] = -math.inf
            comp_cells[n] = []
            comp_node[n] = None
            comp_ocean[n] = True

        nodes: list[_DepNode] = []
        pit_leaf: dict[int, int] = {}
        all_offs = self._offsets()

        def new_node(children: tuple[int, int] | None = None) -> int:
            node = _DepNode(index=len(nodes), children=children)
            nodes.append(node)
            return node.index

        def spill_terminal(endpoint: int, root: int, w: float) -> int:
            """Terminal for water crossing the saddle into `root`'s side.

            If the endpoint sits below the crest its own drainage terminal is
            already inside the receiving component. A crest-level endpoint may
            drain backwards into the spilling basin, so descend explicitly:
            take the lowest strictly-lower neighbour within the receiving
            component, wandering across crest-level cells if necessary.
            """
            if endpoint == n:
                return _OCEAN
            if elev[endpoint] < w:
                return int(self._terminal[endpoint])
            seen = {endpoint}
            queue = deque([endpoint])
            while queue:
                cell = queue.popleft()
                r, c = divmod(cell, nc)
                best = -1
                best_e = w
                for dr, dc in all_offs:
                    rr, cc = r + dr, c + dc
                    if not (0 <= rr < nr and 0 <= cc < nc):
                        continue
                    k = rr * nc + cc
                    if not valid[k] or find(k) != root:
                        continue
                    if elev[k] < best_e:
                        best_e = elev[k]
                        best = k
                if best >= 0:
                    return int(self._terminal[best])
                for dr, dc in all_offs:
                    rr, cc = r + dr, c + dc
                    if not (0 <= rr < nr and 0 <= cc < nc):
                        continue
                    k = rr * nc + cc
                    if valid[k] and find(k) == root and elev[k] == w and k not in seen:
                        seen.add(k)
                        queue.append(k)
            return _OCEAN  # receiving side has nothing below the crest

        def ensure_node(root: int) -> int:
            if comp_node[root] is None:
                leaf = new_node()
                comp_node[root] = leaf
                bottom = comp_min[root]
                for cell in comp_cells[root]:
                    if elev[cell] == bottom:
                        pit_leaf[cell] = leaf
            return comp_node[root]

        def finalize(node_idx: int, outlet: float, cells: list[int],
                     parent: int | None, overflow_to: int | None) -> None:
            node = nodes[node_idx]
            node.outlet = outlet
            node.parent = parent
            node.overflow_to = overflow_to
            arr = np.array(cells, dtype=np.int64)
            els = np.sort(elev[arr])
            node.cells = arr
            node.els = els
            node.prefix = np.concatenate(([0.0], np.cumsum(els)))
            if math.isinf(outlet):
                node.capacity = math.inf
            else:
                k = int(np.searchsorted(els, outlet, side="left"))
                node.capacity = outlet * k - node.prefix[k]

        def union(ra: int, rb: int) -> int:
            if len(comp_cells[ra]) < len(comp_cells[rb]):
                ra, rb = rb, ra
            uf[rb] = ra
            comp_cells[ra].extend(comp_cells[rb])
            comp_min[ra] = min(comp_min[ra], comp_min[rb])
            comp_ocean[ra] = comp_ocean[ra] or comp_ocean[rb]
            for d in (comp_cells, comp_min, comp_node, comp_ocean):
                d.pop(rb, None)
            return ra

        for w, a, b in edges:
            ra, rb = find(a), find(b)
            if ra == rb:
                continue
            if comp_ocean[ra] or comp_ocean[rb]:
                if comp_ocean[rb]:
                    basin_root, basin_end, ocean_end = ra, a, b
                else:
                    basin_root, basin_end, ocean_end = rb, b, a
                is_basin = comp_node[basin_root] is not None or comp_min[basin_root] < w
                if is_basin:
                    node = ensure_node(basin_root)
                    ocean_root = find(ocean_end) if ocean_end != n else n
                    ot = spill_terminal(ocean_end, ocean_root, w)
                    finalize(node, w, comp_cells[basin_root], None, ot)
                merged = union(ra, rb)
                comp_node[merged] = None
            else:
                basin_a = comp_node[ra] is not None or comp_min[ra] < w
                basin_b = comp_node[rb] is not None or comp_min[rb] < w
                if basin_a and basin_b:
                    na, nb_ = ensure_node(ra), ensure_node(rb)
                    parent = new_node(children=(na, nb_))
                    finalize(na, w, comp_cells[ra], parent, spill_terminal(b, rb, w))
                    finalize(nb_, w, comp_cells[rb], parent, spill_terminal(a, ra, w))
                    merged = union(ra, rb)
                    comp_node[merged] = parent
                else:
                    keep = comp_node[ra] if comp_node[ra] is not None else comp_node[rb]
                    merged = union(ra, rb)
                    comp_node[merged] = keep

        # Components that never merged away (closed mode, or fully sealed
        # islands): bottomless capacity, no overflow.
        leftovers = {find(i) for i in range(n) if self._valid[i]}
        for root in sorted(leftovers):
            if comp_ocean.get(root, False):
                continue
            node = ensure_node(root)
            if nodes[node].cells is None:
                finalize(node, math.inf, comp_cells[root], None, None)

        self._nodes = nodes
        self._pit_leaf = pit_leaf

    def _aggregate_inflow_counts(self) -> None:
        """Count, per leaf, the cells whose runoff terminates there."""
        counts: dict[int, int] = {}
        ocean_cells = 0
        for i in range(len(self._terminal)):
            if not self._valid[i]:
                continue
            t = self._terminal[i]
            if t == _OCEAN:
                ocean_cells += 1
            else:
                leaf = self._pit_leaf[int(t)]
                counts[leaf] = counts.get(leaf, 0) + 1
        self._leaf_inflow_cells = dict(sorted(counts.items()))
        self._ocean_cells = ocean_cells

    # -- water distribution ---------------------------------------------------

    def solve(self, rainfall_mm: float) -> DepthField:
        """Distribute one uniform rainfall event and return the depth field."""
        if rainfall_mm < 0:
            raise ValueError(f"negative rainfall {rainfall_mm}")
        dem = self.dem
        area = dem.cell_area_m2
        depth = np.zeros(dem.nrows * dem.ncols, dtype=float)
        if rainfall_mm == 0 or dem.n_valid == 0:
            return DepthField(dem, depth.reshape(dem.nrows, dem.ncols), 0.0)

        v0 = rainfall_mm / 1000.0 * area
        outflow = self._ocean_cells * v0
        nodes = self._nodes
        stored = [0.0] * len(nodes)
        band = [0.0] * len(nodes)  # water absorbed at the node itself

        def sibling(idx: int) -> int:
            ca, cb = nodes[nodes[idx].parent].children
            return cb if ca == idx else ca

        def is_full(idx: int) -> bool:
            cap = nodes[idx].capacity
            if math.isinf(cap):
                return False
            cap *= area
            return cap - stored[idx] <= 1e-12 * (1.0 + cap)

        # Events carry the set of full tree roots already spilled through:
        # saturated basins can feed each other across shared saddle corridors,
        # and once a chain revisits a root every basin on the corridor is full,
        # so the excess physically leaves the grid.
        events = deque(
            (leaf, cnt * v0, frozenset())
            for leaf, cnt in self._leaf_inflow_cells.items()
        )
        guard = 0
        while events:
            guard += 1
            if guard > 2_000_000:
                raise RuntimeError("flood distribution failed to settle")
            tgt, vol, visited = events.popleft()
            if tgt == _OCEAN:
                outflow += vol
                continue
            x = tgt
            spilled = False
            while is_full(x):
                node = nodes[x]
                if node.parent is None:
                    ot = node.overflow_to
                    if ot == _OCEAN or ot is None or x in visited:
                        events.append((_OCEAN, vol, visited))
                    else:
                        events.append((self._pit_leaf[ot], vol, visited | {x}))
                    spilled = True
                    break
                if is_full(sibling(x)):
                    x = node.parent
                    continue
                ot = node.overflow_to
                dest = _OCEAN if ot == _OCEAN else self._pit_leaf[ot]
                events.append((dest, vol, visited))
                spilled = True
                break
            if spilled:
                continue
            cap = nodes[x].capacity * area
            free = cap - stored[x]
            if vol >= free:
                take, rest = free, vol - free
            else:
                take, rest = vol, 0.0
            band[x] += take
            y = x
            while y is not None:
                stored[y] += take
                y = nodes[y].parent
            if not math.isinf(cap) and is_full(x):
                stored[x] = cap  # snap away accumulation error
            if rest > 0.0:
                events.append((tgt, rest, frozenset()))

        # Paint lake levels: walk each tree from the top; a node owns the lake
        # exactly when water was absorbed at the node itself (band > 0 means
        # both children are full and the surface sits above their saddle).
        elev = self._elev
        roots = [nd.index for nd in nodes if nd.parent is None]
        stack = list(reversed(roots))
        while stack:
            idx = stack.pop()
            node = nodes[idx]
            if stored[idx] <= 0.0:
                continue
            if node.children is not None and band[idx] == 0.0:
                stack.extend(reversed(node.children))
                continue
            level = self._lake_level(node, stored[idx] / area)
            els = elev[node.cells]
            wet = els < level
            depth[node.cells[wet]] = level - els[wet]

        total_in = dem.n_valid * v0
        stored_total = depth.sum() * area
        # Guard against bookkeeping bugs; tolerance matches the module contract.
        if total_in > 0 and abs(total_in - stored_total - outflow) > 1e-6 * total_in:
            raise RuntimeError(
                f"mass balance violated: in={total_in} stored={stored_total} out={outflow}"
            )
        return DepthField(dem, depth.reshape(dem.nrows, dem.ncols), outflow)

    @staticmethod
    def _lake_level(node: _DepNode, volume_per_area: float) -> float:
        """Water surface elevation for `volume_per_area` inside this node."""
        els, prefix = node.els, node.prefix
        if not math.isinf(node.capacity):
            if volume_per_area >= node.capacity - 1e-12 * (1.0 + node.capacity):
                return node.outlet
        m = len(els)
        ks = np.arange(1, m + 1, dtype=float)
        levels = (volume_per_area + prefix[1:]) / ks
        lower_ok = levels >= els - 1e-12
        upper_ok = np.empty(m, dtype=bool)
        upper_ok[:-1] = levels[:-1] <= els[1:] + 1e-12
        upper_ok[-1] = True
        k = int(np.argmax(lower_ok & upper_ok))
        return float(min(levels[k], node.outlet))


def compute_flood(dem: DemGrid, rainfall_mm: float, closed: bool = False) -> DepthField:
    """One-shot flood computation (builds a solver and solves once)."""
    return FloodSolver(dem, closed=closed).solve(rainfall_mm)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

def oracle_flood(
    dem: DemGrid,
    rainfall_mm: float,
    closed: bool = False,
    surface_tol: float = 1e-7,
    dose_mm: float = 2.0,
    max_iter: int = 5_000_000,
) -> DepthField:
    """Relaxation oracle: repeatedly move water toward lower surfaces.

    Rainfall is introduced quasi-statically in doses of at most `dose_mm`
    (small increments, so transient piles of water in transit stay small).
    After each dose, every wet cell repeatedly sends half its surface gap
    to its lowest-surface neighbour (off-grid surface is -inf on an open
    boundary, +inf when closed; ties broken in scan order), capped by the
    available depth, until the largest surface imbalance among cells
    holding more than 1e-12 m of water falls below the working tolerance
    (a loose 1e-4 m between doses, `surface_tol` after the last one).
    Intended for small grids; fully independent of the fill-spill-merge
    solver.
    """
    if rainfall_mm < 0:
        raise ValueError(f"negative rainfall {rainfall_mm}")
    if dose_mm <= 0:
        raise ValueError(f"dose must be positive, got {dose_mm}")
    nr, nc = dem.nrows, dem.ncols
    n = nr * nc
    valid = (~dem.nodata_mask).ravel()
    pad = math.inf if closed else -math.inf
    if rainfall_mm == 0 or not valid.any():
        return DepthField(dem, np.zeros((nr, nc)), 0.0)

    offs = [
        (dr, dc)
        for dr, dc in NEIGHBOR_ORDER
        if (dr == 0 or nr > 1) and (dc == 0 or nc > 1)
    ]
    # Flat neighbour table; index n is a virtual off-grid/nodata cell.
    nbr = np.full((n, len(offs)), n, dtype=np.int64)
    for i in range(n):
        if not valid[i]:
            continue
        r, c = divmod(i, nc)
        for k, (dr, dc) in enumerate(offs):
            rr, cc = r + dr, c + dc
            if 0 <= rr < nr and 0 <= cc < nc and valid[rr * nc + cc]:
                nbr[i, k] = rr * nc + cc

    elev = np.where(valid, dem.elevation.ravel(), pad)
    surface = np.append(elev.copy(), pad)  # slot n = virtual sink
    depth = np.zeros(n)
    outflow = 0.0
    valid_idx = np.flatnonzero(valid)

    n_doses = max(1, math.ceil(rainfall_mm / dose_mm))
    per_dose = rainfall_mm / 1000.0 / n_doses
    iters = 0
    for dose in range(n_doses):
        depth[valid] += per_dose
        tol = surface_tol if dose == n_doses - 1 else max(surface_tol, 1e-4)
        while True:
            iters += 1
            if iters > max_iter:
                raise RuntimeError("oracle relaxation did not converge")
            surface[valid_idx] = elev[valid_idx] + depth[valid_idx]
            neigh = surface[nbr]
            kmin = np.argmin(neigh, axis=1)  # first hit = scan-order ties
            nmin = neigh[np.arange(n), kmin]
            gap = surface[:n] - nmin
            movable = valid & (depth > 1e-12) & (gap > 0)
            if not movable.any() or float(gap[movable].max()) < tol:
                break
            move = np.where(movable, np.minimum(depth, gap / 2.0), 0.0)
            depth -= move
            dest = nbr[np.arange(n), kmin]
            sel = move > 0
            sunk = float(move[sel & (dest == n)].sum())
            outflow += sunk
            inner = sel & (dest != n)
            np.add.at(depth, dest[inner], move[inner])
    if closed and outflow:
        raise RuntimeError("closed-boundary oracle lost water")

    depth_grid = np.where(valid, depth, 0.0).reshape(nr, nc)
    return DepthField(dem, depth_grid, outflow * dem.cell_area_m2)


# ---------------------------------------------------------------------------
# Depth sampling for road cells
# ---------------------------------------------------------------------------

def depth_at_cells(
    field: DepthField, cells: list[tuple[int, int]], offset_m: float = 0.0
) -> float:
    """Worst effective depth over `cells`, after raising them by `offset_m`.

    Returns max over the cells of max(0, depth - offset_m). The offset
    models elevated roads: it changes sampling only, never the flood.
    """
    if not cells:
        raise ValueError("empty cell list")
    if offset_m < 0:
        raise ValueError(f"negative offset {offset_m}")
    best = 0.0
    for r, c in cells:
        if not (0 <= r < field.grid.nrows and 0 <= c < field.grid.ncols):
            raise ValueError(f"cell ({r}, {c}) out of bounds")
        eff = float(field.depth_m[r, c]) - offset_m
        if eff > best:
            best = eff
    return best
