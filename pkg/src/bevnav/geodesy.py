"""Traversability grids, geodesic distance fields and target-region masks.

Geodesics run over 8-connected cells with step costs ``cell`` and
``sqrt(2) * cell``. A diagonal step is only allowed when both orthogonal
neighbours it squeezes between are passable. Transient (pedestrian) cells
count as passable unless ``transient_blocks`` is set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .bevgeom import FREE, GridSpec, freespace_cue, world_to_cell
from .scene import Scene

FREE_CELL, STATIC, TRANSIENT = 0, 1, 2
AGENT_RADIUS = 0.2
_EPS = 1e-9

# (drow, dcol, cost in cells)
NEIGHBORS = [
    (-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
    (-1, -1, math.sqrt(2)), (-1, 1, math.sqrt(2)), (1, -1, math.sqrt(2)), (1, 1, math.sqrt(2)),
]


class NoFreeCellError(ValueError):
    pass


@dataclass
class TravGrid:
    spec: GridSpec
    state: np.ndarray  # (rows, cols) uint8 of FREE_CELL / STATIC / TRANSIENT

    def passable(self, transient_blocks: bool = False) -> np.ndarray:
        if transient_blocks:
            return self.state == FREE_CELL
        return self.state != STATIC


@dataclass
class DistanceField:
    spec: GridSpec
    dist: np.ndarray  # meters, inf where unreachable


@dataclass
class RegionMask:
    spec: GridSpec
    mask: np.ndarray  # bool (rows, cols)
    source: tuple[int, int]
    snapped: bool = False


def traversability_from_scene(scene: Scene, spec: GridSpec, agent_radius: float = AGENT_RADIUS) -> TravGrid:
    """Oracle grid: a cell is blocked iff its center is within an inflated footprint."""
    ax, ay = spec.centers()
    wx, wy = scene.agent_to_world(ax, ay)
    state = np.full(spec.shape, FREE_CELL, dtype=np.uint8)
    for ob in scene.obstacles:
        inside = ob.contains(wx, wy, inflate=agent_radius)
        if ob.transient:
            state[inside & (state == FREE_CELL)] = TRANSIENT
        else:
            state[inside] = STATIC
    return TravGrid(spec, state)


def traversability_from_depth(depths, rig, intr, spec: GridSpec) -> TravGrid:
    """Single-frame estimate: observed-free cells are free, everything else static-blocked."""
    m = freespace_cue(depths, rig, intr, spec).data[..., 0]
    state = np.where(m == FREE, FREE_CELL, STATIC).astype(np.uint8)
    return TravGrid(spec, state)


def grid_graph(passable: np.ndarray) -> csr_matrix:
    """Sparse 8-connected adjacency over passable cells, weights in cell units."""
    h, w = passable.shape
    idx = np.arange(h * w).reshape(h, w)
    src, dst, cost = [], [], []
    for dr, dc, c in NEIGHBORS:
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        ok = passable[r0:r1, c0:c1] & passable[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        if dr and dc:
            ok &= passable[r0 + dr:r1 + dr, c0:c1] & passable[r0:r1, c0 + dc:c1 + dc]
        src.append(idx[r0:r1, c0:c1][ok])
        dst.append(idx[r0 + dr:r1 + dr, c0 + dc:c1 + dc][ok])
        cost.append(np.full(int(ok.sum()), c))
    src, dst, cost = np.concatenate(src), np.concatenate(dst), np.concatenate(cost)
    return csr_matrix((cost, (src, dst)), shape=(h * w, h * w))


def geodesic_field(trav: TravGrid, source: tuple[int, int], transient_blocks: bool = False) -> DistanceField:
    """Shortest-path distance in meters from ``source`` to every cell."""
    spec = trav.spec
    r, c = source
    if not (0 <= r < spec.rows and 0 <= c < spec.cols):
        raise IndexError(f"source cell {source} outside grid")
    passable = trav.passable(transient_blocks)
    if not passable[r, c]:
        return DistanceField(spec, np.full(spec.shape, np.inf))
    graph = grid_graph(passable)
    d = dijkstra(graph, directed=True, indices=r * spec.cols + c)
    d = d.reshape(spec.shape) * spec.cell
    d[~passable] = np.inf
    return DistanceField(spec, d)


def snap_to_traversable(trav: TravGrid, cell: tuple[int, int], transient_blocks: bool = False) -> tuple[int, int]:
    """Nearest passable cell by center distance; ties go to the lowest row-major index."""
    passable = trav.passable(transient_blocks)
    r, c = cell
    if 0 <= r < passable.shape[0] and 0 <= c < passable.shape[1] and passable[r, c]:
        return r, c
    rows, cols = np.nonzero(passable)
    if len(rows) == 0:
        raise NoFreeCellError("grid has no traversable cell")
    d2 = (rows - r) ** 2 + (cols - c) ** 2  # integers: exact ties
    k = int(np.argmin(d2))
    return int(rows[k]), int(cols[k])


def target_region(trav: TravGrid, target, r: float = 1.0) -> RegionMask:
    """Cells within geodesic radius ``r`` of the target point (inclusive)."""
    cell = world_to_cell(trav.spec, target)
    if cell is None:
        raise ValueError(f"target {tuple(target)} outside the grid")
    snapped = snap_to_traversable(trav, cell)
    field = geodesic_field(trav, snapped)
    return RegionMask(trav.spec, field.dist <= r + _EPS, snapped, snapped != cell)


def geodesic_between(trav: TravGrid, a: tuple[int, int], b: tuple[int, int]) -> float:
    return float(geodesic_field(trav, b).dist[a])
