"""Ego-centric BEV lattice and the non-learned geometric BEV inputs.

Row index follows agent-frame x (forward), column index follows y (left);
both are half-open: a cell covers ``[-bound + i*cell, -bound + (i+1)*cell)``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sensor import CameraIntrinsics, CameraRig, pixel_rays

FLOOR_Z = 0.15  # points at or below this height count as floor
DEFAULT_HEIGHT_BINS = (0.0, 0.15, 0.5, 1.0, 1.5, 2.0, 3.0)

FREE, UNKNOWN, OCCUPIED = 1.0, 0.0, -1.0


@dataclass(frozen=True)
class GridSpec:
    bound: float = 6.4
    cell: float = 0.1

    def __post_init__(self):
        n = 2 * self.bound / self.cell
        if self.cell <= 0 or self.bound <= 0 or abs(n - round(n)) > 1e-6 or round(n) < 1:
            raise ValueError(f"2*bound/cell must be a positive integer, got {n}")

    @property
    def rows(self) -> int:
        return int(round(2 * self.bound / self.cell))

    cols = rows

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.rows

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Agent-frame x and y of every cell center, each (rows, cols)."""
        c = -self.bound + (np.arange(self.rows) + 0.5) * self.cell
        return np.meshgrid(c, c, indexing="ij")


def world_to_cell(spec: GridSpec, point) -> tuple[int, int] | None:
    """Cell containing an agent-frame ``(x, y)``, or ``None`` outside the grid."""
    r = math.floor((point[0] + spec.bound) / spec.cell)
    c = math.floor((point[1] + spec.bound) / spec.cell)
    if 0 <= r < spec.rows and 0 <= c < spec.cols:
        return r, c
    return None


def world_to_cells(spec: GridSpec, x, y):
    """Vectorized ``world_to_cell``: rows, cols and an in-grid mask."""
    r = np.floor((np.asarray(x) + spec.bound) / spec.cell).astype(np.int64)
    c = np.floor((np.asarray(y) + spec.bound) / spec.cell).astype(np.int64)
    ok = (r >= 0) & (r < spec.rows) & (c >= 0) & (c < spec.cols)
    return r, c, ok


def cell_center(spec: GridSpec, row: int, col: int) -> tuple[float, float]:
    if not (0 <= row < spec.rows and 0 <= col < spec.cols):
        raise IndexError(f"cell ({row}, {col}) outside {spec.rows}x{spec.cols} grid")
    return -spec.bound + (row + 0.5) * spec.cell, -spec.bound + (col + 0.5) * spec.cell


@dataclass
class BevMap:
    """Channels-last feature or score map on a ``GridSpec``."""

    spec: GridSpec
    data: np.ndarray  # (rows, cols, channels)

    def __post_init__(self):
        if self.data.ndim == 2:
            self.data = self.data[..., None]
        if self.data.shape[:2] != self.spec.shape:
            raise ValueError(f"map shape {self.data.shape[:2]} does not match grid {self.spec.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def save(self, path) -> None:
        write_bevmap(path, self.data)

    @classmethod
    def load(cls, path, spec: GridSpec) -> "BevMap":
        return cls(spec, read_bevmap(path))


_MAGIC = b"BEVMAP01"


def write_bevmap(path, data: np.ndarray) -> None:
    """32-byte header (magic, rows, cols, channels as uint64 LE) + float32 LE payload."""
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[..., None]
    rows, cols, ch = data.shape
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<3Q", rows, cols, ch))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_bevmap(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a BEV map file")
    rows, cols, ch = struct.unpack("<3Q", raw[8:32])
    return np.frombuffer(raw[32:], dtype="<f4").reshape(rows, cols, ch).copy()


# feature maps -----------------------------------------------------------


def cell_index(spec: GridSpec, points: np.ndarray):
    """Flat cell index per point and the in-grid mask."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    r, c, ok = world_to_cells(spec, points[:, 0], points[:, 1])
    return np.where(ok, r * spec.cols + c, -1), ok


def pool_image_features(points: np.ndarray, features: np.ndarray, spec: GridSpec) -> BevMap:
    """Per-cell mean of point features; the last channel holds the hit count."""
    features = np.asarray(features, dtype=float)
    if len(points) != len(features):
        raise ValueError("points and features differ in length")
    n_cells = spec.rows * spec.cols
    dim = features.shape[1] if features.ndim == 2 else 0
    idx, ok = cell_index(spec, points)
    idx = idx[ok]
    counts = np.bincount(idx, minlength=n_cells).astype(float)
    sums = np.zeros((n_cells, dim))
    np.add.at(sums, idx, features[ok])
    mean = sums / np.maximum(counts, 1.0)[:, None]
    out = np.concatenate([mean, counts[:, None]], axis=1)
    return BevMap(spec, out.reshape(spec.rows, spec.cols, dim + 1))


def geometry_pillars(points: np.ndarray, spec: GridSpec, height_bins=DEFAULT_HEIGHT_BINS) -> BevMap:
    """Normalized per-cell histogram of point heights plus a max-height channel.

    ``height_bins`` are bin edges; heights below the first or above the last
    edge fall into the first or last bin.
    """
    edges = np.asarray(height_bins, dtype=float)
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("height bins must be strictly increasing with at least two edges")
    nb = len(edges) - 1
    n_cells = spec.rows * spec.cols
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    idx, ok = cell_index(spec, points)
    idx = idx[ok]
    z = points[ok, 2]
    b = np.clip(np.searchsorted(edges, z, side="right") - 1, 0, nb - 1)
    hist = np.bincount(idx * nb + b, minlength=n_cells * nb).reshape(n_cells, nb).astype(float)
    total = hist.sum(axis=1, keepdims=True)
    hist = hist / np.maximum(total, 1.0)
    zmax = np.full(n_cells, -np.inf)
    np.maximum.at(zmax, idx, z)
    zmax[~np.isfinite(zmax)] = 0.0
    out = np.concatenate([hist, zmax[:, None]], axis=1)
    return BevMap(spec, out.reshape(spec.rows, spec.cols, nb + 1))


# free-space cue ---------------------------------------------------------


def dda_cells(spec: GridSpec, start, end, max_steps: int | None = None):
    """Cells crossed by 2D segments, by integer grid traversal.

    ``start`` and ``end`` are (N, 2) agent-frame points. Returns flat cell
    indices, the segment id of each visit and whether the visit is the
    segment's final cell. Cells outside the grid are dropped.
    """
    start = np.atleast_2d(np.asarray(start, dtype=float))
    end = np.atleast_2d(np.asarray(end, dtype=float))
    n = spec.rows
    g0 = (start + spec.bound) / spec.cell
    g1 = (end + spec.bound) / spec.cell
    cell = np.floor(g0).astype(np.int64)
    last = np.floor(g1).astype(np.int64)
    d = g1 - g0
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(d != 0, 1.0 / np.abs(d), np.inf)
        nxt = np.where(step > 0, cell + 1 - g0, g0 - cell)
        t_max = np.where(d != 0, nxt * inv, np.inf)
    t_delta = inv
    if max_steps is None:
        max_steps = int(np.abs(last - cell).sum(axis=1).max(initial=0)) + 1
    active = np.ones(len(start), dtype=bool)
    started_in = np.all((cell >= 0) & (cell < n), axis=1)
    out_idx, out_seg, out_end = [], [], []
    seg = np.arange(len(start))
    for _ in range(max_steps + 1):
        if not active.any():
            break
        a = np.nonzero(active)[0]
        c = cell[a]
        inside = (c[:, 0] >= 0) & (c[:, 0] < n) & (c[:, 1] >= 0) & (c[:, 1] < n)
        is_end = np.all(c == last[a], axis=1)
        out_idx.append((c[:, 0] * n + c[:, 1])[inside])
        out_seg.append(seg[a][inside])
        out_end.append(is_end[inside])
        # the grid is convex: a segment that started inside never re-enters
        left_grid = ~inside & started_in[a]
        active[a[is_end | left_grid]] = False
        a = np.nonzero(active)[0]
        go_x = t_max[a, 0] < t_max[a, 1]
        ax, ay = a[go_x], a[~go_x]
        cell[ax, 0] += step[ax, 0]
        t_max[ax, 0] += t_delta[ax, 0]
        cell[ay, 1] += step[ay, 1]
        t_max[ay, 1] += t_delta[ay, 1]
    if not out_idx:
        e = np.zeros(0, dtype=np.int64)
        return e, e, np.zeros(0, dtype=bool)
    return np.concatenate(out_idx), np.concatenate(out_seg), np.concatenate(out_end)


def freespace_rays(depth: np.ndarray, intr: CameraIntrinsics, rig: CameraRig, view: int):
    """Ground-projected ray segments for one view.

    Returns (start, end, end_occupied, mark_free): segment endpoints (N, 2) in
    the agent frame, whether the end cell is an obstacle hit, and whether the
    traversed cells may be marked free. Only descending or level rays mark
    free space, and a sentinel pixel counts as a descending ray that reached
    ``max_range`` or the floor, whichever comes first.
    """
    pose = rig.pose(view)
    dirs = pixel_rays(intr, pose.yaw).reshape(-1, 3)
    depth = np.asarray(depth, dtype=float).reshape(-1)
    sentinel = depth >= rig.max_range
    dz = dirs[:, 2]
    t = depth.copy()
    with np.errstate(divide="ignore"):
        t_floor = np.where(dz < 0, pose.height / -np.where(dz < 0, dz, -1.0), np.inf)
    t = np.where(sentinel, np.minimum(rig.max_range, t_floor), t)
    hit = pose.height + t * dz
    end = dirs[:, :2] * t[:, None]
    occupied = ~sentinel & (hit > FLOOR_Z)
    mark_free = dz <= 0
    keep = (depth > 0) & (mark_free | occupied)
    start = np.zeros((int(keep.sum()), 2))
    return start, end[keep], occupied[keep], mark_free[keep]


def freespace_cue(depths, rig: CameraRig, intr: CameraIntrinsics, spec: GridSpec) -> BevMap:
    """Ternary observation map: 1 observed free, -1 observed occupied, 0 unknown.

    Occupied wins over free, so merging views is order independent.
    """
    n_cells = spec.rows * spec.cols
    free = np.zeros(n_cells, dtype=bool)
    occ = np.zeros(n_cells, dtype=bool)
    for view, depth in enumerate(depths):
        start, end, occupied, mark_free = freespace_rays(depth, intr, rig, view)
        if len(start) == 0:
            continue
        idx, seg, _ = dda_cells(spec, start, end)
        end_idx, end_in = cell_index(spec, np.column_stack([end, np.zeros(len(end))]))
        occ[end_idx[end_in & occupied]] = True
        hit_cell = occupied[seg] & (idx == end_idx[seg])
        free[idx[mark_free[seg] & ~hit_cell]] = True
    m = np.where(free, FREE, UNKNOWN)
    m[occ] = OCCUPIED
    return BevMap(spec, m.reshape(spec.rows, spec.cols, 1))
