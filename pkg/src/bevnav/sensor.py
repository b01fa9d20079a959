"""Surround-view RGB-D rendering by analytic raycasting, plus pinhole projection.

Depth is z-depth: distance along the camera's forward axis. Pixel ``(u, v)``
has its center at ``(u + 0.5, v + 0.5)``; ``u`` grows to the right and ``v``
grows downward.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .scene import BACKGROUND_RGB, COLOR_RGB, FLOOR_RGB, Scene

CAMERA_HEIGHT = 1.2
MAX_RANGE = 10.0


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float


def intrinsics_from_fov(width: int, height: int, fov: float = 90.0) -> CameraIntrinsics:
    """Square-pixel intrinsics for a horizontal and vertical field of view in degrees."""
    if not 0.0 < fov < 180.0:
        raise ValueError(f"field of view must be in (0, 180) degrees, got {fov}")
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    half = math.tan(math.radians(fov) / 2.0)
    return CameraIntrinsics(width, height, (width / 2) / half, (height / 2) / half, width / 2, height / 2)


@dataclass(frozen=True)
class CameraRig:
    """Four cameras at the agent origin, facing the cardinal yaws of the agent frame."""

    height: float = CAMERA_HEIGHT
    yaws_deg: tuple[float, float, float, float] = (0.0, 90.0, 180.0, 270.0)
    max_range: float = MAX_RANGE

    def __post_init__(self):
        if tuple(self.yaws_deg) != (0.0, 90.0, 180.0, 270.0):
            raise ValueError("rig yaws must be the four cardinal directions")

    def pose(self, view: int) -> "ViewPose":
        if view not in (0, 1, 2, 3):
            raise ValueError(f"view index must be 0..3, got {view}")
        return ViewPose(math.radians(self.yaws_deg[view]), self.height)


class ViewPose(NamedTuple):
    yaw: float
    height: float


class Projection(NamedTuple):
    status: str  # "ok", "behind" or "outside"
    u: float = math.nan
    v: float = math.nan
    depth: float = math.nan

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _camera_axes(yaw: float):
    """Forward, left and up unit vectors of a camera in its parent frame."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([c, s, 0.0]), np.array([-s, c, 0.0]), np.array([0.0, 0.0, 1.0])


def pixel_rays(intr: CameraIntrinsics, yaw: float, u=None, v=None) -> np.ndarray:
    """Ray directions (..., 3) with unit forward component, in the parent frame.

    Without ``u``/``v`` the rays go through every pixel center, shape (H, W, 3).
    """
    if u is None:
        v, u = np.meshgrid(np.arange(intr.height) + 0.5, np.arange(intr.width) + 0.5, indexing="ij")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    right = (u - intr.cx) / intr.fx
    down = (v - intr.cy) / intr.fy
    fwd, left, up = _camera_axes(yaw)
    return fwd + (-right)[..., None] * left + (-down)[..., None] * up


# raycasting -------------------------------------------------------------


def _hit_box(o, d, ob):
    cx, cy = ob.center
    hx, hy = ob.extent
    lo = np.array([cx - hx, cy - hy, 0.0])
    hi = np.array([cx + hx, cy + hy, ob.height])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
    # a zero direction component: inside the slab -> unconstrained, outside -> miss
    zero = d == 0.0
    inside = (o >= lo) & (o <= hi)
    tmin = np.where(zero, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(zero, np.where(inside, np.inf, -np.inf), tmax)
    t_enter = tmin.max(axis=-1)
    t_exit = tmax.min(axis=-1)
    hit = (t_enter <= t_exit) & (t_enter > 0.0)
    return np.where(hit, t_enter, np.inf)


def _hit_cylinder(o, d, ob):
    cx, cy = ob.center
    r = ob.extent[0]
    ox, oy = o[0] - cx, o[1] - cy
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    a = dx * dx + dy * dy
    b = 2.0 * (ox * dx + oy * dy)
    c = ox * ox + oy * oy - r * r
    disc = b * b - 4.0 * a * c
    t = np.full(a.shape, np.inf)
    ok = (a > 0) & (disc >= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t_side = np.where(ok, (-b - sq) / (2.0 * np.where(ok, a, 1.0)), np.inf)
    z = o[2] + t_side * dz
    side = ok & (t_side > 0) & (z >= 0.0) & (z <= ob.height)
    t = np.where(side, t_side, t)
    # top cap, only reachable from above
    if o[2] > ob.height:
        with np.errstate(divide="ignore", invalid="ignore"):
            t_cap = (ob.height - o[2]) / dz
        px = ox + t_cap * dx
        py = oy + t_cap * dy
        cap = (dz < 0) & (t_cap > 0) & (px * px + py * py <= r * r)
        t = np.where(cap & (t_cap < t), t_cap, t)
    return t


def _hit_floor(o, d, half):
    dz = d[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dz < 0, -o[2] / dz, np.inf)
    px = o[0] + t * d[..., 0]
    py = o[1] + t * d[..., 1]
    on = np.isfinite(t) & (np.abs(px) <= half) & (np.abs(py) <= half)
    return np.where(on, t, np.inf)


def raycast(scene: Scene, origin, dirs, max_range: float = MAX_RANGE):
    """Nearest hit parameter along ``dirs`` (forward-normalized) and a hit id per ray.

    Hit id is -1 for floor, -2 for a miss, otherwise the index into the
    canonically sorted obstacle list returned alongside.
    """
    origin = np.asarray(origin, dtype=float)
    obstacles = sorted(scene.obstacles, key=lambda ob: ob.sort_key())
    best = _hit_floor(origin, dirs, scene.floor_half_size)
    ids = np.where(np.isfinite(best), -1, -2)
    for k, ob in enumerate(obstacles):
        t = _hit_box(origin, dirs, ob) if ob.kind == "box" else _hit_cylinder(origin, dirs, ob)
        closer = t < best
        best = np.where(closer, t, best)
        ids = np.where(closer, k, ids)
    miss = best > max_range
    best = np.where(miss, max_range, best)
    ids = np.where(miss, -2, ids)
    return best, ids, obstacles


def render_view(scene: Scene, rig: CameraRig, view: int, intr: CameraIntrinsics):
    """Render one view: z-depth image (H, W) float64 and color image (H, W, 3) uint8.

    Pixels whose ray hits nothing within ``rig.max_range`` get depth ``max_range``.
    """
    pose = rig.pose(view)
    ax, ay, ayaw = scene.agent_pose
    dirs = pixel_rays(intr, ayaw + pose.yaw)
    origin = (ax, ay, pose.height)
    depth, ids, obstacles = raycast(scene, origin, dirs, rig.max_range)
    palette = np.array([BACKGROUND_RGB, FLOOR_RGB] + [COLOR_RGB[o.color] for o in obstacles], dtype=np.uint8)
    color = palette[ids + 2]
    return depth, color


def render_views(scene: Scene, rig: CameraRig, intr: CameraIntrinsics):
    """All four views stacked: depth (4, H, W), color (4, H, W, 3)."""
    out = [render_view(scene, rig, k, intr) for k in range(4)]
    return np.stack([d for d, _ in out]), np.stack([c for _, c in out])


# projection -------------------------------------------------------------


def unproject_pixels(u, v, depth, intr: CameraIntrinsics, pose: ViewPose) -> np.ndarray:
    """Agent-frame points for continuous pixel coordinates and z-depths."""
    rays = pixel_rays(intr, pose.yaw, u, v)
    pts = np.asarray(depth, dtype=float)[..., None] * rays
    pts[..., 2] += pose.height
    return pts


def unproject_depth(depth: np.ndarray, intr: CameraIntrinsics, pose: ViewPose, max_range: float = MAX_RANGE):
    """Points (N, 3) for every non-sentinel pixel, plus their flat pixel indices."""
    depth = np.asarray(depth, dtype=float)
    valid = (depth > 0) & (depth < max_range)
    vv, uu = np.nonzero(valid)
    pts = unproject_pixels(uu + 0.5, vv + 0.5, depth[vv, uu], intr, pose)
    return pts, vv * intr.width + uu


def project_point(point, intr: CameraIntrinsics, pose: ViewPose) -> Projection:
    """Pixel coordinates and z-depth of an agent-frame point, or why it is not visible."""
    p = np.asarray(point, dtype=float) - np.array([0.0, 0.0, pose.height])
    fwd, left, up = _camera_axes(pose.yaw)
    z = float(p @ fwd)
    if z <= 1e-9:
        return Projection("behind")
    u = intr.cx + intr.fx * float(-(p @ left)) / z
    v = intr.cy + intr.fy * float(-(p @ up)) / z
    if not (0.0 <= u < intr.width and 0.0 <= v < intr.height):
        return Projection("outside", u, v, z)
    return Projection("ok", u, v, z)


# file output ------------------------------------------------------------


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError("not a binary PPM file")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=m.end()).reshape(h, w, 3)


def write_depth(path, depth: np.ndarray, view: int, max_range: float = MAX_RANGE) -> None:
    """Little-endian float32 raw depth plus a ``.json`` sidecar next to it."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(depth, dtype="<f4").tobytes())
    meta = {"width": int(depth.shape[1]), "height": int(depth.shape[0]), "view": int(view), "max_range": max_range}
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def read_depth(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    return np.frombuffer(path.read_bytes(), dtype="<f4").reshape(meta["height"], meta["width"])
