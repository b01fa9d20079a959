"""Scene primitives shared by the generator, the renderer and the oracle grids.

World frame: x, y on the floor, z up. The agent frame has x forward and y to
the left of the agent; the two are related by the agent pose ``(x, y, yaw)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("box", "cylinder")
COLORS = ("red", "green", "blue", "yellow", "gray")

COLOR_RGB = {
    "red": (220, 40, 40),
    "green": (40, 190, 60),
    "blue": (40, 80, 220),
    "yellow": (230, 210, 40),
    "gray": (110, 110, 110),
}
FLOOR_RGB = (190, 170, 130)
BACKGROUND_RGB = (0, 0, 0)


@dataclass(frozen=True)
class Obstacle:
    """An axis-aligned box or a vertical cylinder standing on the floor.

    ``extent`` holds the two half-extents of a box, or ``(radius,)`` for a
    cylinder. ``transient`` marks pedestrian stand-ins.
    """

    kind: str
    center: tuple[float, float]
    extent: tuple[float, ...]
    height: float
    color: str
    transient: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")
        if self.color not in COLORS:
            raise ValueError(f"unknown color {self.color!r}")
        if self.height <= 0:
            raise ValueError("obstacle height must be positive")
        want = 2 if self.kind == "box" else 1
        if len(self.extent) != want or min(self.extent) <= 0:
            raise ValueError(f"{self.kind} needs {want} positive extent value(s)")
        if self.transient and self.kind != "cylinder":
            raise ValueError("transient obstacles must be cylinders")

    @property
    def radius(self) -> float:
        return self.extent[0]

    def footprint_distance(self, x, y):
        """Euclidean distance from world points to the footprint (0 inside)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        cx, cy = self.center
        if self.kind == "cylinder":
            return np.maximum(np.hypot(x - cx, y - cy) - self.extent[0], 0.0)
        hx, hy = self.extent
        dx = np.maximum(np.abs(x - cx) - hx, 0.0)
        dy = np.maximum(np.abs(y - cy) - hy, 0.0)
        return np.hypot(dx, dy)

    def contains(self, x, y, inflate: float = 0.0):
        """Closed footprint test, optionally inflated by ``inflate`` meters."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        cx, cy = self.center
        if self.kind == "cylinder":
            return np.hypot(x - cx, y - cy) <= self.extent[0] + inflate
        hx, hy = self.extent
        if inflate == 0.0:
            return (np.abs(x - cx) <= hx) & (np.abs(y - cy) <= hy)
        return self.footprint_distance(x, y) <= inflate

    def boundary_distance(self, direction) -> float:
        """Distance from the center to the footprint boundary along a unit world direction."""
        if self.kind == "cylinder":
            return self.extent[0]
        dx, dy = abs(direction[0]), abs(direction[1])
        hx, hy = self.extent
        tx = hx / dx if dx > 1e-12 else math.inf
        ty = hy / dy if dy > 1e-12 else math.inf
        return min(tx, ty)

    def sort_key(self):
        return (self.kind, self.center, self.extent, self.height, self.color, self.transient)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "center": list(self.center),
            "extent": list(self.extent),
            "height": self.height,
            "color": self.color,
            "transient": self.transient,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Obstacle":
        return cls(
            kind=d["kind"],
            center=(float(d["center"][0]), float(d["center"][1])),
            extent=tuple(float(v) for v in d["extent"]),
            height=float(d["height"]),
            color=d["color"],
            transient=bool(d.get("transient", False)),
        )


@dataclass(frozen=True)
class Scene:
    obstacles: tuple[Obstacle, ...] = ()
    floor_half_size: float = 8.0
    agent_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def landmarks(self):
        """Static, colored obstacles that instructions may refer to."""
        return [o for o in self.obstacles if not o.transient and o.color != "gray"]

    def find(self, color: str, kind: str):
        return [o for o in self.landmarks() if o.color == color and o.kind == kind]

    # frame conversion ---------------------------------------------------

    def agent_to_world(self, x, y):
        ax, ay, yaw = self.agent_pose
        c, s = math.cos(yaw), math.sin(yaw)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return ax + c * x - s * y, ay + s * x + c * y

    def world_to_agent(self, x, y):
        ax, ay, yaw = self.agent_pose
        c, s = math.cos(yaw), math.sin(yaw)
        dx = np.asarray(x, dtype=float) - ax
        dy = np.asarray(y, dtype=float) - ay
        return c * dx + s * dy, -s * dx + c * dy

    def rotate_to_world(self, dx, dy):
        yaw = self.agent_pose[2]
        c, s = math.cos(yaw), math.sin(yaw)
        return c * dx - s * dy, s * dx + c * dy

    # serialization ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "floor_half_size": self.floor_half_size,
            "agent_pose": list(self.agent_pose),
            "seed": self.seed,
            "obstacles": [o.to_json() for o in self.obstacles],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Scene":
        return cls(
            obstacles=tuple(Obstacle.from_json(o) for o in d.get("obstacles", [])),
            floor_half_size=float(d["floor_half_size"]),
            agent_pose=tuple(float(v) for v in d["agent_pose"]),
            seed=int(d.get("seed", 0)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_json(json.loads(Path(path).read_text()))
