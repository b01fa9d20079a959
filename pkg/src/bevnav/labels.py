"""Supervision signals: coarse direction/range answers, admission filters, occlusion flag."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .bevgeom import GridSpec, world_to_cell
from .sensor import CameraIntrinsics, CameraRig, project_point

DIRECTIONS = ("Front", "FrontLeft", "Left", "BackLeft", "Back", "BackRight", "Right", "FrontRight")
RANGES = ("small", "big")
D_RANGE = 2.4
OCCLUSION_MARGIN = 0.1
PROBE_HEIGHT = 0.3
MAX_HEIGHT_CHANGE = 0.5

_ANSWER = re.compile(r"Move towards the (\w+) region with a (small|big) step\.")


def direction_bin(p) -> str:
    """45-degree sector of an agent-frame point; Front covers [-22.5, 22.5) degrees."""
    x, y = float(p[0]), float(p[1])
    if x == 0.0 and y == 0.0:
        raise ValueError("direction of the origin is undefined")
    theta = math.degrees(math.atan2(y, x))
    k = int(math.floor(((theta + 22.5) % 360.0) / 45.0)) % 8
    return DIRECTIONS[k]


def range_bin(p, d_range: float = D_RANGE) -> str:
    return "small" if math.hypot(p[0], p[1]) < d_range else "big"


def stage1_answer(direction: str, rng: str) -> str:
    if direction not in DIRECTIONS or rng not in RANGES:
        raise ValueError(f"bad label ({direction!r}, {rng!r})")
    return f"Move towards the {direction} region with a {rng} step."


def parse_stage1_answer(text: str) -> tuple[str, str]:
    m = _ANSWER.fullmatch(text)
    if m is None or m.group(1) not in DIRECTIONS:
        raise ValueError(f"not a stage-1 answer: {text!r}")
    return m.group(1), m.group(2)


def occlusion_test(
    target,
    depths,
    rig: CameraRig,
    intr: CameraIntrinsics,
    margin: float = OCCLUSION_MARGIN,
    probe_height: float = PROBE_HEIGHT,
) -> bool:
    """True when no view shows the target.

    A view shows the target if the lifted target projects into the image and
    its z-depth is at most the rendered depth at that pixel plus ``margin``.
    """
    point = (float(target[0]), float(target[1]), probe_height)
    for view, depth in enumerate(depths):
        proj = project_point(point, intr, rig.pose(view))
        if not proj.ok:
            continue
        rendered = depth[int(proj.v), int(proj.u)]
        if proj.depth <= rendered + margin:
            return False
    return True


@dataclass(frozen=True)
class Admission:
    admitted: bool
    reason: str | None = None

    def __bool__(self):
        return self.admitted


def admit_sample(target, trav, spec: GridSpec | None = None, floor_height=None) -> Admission:
    """Filter a candidate target: inside the local bound, traversable, no big height change.

    ``floor_height`` maps an agent-frame point to floor height; flat floors
    (the default) always pass the height check.
    """
    spec = spec or trav.spec
    if not (abs(target[0]) < spec.bound and abs(target[1]) < spec.bound):
        return Admission(False, "out-of-bound")
    cell = world_to_cell(spec, target)
    if cell is None:
        return Admission(False, "out-of-bound")
    if not trav.passable()[cell] or trav.state[cell] != 0:
        return Admission(False, "non-traversable")
    dh = 0.0 if floor_height is None else abs(floor_height(target) - floor_height((0.0, 0.0)))
    if dh > MAX_HEIGHT_CHANGE:
        return Admission(False, "height-change")
    return Admission(True)
