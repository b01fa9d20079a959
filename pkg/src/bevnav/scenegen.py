"""Seeded synthetic scenes, instructions and the JSON-lines sample manifest.

Instructions come from a closed grammar::

    REL   <color> <kind>        REL in behind, in_front_of, left_of, right_of, near
    go_to <direction> <small|big>

Relational geometry: "behind X" lies on the ray from the agent through X,
past X; "in_front_of" is the opposite side; "left_of"/"right_of" rotate that
ray by +/-90 degrees about X; "near X" is the traversable cell closest to X.
"""
from __future__ import annotations

import json
import logging
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bevgeom import GridSpec, cell_center, world_to_cell
from .geodesy import AGENT_RADIUS, TravGrid, snap_to_traversable, traversability_from_scene
from .labels import D_RANGE, DIRECTIONS, admit_sample, direction_bin, occlusion_test, range_bin, stage1_answer
from .scene import Obstacle, Scene
from .sensor import CameraRig, intrinsics_from_fov, render_views

log = logging.getLogger(__name__)

RELATIONS = ("behind", "in_front_of", "left_of", "right_of", "near")
LANDMARK_COLORS = ("red", "green", "blue", "yellow")
VOCAB = (
    ("<pad>",) + RELATIONS + ("go_to",) + DIRECTIONS + ("small", "big")
    + LANDMARK_COLORS + ("gray",) + ("box", "cylinder")
)
TOKEN_ID = {t: i for i, t in enumerate(VOCAB)}

PEDESTRIAN_RADIUS = 0.3
PEDESTRIAN_HEIGHT = 1.7
RELATION_OFFSET = 0.75
SNAP_ZONE = 0.75
REGION_RADIUS = 1.0


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    floor_half_size: float = 8.0
    placement_half_size: float = 5.0
    agent_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    landmarks: tuple[int, int] = (2, 4)
    walls: tuple[int, int] = (0, 2)
    pedestrians: tuple[int, int] = (0, 2)
    box_half_extent: tuple[float, float] = (0.3, 0.6)
    cylinder_radius: tuple[float, float] = (0.25, 0.5)
    height: tuple[float, float] = (1.3, 2.2)
    wall_half_length: tuple[float, float] = (0.6, 1.8)
    agent_clearance: float = 1.2
    obstacle_gap: float = 0.6
    placement_tries: int = 40
    max_retries: int = 25

    def __post_init__(self):
        if self.floor_half_size < 6.4:
            raise ValueError("floor half-size must be at least 6.4 m")
        for name in ("landmarks", "walls", "pedestrians"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"bad {name} count range {lo, hi}")


@dataclass
class Sample:
    id: str
    scene: Scene
    instruction: tuple[str, ...]
    target: tuple[float, float]
    occluded: bool
    split: str = "train"
    scene_file: str = ""

    @property
    def direction(self) -> str:
        return direction_bin(self.target)

    @property
    def range(self) -> str:
        return range_bin(self.target)

    @property
    def stage1_text(self) -> str:
        return stage1_answer(self.direction, self.range)

    def record(self) -> dict:
        return {
            "id": self.id,
            "scene_file": self.scene_file,
            "instruction": list(self.instruction),
            "target": [self.target[0], self.target[1]],
            "occluded": self.occluded,
            "split": self.split,
            "dir": self.direction,
            "range": self.range,
            "stage1_text": self.stage1_text,
        }


@dataclass(frozen=True)
class Rejection:
    reason: str

    def __bool__(self):
        return False


# scenes -----------------------------------------------------------------


def _q(x: float, step: float = 0.1) -> float:
    return round(round(x / step) * step, 6)


def _gap_ok(ob: Obstacle, placed, gap: float) -> bool:
    """Conservative clearance check between footprints (bounding circles for cylinders)."""
    for other in placed:
        ax, ay = ob.center
        bx, by = other.center
        if ob.kind == "box" and other.kind == "box":
            dx = abs(ax - bx) - ob.extent[0] - other.extent[0]
            dy = abs(ay - by) - ob.extent[1] - other.extent[1]
            if max(dx, dy) < gap:
                return False
        else:
            ra = ob.extent[0] if ob.kind == "cylinder" else math.hypot(*ob.extent)
            rb = other.extent[0] if other.kind == "cylinder" else math.hypot(*other.extent)
            if math.hypot(ax - bx, ay - by) - ra - rb < gap:
                return False
    return True


def _place(rng, cfg: SceneConfig, make, placed, agent_xy) -> Obstacle | None:
    p = cfg.placement_half_size
    for _ in range(cfg.placement_tries):
        center = (_q(rng.uniform(-p, p)), _q(rng.uniform(-p, p)))
        ob = make(center)
        if ob.footprint_distance(*agent_xy) < cfg.agent_clearance:
            continue
        if _gap_ok(ob, placed, cfg.obstacle_gap):
            return ob
    return None


def _sectors_ok(scene: Scene, spec: GridSpec) -> bool:
    trav = traversability_from_scene(scene, spec)
    x, y = spec.centers()
    free = trav.state == 0
    free[spec.rows // 2 - 1:spec.rows // 2 + 1, spec.cols // 2 - 1:spec.cols // 2 + 1] = False
    theta = np.degrees(np.arctan2(y[free], x[free]))
    bins = np.floor(((theta + 22.5) % 360.0) / 45.0).astype(int) % 8
    return len(np.unique(bins)) == 8


def generate_scene(seed: int, config: SceneConfig = SceneConfig(), spec: GridSpec = GridSpec()) -> Scene:
    """Deterministic scene for ``seed``; raises GenerationError if the config is too dense."""
    rng = np.random.default_rng(seed)
    ax, ay, _ = config.agent_pose
    for _ in range(config.max_retries):
        placed: list[Obstacle] = []
        ok = True
        n_land = int(rng.integers(config.landmarks[0], config.landmarks[1] + 1))
        perm = rng.permutation(4)
        for i in range(n_land):
            color = LANDMARK_COLORS[perm[i % 4]] if i < 8 else "gray"
            kind = "box" if rng.random() < 0.5 else "cylinder"
            h = _q(rng.uniform(*config.height))
            if kind == "box":
                ext = (_q(rng.uniform(*config.box_half_extent)), _q(rng.uniform(*config.box_half_extent)))
            else:
                ext = (_q(rng.uniform(*config.cylinder_radius), 0.05),)
            # a reused color takes the other kind so (color, kind) stays unique
            if 4 <= i < 8:
                kind = "cylinder" if placed[i - 4].kind == "box" else "box"
                ext = (ext[0], ext[0]) if kind == "box" else (ext[0],)
            ob = _place(rng, config, lambda c: Obstacle(kind, c, ext, h, color), placed, (ax, ay))
            if ob is None:
                ok = False
                break
            placed.append(ob)
        n_walls = int(rng.integers(config.walls[0], config.walls[1] + 1))
        for _ in range(n_walls if ok else 0):
            length = _q(rng.uniform(*config.wall_half_length))
            ext = (0.1, length) if rng.random() < 0.5 else (length, 0.1)
            h = _q(rng.uniform(1.5, 2.5))
            ob = _place(rng, config, lambda c: Obstacle("box", c, ext, h, "gray"), placed, (ax, ay))
            if ob is None:
                ok = False
                break
            placed.append(ob)
        n_ped = int(rng.integers(config.pedestrians[0], config.pedestrians[1] + 1))
        for _ in range(n_ped if ok else 0):
            ob = _place(
                rng, config,
                lambda c: Obstacle("cylinder", c, (PEDESTRIAN_RADIUS,), PEDESTRIAN_HEIGHT, "gray", True),
                placed, (ax, ay),
            )
            if ob is None:
                ok = False
                break
            placed.append(ob)
        if not ok:
            continue
        scene = Scene(tuple(placed), config.floor_half_size, tuple(config.agent_pose), int(seed))
        if _sectors_ok(scene, spec):
            return scene
    raise GenerationError(f"scene generation failed after {config.max_retries} retries (seed {seed})")


# instructions -----------------------------------------------------------


def encode_instruction(tokens) -> list[int]:
    try:
        return [TOKEN_ID[t] for t in tokens]
    except KeyError as e:
        raise ValueError(f"token {e.args[0]!r} not in vocabulary") from None


def check_instruction(tokens) -> None:
    tokens = list(tokens)
    if len(tokens) != 3:
        raise ValueError(f"instruction must have 3 tokens, got {tokens}")
    if tokens[0] == "go_to":
        if tokens[1] not in DIRECTIONS or tokens[2] not in ("small", "big"):
            raise ValueError(f"bad ego instruction {tokens}")
    elif tokens[0] in RELATIONS:
        if tokens[1] not in LANDMARK_COLORS + ("gray",) or tokens[2] not in ("box", "cylinder"):
            raise ValueError(f"bad relational instruction {tokens}")
    else:
        raise ValueError(f"unknown instruction head {tokens[0]!r}")


def _snap_point(trav: TravGrid, p, zone: float):
    spec = trav.spec
    cell = world_to_cell(spec, p)
    if cell is None:
        return tuple(p)  # left for the bound filter to reject
    free = TravGrid(spec, np.where(trav.state == 0, 0, 1).astype(np.uint8))
    try:
        snapped = snap_to_traversable(free, cell)
    except ValueError:
        return None
    c = cell_center(spec, *snapped)
    if math.hypot(c[0] - p[0], c[1] - p[1]) > zone:
        return None
    return c


def resolve_instruction_target(
    scene: Scene,
    instruction,
    spec: GridSpec = GridSpec(),
    trav: TravGrid | None = None,
    d_range: float = D_RANGE,
):
    """Agent-frame target for an instruction, or ``None`` if unresolvable.

    Points beyond the grid are returned unsnapped so callers can reject them
    as out of bound.
    """
    check_instruction(instruction)
    head, a, b = instruction
    trav = trav if trav is not None else traversability_from_scene(scene, spec)
    if head == "go_to":
        ang = math.radians(45.0 * DIRECTIONS.index(a))
        dist = d_range / 2 if b == "small" else 1.5 * d_range
        return _snap_point(trav, (dist * math.cos(ang), dist * math.sin(ang)), SNAP_ZONE)
    matches = scene.find(a, b)
    if len(matches) != 1:
        return None
    ob = matches[0]
    cx, cy = (float(v) for v in scene.world_to_agent(*ob.center))
    if head == "near":
        cell = world_to_cell(spec, (cx, cy))
        if cell is None:
            return None
        free = TravGrid(spec, np.where(trav.state == 0, 0, 1).astype(np.uint8))
        return cell_center(spec, *snap_to_traversable(free, cell))
    norm = math.hypot(cx, cy)
    ux, uy = cx / norm, cy / norm
    dx, dy = {
        "behind": (ux, uy),
        "in_front_of": (-ux, -uy),
        "left_of": (-uy, ux),
        "right_of": (uy, -ux),
    }[head]
    reach = ob.boundary_distance(scene.rotate_to_world(dx, dy)) + RELATION_OFFSET
    return _snap_point(trav, (cx + reach * dx, cy + reach * dy), SNAP_ZONE)


# samples ----------------------------------------------------------------


@dataclass(frozen=True)
class DatasetConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    ego_fraction: float = 0.4
    occlusion_target: float = 0.35
    occlusion_tol: float = 0.10
    val_fraction: float = 0.1
    max_tries: int = 30
    strict: bool = False
    resolution: int = 64
    fov: float = 90.0


def draw_instruction(rng, scene: Scene, ego_fraction: float):
    lands = scene.landmarks()
    if not lands or rng.random() < ego_fraction:
        return ("go_to", DIRECTIONS[int(rng.integers(8))], ("small", "big")[int(rng.integers(2))])
    ob = lands[int(rng.integers(len(lands)))]
    return (RELATIONS[int(rng.integers(len(RELATIONS)))], ob.color, ob.kind)


def generate_sample(
    seed: int,
    scene: Scene,
    config: DatasetConfig = DatasetConfig(),
    spec: GridSpec = GridSpec(),
    instruction=None,
    views=None,
    sample_id: str | None = None,
) -> Sample | Rejection:
    rng = np.random.default_rng(seed)
    if instruction is None:
        instruction = draw_instruction(rng, scene, config.ego_fraction)
    trav = traversability_from_scene(scene, spec)
    target = resolve_instruction_target(scene, instruction, spec, trav)
    if target is None:
        return Rejection("unresolvable")
    verdict = admit_sample(target, trav, spec)
    if not verdict:
        return Rejection(verdict.reason)
    wx, wy = scene.agent_to_world(*target)
    for ob in scene.obstacles:
        if ob.transient and float(ob.footprint_distance(wx, wy)) <= REGION_RADIUS:
            return Rejection("pedestrian-near-target")
    rig = CameraRig()
    intr = intrinsics_from_fov(config.resolution, config.resolution, config.fov)
    if views is None:
        views = render_views(scene, rig, intr)[0]
    occluded = occlusion_test(target, views, rig, intr)
    target = (round(float(target[0]), 6), round(float(target[1]), 6))
    return Sample(sample_id or f"{scene.seed}-{seed}", scene, tuple(instruction), target, bool(occluded))


def _slot_seeds(seed: int, slot: int, attempt: int) -> tuple[int, int]:
    ss = np.random.SeedSequence([seed, slot, attempt])
    a, b = ss.generate_state(2)
    return int(a), int(b)


def generate_dataset(config: DatasetConfig, count: int, out_manifest, seed: int = 0, spec: GridSpec = GridSpec()) -> dict:
    """Write scenes and a JSON-lines manifest; returns a summary.

    Samples are steered toward ``config.occlusion_target`` by resampling each
    slot until its occlusion flag matches what the running fraction needs.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    out_manifest = Path(out_manifest)
    out_dir = out_manifest.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    n_val = int(round(count * config.val_fraction)) if count > 1 else 0
    n_train = count - n_val
    tmp = Path(tempfile.mkdtemp(prefix=".gen-", dir=out_dir))
    try:
        (tmp / "scenes").mkdir()
        records = []
        occ = 0
        for i in range(count):
            want = occ < config.occlusion_target * (i + 1)
            fallback = None
            chosen = None
            for attempt in range(config.max_tries):
                scene_seed, sample_seed = _slot_seeds(seed, i, attempt)
                try:
                    scene = generate_scene(scene_seed, config.scene, spec)
                except GenerationError:
                    continue
                s = generate_sample(sample_seed, scene, config, spec, sample_id=f"s{i:06d}")
                if not s:
                    continue
                if s.occluded == want:
                    chosen = s
                    break
                fallback = fallback or s
            chosen = chosen or fallback
            if chosen is None:
                raise GenerationError(f"no admissible sample for slot {i} after {config.max_tries} tries")
            chosen.split = "train" if i < n_train else "val"
            chosen.scene_file = f"scenes/{chosen.id}.json"
            chosen.scene.save(tmp / chosen.scene_file)
            occ += chosen.occluded
            records.append(chosen.record())
        with open(tmp / "manifest.jsonl", "w") as f:
            for r in records:
                f.write(json.dumps(r, sort_keys=True) + "\n")
        frac = occ / count
        warnings = []
        if abs(frac - config.occlusion_target) > config.occlusion_tol:
            msg = f"occluded fraction {frac:.3f} outside {config.occlusion_target} +/- {config.occlusion_tol}"
            if config.strict:
                raise GenerationError(msg)
            log.warning(msg)
            warnings.append(msg)
        scenes_dir = out_dir / "scenes"
        made_dir = not scenes_dir.exists()
        scenes_dir.mkdir(exist_ok=True)
        try:
            for p in sorted((tmp / "scenes").iterdir()):
                os.replace(p, scenes_dir / p.name)
            os.replace(tmp / "manifest.jsonl", out_manifest)
        except OSError:
            if made_dir:
                shutil.rmtree(scenes_dir, ignore_errors=True)
            raise
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    splits = {s: sum(r["split"] == s for r in records) for s in ("train", "val")}
    occ_split = {
        s: (sum(r["occluded"] for r in records if r["split"] == s) / splits[s] if splits[s] else 0.0)
        for s in ("train", "val")
    }
    return {"count": count, "splits": splits, "occluded_fraction": frac, "occluded_by_split": occ_split, "warnings": warnings}


def read_manifest(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def load_sample(record: dict, root) -> Sample:
    scene = Scene.load(Path(root) / record["scene_file"])
    return Sample(
        record["id"], scene, tuple(record["instruction"]), tuple(record["target"]),
        bool(record["occluded"]), record["split"], record["scene_file"],
    )
