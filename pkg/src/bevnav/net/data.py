"""Turn manifest samples into cached model inputs and supervision targets."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..bevgeom import cell_index, freespace_cue, geometry_pillars
from ..geodesy import TravGrid, target_region, traversability_from_scene
from ..labels import DIRECTIONS, RANGES, direction_bin, range_bin
from ..scene import Scene
from ..scenegen import REGION_RADIUS, encode_instruction
from ..sensor import CameraRig, intrinsics_from_fov, render_views, unproject_depth
from .model import ModelConfig, Observation


@dataclass
class Item:
    id: str
    obs: Observation
    mask: np.ndarray  # (rows, cols) bool target region
    direction: int
    range: int
    target: tuple[float, float]
    occluded: bool
    trav: TravGrid


def observe(scene: Scene, instruction, cfg: ModelConfig, rig: CameraRig = CameraRig()) -> Observation:
    spec = cfg.spec
    res = cfg.resolution
    intr = intrinsics_from_fov(res, res, 90.0)
    depths, colors = render_views(scene, rig, intr)
    pts_all, pix_all = [], []
    patch = 8
    t = res // patch
    token_pos = np.zeros((4, t * t, 3))
    token_null = np.ones((4, t * t), dtype=bool)
    for view in range(4):
        pts, pix = unproject_depth(depths[view], intr, rig.pose(view), rig.max_range)
        pts_all.append(pts)
        pix_all.append(pix + view * res * res)
        tok = (pix // res // patch) * t + (pix % res) // patch
        counts = np.bincount(tok, minlength=t * t)
        for axis in range(3):
            token_pos[view, :, axis] = np.bincount(tok, weights=pts[:, axis], minlength=t * t) / np.maximum(counts, 1)
        token_null[view] = counts == 0
    pts = np.concatenate(pts_all)
    pix = np.concatenate(pix_all)
    cells, inside = cell_index(spec, pts)
    geom = geometry_pillars(pts, spec, cfg.height_bins).data
    free = freespace_cue(depths, rig, intr, spec).data[..., 0]
    return Observation(
        colors=colors,
        pixel_index=pix[inside].astype(np.int32),
        pixel_cell=cells[inside].astype(np.int32),
        token_pos=token_pos.reshape(-1, 3).astype(np.float32),
        token_null=token_null.reshape(-1),
        geom=geom.astype(np.float16),
        free=free.astype(np.int8),
        instruction=np.asarray(encode_instruction(instruction), dtype=np.int64),
    )


def make_item(record: dict, root, cfg: ModelConfig, scene: Scene | None = None) -> Item:
    scene = scene or Scene.load(Path(root) / record["scene_file"])
    target = (float(record["target"][0]), float(record["target"][1]))
    trav = traversability_from_scene(scene, cfg.spec)
    region = target_region(trav, target, REGION_RADIUS)
    return Item(
        id=record["id"],
        obs=observe(scene, record["instruction"], cfg),
        mask=region.mask,
        direction=DIRECTIONS.index(direction_bin(target)),
        range=RANGES.index(range_bin(target)),
        target=target,
        occluded=bool(record["occluded"]),
        trav=trav,
    )


def load_items(records, root, cfg: ModelConfig) -> list[Item]:
    return [make_item(r, root, cfg) for r in records]
