"""
Geodesic target regions on the BEV grid
=======================================

"""

from pathlib import Path

import numpy as np

from bevnav.bevgeom import GridSpec, world_to_cell
from bevnav.geodesy import geodesic_field, target_region, traversability_from_scene
from bevnav.scene import Obstacle, Scene
from bevnav.viz import overlay, save_image

out = Path("demo_out")
out.mkdir(exist_ok=True)

# a wall 2 m ahead with a gap on the left
scene = Scene((
    Obstacle("box", (2.0, -1.0), (0.1, 2.0), 2.0, "gray"),
    Obstacle("box", (2.0, 3.5), (0.1, 1.5), 2.0, "gray"),
))
spec = GridSpec()
trav = traversability_from_scene(scene, spec)

# the target sits right behind the wall; straight-line distance is small,
# the walking distance goes around through the gap
target = (2.6, -0.5)
field = geodesic_field(trav, world_to_cell(spec, target)).dist
agent = world_to_cell(spec, (0.0, 0.0))
print("euclidean to agent:", round(float(np.hypot(*target)), 2), "m")
print("geodesic to agent: ", round(float(field[agent]), 2), "m")

# supervision region: every cell within 1 m of walking distance
region = target_region(trav, target, 1.0)
print("region cells:", int(region.mask.sum()), "snapped:", region.snapped)

score = np.exp(-np.nan_to_num(field, posinf=50.0))
save_image(out / "region.png", overlay(trav, score, region.mask, marker=region.source, threshold=0.3))
