"""
A generated scene and its four camera views
===========================================

"""

from pathlib import Path

import numpy as np

from bevnav.scenegen import generate_scene, generate_sample
from bevnav.sensor import CameraRig, intrinsics_from_fov, render_views, write_ppm

out = Path("demo_out")
out.mkdir(exist_ok=True)

# a scene is a flat floor with boxes, cylinders and a few pedestrians;
# the seed fixes every obstacle
scene = generate_scene(7)
for ob in scene.obstacles:
    print(ob.kind, ob.color, ob.center, "transient" if ob.transient else "")

# four cameras at 1.2 m, looking front, left, back and right
rig = CameraRig()
intr = intrinsics_from_fov(64, 64, 90.0)
depths, colors = render_views(scene, rig, intr)
print("depth range per view:", [(round(float(d.min()), 2), round(float(d.max()), 2)) for d in depths])

# side by side strip, front first
write_ppm(out / "views.ppm", np.concatenate(list(colors), axis=1))

# an instruction, its resolved target and whether it is hidden in every view
sample = generate_sample(3, scene)
if sample:
    print(" ".join(sample.instruction), "->", sample.target, "occluded" if sample.occluded else "visible")
    print(sample.stage1_text)
