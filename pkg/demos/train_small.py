"""
Training the affordance model on a handful of samples
=====================================================

A few minutes on one CPU core. The model memorizes 16 samples; the point is
to watch both training stages run and to look at a predicted heatmap.
"""

import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from bevnav.evaluation import argmax_target
from bevnav.net.data import load_items
from bevnav.net.model import BeaconNet, ModelConfig
from bevnav.net.train import Schedule, save_checkpoint, score_items, train
from bevnav.scenegen import DatasetConfig, generate_dataset, read_manifest
from bevnav.viz import overlay, save_image

threadpool_limits(1)
out = Path("demo_out/train")
generate_dataset(DatasetConfig(), 16, out / "manifest.jsonl", seed=1)
cfg = ModelConfig()
items = load_items(read_manifest(out / "manifest.jsonl"), out, cfg)

# stage 1 fits direction and range heads, stage 2 the BEV region loss
model = BeaconNet(cfg, seed=0)
t0 = time.time()
curve = train(model, items, Schedule(stage_a_steps=20, stage_b_steps=120, batch_size=4),
              on_step=lambda s, st, l: s % 20 == 0 and print(f"step {s:4d} stage {st} loss {l:.4f}"))
print(f"trained in {time.time() - t0:.0f}s")
save_checkpoint(out / "model.ckpt", model, stage=2)

print(score_items(model, items).table())

# heatmap of the first sample: warm cells are likely targets,
# the outline is the supervision region, the cross is the argmax
item = items[0]
score = model.predict(item.obs).data[..., 0]
cell, point = argmax_target(score, cfg.spec)
print("predicted", point, "annotated", item.target)
save_image(out / "heatmap.png", overlay(item.trav, score, item.mask, marker=cell))
