"""Fast sanity checks over the whole pipeline, run by ``bevnav selftest``."""
from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np


def _render_box():
    from .scene import Obstacle, Scene
    from .sensor import CameraRig, intrinsics_from_fov, render_view

    scene = Scene([Obstacle("box", (2.0, 0.0), (0.5, 0.5), 2.0, "red")])
    depth, _ = render_view(scene, CameraRig(), 0, intrinsics_from_fov(64, 64, 90.0))
    assert abs(depth[32, 32] - 1.5) < 1e-6, depth[32, 32]


def _geodesic_wall():
    from .bevgeom import GridSpec
    from .geodesy import STATIC, TravGrid, geodesic_field

    spec = GridSpec(0.8, 0.1)
    state = np.zeros(spec.shape, dtype=np.int8)
    state[8, :15] = STATIC
    d = geodesic_field(TravGrid(spec, state), (7, 0)).dist
    assert d[9, 0] > 1.0 and math.isinf(d[8, 0])


def _bce_zero_logits():
    from .net import autograd as ag

    x = ag.Tensor(np.zeros((1, 1, 4, 4)), requires_grad=True)
    y = np.zeros((1, 1, 4, 4))
    y[0, 0, 1, 2] = 1
    loss = ag.bce_with_logits(x, y)
    loss.backward()
    assert abs(float(loss.data) - math.log(2)) < 1e-9
    assert np.allclose(x.grad, (0.5 - y) / y.size)


def _pipeline():
    from .evaluation import evaluate_manifest
    from .net.data import make_item
    from .net.model import ModelConfig, BeaconNet
    from .scenegen import DatasetConfig, generate_dataset, read_manifest

    with tempfile.TemporaryDirectory() as tmp:
        manifest = Path(tmp) / "manifest.jsonl"
        generate_dataset(DatasetConfig(), 4, manifest, seed=1)
        recs = read_manifest(manifest)
        report = evaluate_manifest(recs, {r["id"]: tuple(r["target"]) for r in recs}, tmp)
        assert report.full.geo_bar == 1.0 and report.full.sir == 0.0
        cfg = ModelConfig()
        out = BeaconNet(cfg, 0).predict(make_item(recs[0], tmp, cfg).obs).data
        assert out.shape[:2] == cfg.spec.shape and np.all((out > 0) & (out < 1))


CHECKS = [
    ("renderer box depth", _render_box),
    ("geodesic detour around a wall", _geodesic_wall),
    ("BCE at zero logits", _bce_zero_logits),
    ("generate, evaluate and predict", _pipeline),
]


def run_selftest(echo=print) -> int:
    """Run every check, echo one line each and return the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
            echo(f"ok    {name}")
        except Exception as e:  # report and keep going
            failures += 1
            echo(f"FAIL  {name}: {type(e).__name__}: {e}")
    return failures
