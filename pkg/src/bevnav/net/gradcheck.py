"""Finite-difference verification of the analytic gradients, block by block."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scenegen import DatasetConfig, generate_scene, generate_sample
from . import autograd as ag
from .model import BLOCKS, BeaconNet, ModelConfig, bce_region_loss, block_of, stage1_aux_loss

# A small grid keeps the check quick; every layer type is still exercised.
SMALL_CONFIG = ModelConfig(bound=1.6, resolution=32)


@dataclass
class BlockResult:
    block: str
    checked: int
    max_rel_err: float
    dir_rel_err: float = 0.0  # whole-block directional derivative

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol and self.dir_rel_err < tol


def rel_error(a, n, floor: float = 1e-8):
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from
    turning round-off into large ratios."""
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


# Loss terms each block feeds. A block is checked only against the terms that
# depend on it; a constant extra term would only add float64 round-off.
TERMS = {"gate": ("bce",), "phi": ("bce",), "dec": ("bce",), "head": ("aux",)}


def check_loss(model: BeaconNet, obs, mask, direction: int, rng: int, terms=("bce", "aux")):
    """Scalar checked: region BCE of the full pass plus both Stage-1 heads."""
    out = model.forward(obs)
    parts = []
    if "bce" in terms:
        parts.append(bce_region_loss(out["logits"], mask))
    if "aux" in terms:
        parts.append(stage1_aux_loss(model, out["nav"], direction, rng))
    return parts[0] if len(parts) == 1 else ag.add(*parts)


def make_fixture(cfg: ModelConfig = SMALL_CONFIG, seed: int = 0):
    """Observation, region mask and labels from one generated sample on ``cfg``'s grid."""
    from .data import observe
    from ..geodesy import target_region, traversability_from_scene
    from ..labels import DIRECTIONS, RANGES, direction_bin, range_bin

    spec = cfg.spec
    scene = generate_scene(seed)
    for k in range(100):
        sample = generate_sample(seed + k, scene, DatasetConfig(resolution=cfg.resolution))
        if sample:
            break
    else:  # pragma: no cover - generation practically always succeeds
        raise RuntimeError("could not generate a fixture sample")
    obs = observe(sample.scene, sample.instruction, cfg)
    tx, ty = sample.target
    # keep the region inside the small grid so the mask has positives
    t = (float(np.clip(tx, -spec.bound + 0.3, spec.bound - 0.3)), float(np.clip(ty, -spec.bound + 0.3, spec.bound - 0.3)))
    trav = traversability_from_scene(sample.scene, spec)
    try:
        mask = target_region(trav, t, 1.0).mask
    except Exception:
        mask = np.zeros(spec.shape, dtype=bool)
        mask[spec.rows // 2, spec.cols // 2] = True
    return obs, mask, DIRECTIONS.index(direction_bin(sample.target)), RANGES.index(range_bin(sample.target))


def check_gradients(cfg: ModelConfig = SMALL_CONFIG, per_block: int = 200, eps: float = 1e-5, seed: int = 0,
                    blocks=BLOCKS, tol: float = 1e-4) -> list[BlockResult]:
    """Central differences in float64 on ``per_block`` randomly chosen entries of
    every parameter block (all entries when a block is smaller)."""
    model = BeaconNet(cfg, seed, dtype=np.float64)
    obs, mask, d, r = make_fixture(cfg, seed)
    analytic = {}
    for terms in {TERMS.get(b, ("bce", "aux")) for b in blocks}:
        check_loss(model, obs, mask, d, r, terms).backward()
        analytic[terms] = {k: p.grad.copy() for k, p in model.params.items() if p.grad is not None}
        model.zero_grad()

    rng = np.random.default_rng(seed)
    results = []
    for block in blocks:
        terms = TERMS.get(block, ("bce", "aux"))
        names = [k for k in model.params if block_of(k) == block]
        slots = [(k, i) for k in names for i in range(model.params[k].data.size)]
        if len(slots) > per_block:
            pick = rng.choice(len(slots), per_block, replace=False)
            slots = [slots[i] for i in sorted(pick)]
        # a central difference of a float64 loss carries about ulp(L) / eps of
        # round-off; entries below that scale are compared against it instead
        base = float(check_loss(model, obs, mask, d, r, terms).data)
        floor = max(1e-8, np.spacing(abs(base)) / eps / tol)
        worst = 0.0
        for name, i in slots:
            flat = model.params[name].data.reshape(-1)
            old = flat[i]
            flat[i] = old + eps
            up = float(check_loss(model, obs, mask, d, r, terms).data)
            flat[i] = old - eps
            down = float(check_loss(model, obs, mask, d, r, terms).data)
            flat[i] = old
            num = (up - down) / (2 * eps)
            worst = max(worst, float(rel_error(analytic[terms][name].reshape(-1)[i], num, floor)))
        # directional derivative along a random unit direction over the whole block
        dirs = {k: rng.normal(size=model.params[k].shape) for k in names}
        norm = np.sqrt(sum(float((v ** 2).sum()) for v in dirs.values()))
        exact = sum(float((analytic[terms][k] * dirs[k]).sum()) for k in names) / norm
        for k in names:
            model.params[k].data += eps * dirs[k] / norm
        up = float(check_loss(model, obs, mask, d, r, terms).data)
        for k in names:
            model.params[k].data -= 2 * eps * dirs[k] / norm
        down = float(check_loss(model, obs, mask, d, r, terms).data)
        for k in names:
            model.params[k].data += eps * dirs[k] / norm
        directional = float(rel_error(exact, (up - down) / (2 * eps)))
        results.append(BlockResult(block, len(slots), worst, directional))
    return results
