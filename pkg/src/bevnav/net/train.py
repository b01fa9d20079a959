"""Two-stage training with momentum SGD, checkpoints and the loss log."""
from __future__ import annotations

import csv
import json
import logging
import math
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .model import BEV_BLOCKS, BeaconNet, ModelConfig, bce_region_loss, block_of, stage1_aux_loss

log = logging.getLogger(__name__)

STAGE_A_BLOCKS = ("enc", "e3d", "nav", "head")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class Schedule:
    stage_a_steps: int = 200
    stage_b_steps: int = 600
    batch_size: int = 8
    lr_a: float = 1e-3
    lr_b: float = 1e-3
    bev_lr_mult: float = 5.0
    momentum: float = 0.9
    clip_norm: float = 0.0
    pos_weight: float = 1.0
    seed: int = 0
    stages: tuple = (1, 2)
    optimizer: str = "adam"


class SGD:
    """Momentum SGD over a subset of parameters with per-parameter rate multipliers."""

    def __init__(self, params: "OrderedDict[str, Tensor]", lr: float, momentum: float, mults=None):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.mults = mults or {}
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict):
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            v = self.velocity[k]
            v *= self.momentum
            v += g
            p.data -= (self.lr * self.mults.get(k, 1.0)) * v.astype(p.data.dtype)


class Adam(SGD):
    """Adam with bias correction; ``momentum`` is beta1."""

    def __init__(self, params, lr: float, momentum: float = 0.9, mults=None, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr, momentum, mults)
        self.beta2 = beta2
        self.eps = eps
        self.second = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict):
        self.t += 1
        b1, b2 = self.momentum, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            m, v = self.velocity[k], self.second[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            step = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (self.lr * self.mults.get(k, 1.0)) * step.astype(p.data.dtype)


OPTIMIZERS = {"sgd": SGD, "adam": Adam}


def sample_loss(model: BeaconNet, item, stage: int, pos_weight: float = 1.0) -> Tensor:
    if stage == 1:
        tokens, _ = model.encode_views(item.obs.colors)
        tokens = model.position_encode(tokens, item.obs.token_pos, item.obs.token_null)
        nav = model.nav_summary(tokens, item.obs.instruction)
        return stage1_aux_loss(model, nav, item.direction, item.range)
    out = model.forward(item.obs)
    return bce_region_loss(out["logits"], item.mask, pos_weight)


def batch_gradients(model: BeaconNet, items, stage: int, pos_weight: float = 1.0):
    """Mean loss and mean gradients over a list of items."""
    model.zero_grad()
    total = 0.0
    for item in items:
        loss = sample_loss(model, item, stage, pos_weight)
        loss.backward()
        total += float(loss.data)
    n = len(items)
    grads = {k: p.grad / n for k, p in model.params.items() if p.grad is not None}
    model.zero_grad()
    return total / n, grads


def _clip(grads: dict, max_norm: float) -> dict:
    if max_norm <= 0:
        return grads
    norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if norm <= max_norm:
        return grads
    return {k: g * (max_norm / norm) for k, g in grads.items()}


def train(model: BeaconNet, items, schedule: Schedule = Schedule(), on_step=None):
    """Stage 1 fits the direction/range heads through the shared encoder; stage 2
    fits the region loss over everything but the heads. Returns the loss log as
    ``[(step, stage, loss)]``."""
    items = [it for it in items]
    if not items:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(schedule.seed)
    curve = []
    step = 0
    plan = [(1, schedule.stage_a_steps, schedule.lr_a), (2, schedule.stage_b_steps, schedule.lr_b)]
    for stage, n_steps, lr in plan:
        if stage not in schedule.stages or n_steps <= 0:
            continue
        if stage == 1:
            params = OrderedDict((k, p) for k, p in model.params.items() if block_of(k) in STAGE_A_BLOCKS)
            mults = {}
        else:
            params = OrderedDict((k, p) for k, p in model.params.items() if block_of(k) != "head")
            mults = {k: schedule.bev_lr_mult for k in params if block_of(k) in BEV_BLOCKS}
        if schedule.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {schedule.optimizer!r}")
        opt = OPTIMIZERS[schedule.optimizer](params, lr, schedule.momentum, mults)
        order = np.zeros(0, dtype=np.int64)
        for _ in range(n_steps):
            if len(order) < schedule.batch_size:
                order = np.concatenate([order, rng.permutation(len(items))])
            batch, order = order[: schedule.batch_size], order[schedule.batch_size:]
            loss, grads = batch_gradients(model, [items[i] for i in batch], stage, schedule.pos_weight)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step} (stage {stage})")
            opt.step(_clip({k: g for k, g in grads.items() if k in params}, schedule.clip_norm))
            curve.append((step, stage, loss))
            if on_step is not None:
                on_step(step, stage, loss)
            step += 1
    model.stage = max((s for s in schedule.stages if s in (1, 2)), default=0)
    return curve


def write_curve(path, curve) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "stage", "loss"])
        for step, stage, loss in curve:
            w.writerow([step, stage, repr(float(loss))])


# checkpoints ----------------------------------------------------------------

_MAGIC = b"BCKP"


def save_checkpoint(path, model: BeaconNet, stage: int, extra: dict | None = None) -> None:
    """JSON header (layer names, shapes, seed, stage, config) + float32 LE blobs."""
    header = {
        "layers": [[k, list(p.shape)] for k, p in model.params.items()],
        "seed": model.seed,
        "stage": stage,
        "config": model.cfg.to_json(),
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<I", len(blob)) + blob)
        for p in model.params.values():
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + n])
    off = 8 + n
    params = OrderedDict()
    for name, shape in header["layers"]:
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
        params[name] = Tensor(data, requires_grad=True, name=name)
    model = BeaconNet(ModelConfig.from_json(header["config"]), header["seed"], params=params)
    return model, header


def predict_points(model: BeaconNet, items) -> dict:
    """Argmax target (meters) per item id."""
    from ..evaluation import argmax_target

    out = {}
    for it in items:
        _, p = argmax_target(model.predict(it.obs).data, model.cfg.spec)
        out[it.id] = p
    return out


def score_items(model: BeaconNet, items):
    """Metric report on in-memory items (uses their cached traversability)."""
    from ..evaluation import MetricsReport, aggregate, score_sample

    preds = predict_points(model, items)
    scores = [score_sample(it.id, preds[it.id], it.target, it.trav, it.occluded) for it in items]
    return MetricsReport(aggregate(scores), aggregate(s for s in scores if s.occluded), scores)
