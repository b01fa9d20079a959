"""The learnable affordance predictor.

Data flow for one sample::

    4 color views -> view encoder -> tokens v_i (+ E_3D(p_i)) -> NAV attention -> F_nav
    view encoder stage-1 features -> BEV mean pooling -> F_img
    depth -> pillar histograms F_geom, free-space cue M -> gate G
    phi([(1 - G) * F_img, M, G * F_geom]) -> F_bev
    F_nav -> 8x8 map -> transposed-conv upsampling -> concat F_bev -> convs -> logits
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from ..bevgeom import DEFAULT_HEIGHT_BINS, BevMap, GridSpec
from ..scenegen import VOCAB
from . import autograd as ag
from .autograd import Tensor

BLOCKS = ("enc", "e3d", "nav", "gate", "phi", "dec", "head")
BEV_BLOCKS = ("gate", "phi", "dec")


@dataclass(frozen=True)
class ModelConfig:
    token_dim: int = 32
    bev_dim: int = 32
    nav_dim: int = 64
    img_feat_dim: int = 16
    e3d_hidden: int = 64
    gate_hidden: int = 8
    nav_map_dim: int = 16
    dec_hidden: int = 16
    nav_grid: int = 8
    bound: float = 6.4
    cell: float = 0.1
    resolution: int = 64
    height_bins: tuple = DEFAULT_HEIGHT_BINS
    vocab_size: int = len(VOCAB)
    prior: float = 0.02

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.bound, self.cell)

    @property
    def geom_dim(self) -> int:
        return len(self.height_bins)  # bins plus the max-height channel

    def to_json(self) -> dict:
        d = asdict(self)
        d["height_bins"] = list(self.height_bins)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["height_bins"] = tuple(d["height_bins"])
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple]":
    t, h, g = cfg.token_dim, cfg.e3d_hidden, cfg.gate_hidden
    rows = cfg.spec.rows
    if rows % cfg.nav_grid:
        raise ValueError("grid rows must be a multiple of the NAV map size")
    s = rows // cfg.nav_grid
    fused = cfg.img_feat_dim + 1 + cfg.geom_dim
    dec_in = cfg.bev_dim + cfg.nav_map_dim + 2
    return OrderedDict([
        ("enc.c1.w", (cfg.img_feat_dim, 3, 3, 3)), ("enc.c1.b", (cfg.img_feat_dim,)),
        ("enc.c2.w", (t, cfg.img_feat_dim, 3, 3)), ("enc.c2.b", (t,)),
        ("enc.c3.w", (t, t, 3, 3)), ("enc.c3.b", (t,)),
        ("e3d.l1.w", (3, h)), ("e3d.l1.b", (h,)),
        ("e3d.l2.w", (h, t)), ("e3d.l2.b", (t,)),
        ("e3d.null", (t,)),
        ("nav.embed", (cfg.vocab_size, t)),
        ("nav.query", (t,)),
        ("nav.wq", (t, t)), ("nav.wk", (t, t)), ("nav.wv", (t, t)),
        ("nav.wo", (2 * t, cfg.nav_dim)), ("nav.bo", (cfg.nav_dim,)),
        ("gate.c1.w", (g, 1, 3, 3)), ("gate.c1.b", (g,)),
        ("gate.c2.w", (1, g, 3, 3)), ("gate.c2.b", (1,)),
        ("phi.w", (cfg.bev_dim, fused, 1, 1)), ("phi.b", (cfg.bev_dim,)),
        ("dec.nav.w", (cfg.nav_dim, cfg.nav_map_dim * cfg.nav_grid ** 2)),
        ("dec.nav.b", (cfg.nav_map_dim * cfg.nav_grid ** 2,)),
        ("dec.up.w", (cfg.nav_map_dim, cfg.nav_map_dim, 2 * s, 2 * s)), ("dec.up.b", (cfg.nav_map_dim,)),
        ("dec.c1.w", (cfg.dec_hidden, dec_in, 3, 3)), ("dec.c1.b", (cfg.dec_hidden,)),
        ("dec.c2.w", (cfg.dec_hidden, cfg.dec_hidden, 3, 3)), ("dec.c2.b", (cfg.dec_hidden,)),
        ("dec.c3.w", (1, cfg.dec_hidden, 3, 3)), ("dec.c3.b", (1,)),
        ("head.dir.w", (cfg.nav_dim, 8)), ("head.dir.b", (8,)),
        ("head.rng.w", (cfg.nav_dim, 2)), ("head.rng.b", (2,)),
    ])


def _fan_in(name: str, shape) -> int:
    if name == "dec.up.w":
        # each output pixel sees a 2x2 neighbourhood of input positions
        return shape[0] * 4
    if len(shape) == 4:
        return int(np.prod(shape[1:]))
    return shape[0]


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> "OrderedDict[str, Tensor]":
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b") or name == "nav.bo":
            data = np.zeros(shape)
        elif name in ("nav.embed", "nav.query", "e3d.null"):
            data = rng.normal(0.0, 1.0, shape)
        else:
            data = rng.normal(0.0, 1.0 / math.sqrt(_fan_in(name, shape)), shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    params["dec.c3.b"].data[:] = math.log(cfg.prior / (1.0 - cfg.prior))
    return params


def block_of(name: str) -> str:
    return name.split(".", 1)[0]


@dataclass
class Observation:
    """Precomputed, non-learned model inputs for one sample."""

    colors: np.ndarray  # (4, H, W, 3) uint8
    pixel_index: np.ndarray  # flat indices into the (4*H*W) pixel list, in-grid points only
    pixel_cell: np.ndarray  # BEV cell of each of those pixels
    token_pos: np.ndarray  # (4*T, 3) agent-frame mean point per token patch
    token_null: np.ndarray  # (4*T,) True where the patch had no valid depth
    geom: np.ndarray  # (rows, cols, geom_dim) pillar features
    free: np.ndarray  # (rows, cols) free-space cue
    instruction: np.ndarray  # token ids


class BeaconNet:
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32, params=None):
        self.cfg = cfg
        self.seed = seed
        self.params = params if params is not None else init_params(cfg, seed, dtype)
        r = cfg.spec.rows
        c = (np.arange(r) + 0.5) / r * 2.0 - 1.0
        xx, yy = np.meshgrid(c, c, indexing="ij")
        self._coords = np.stack([xx, yy])[None]

    @property
    def dtype(self):
        return self.params["phi.w"].dtype

    def astype(self, dtype) -> "BeaconNet":
        params = OrderedDict(
            (k, Tensor(v.data.astype(dtype), requires_grad=True, name=k)) for k, v in self.params.items()
        )
        return BeaconNet(self.cfg, self.seed, params=params)

    def copy(self) -> "BeaconNet":
        return self.astype(self.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def _c(self, x) -> Tensor:
        return Tensor(np.asarray(x, dtype=self.dtype))

    # vision-language path ------------------------------------------------

    def encode_views(self, colors):
        """Token grid (4*T, token_dim) and stride-2 pixel features (4, C, H/2, W/2)."""
        p = self.params
        colors = np.asarray(colors)
        if colors.ndim != 4 or colors.shape[0] != 4 or colors.shape[3] != 3:
            raise ValueError(f"expected 4 RGB views (4, H, W, 3), got {colors.shape}")
        x = self._c(colors.transpose(0, 3, 1, 2) / 255.0)
        f1 = ag.silu(ag.conv2d(x, p["enc.c1.w"], p["enc.c1.b"], stride=2, pad=1))
        f2 = ag.silu(ag.conv2d(f1, p["enc.c2.w"], p["enc.c2.b"], stride=2, pad=1))
        f3 = ag.conv2d(f2, p["enc.c3.w"], p["enc.c3.b"], stride=2, pad=1)
        tokens = ag.reshape(ag.transpose(f3, (0, 2, 3, 1)), (-1, self.cfg.token_dim))
        return tokens, f1

    def e3d(self, positions, null_mask=None) -> Tensor:
        """Two-layer perceptron on agent-frame positions (scaled by the grid bound)."""
        p = self.params
        pos = self._c(np.asarray(positions) / self.cfg.bound)
        h = ag.silu(ag.linear(pos, p["e3d.l1.w"], p["e3d.l1.b"]))
        out = ag.linear(h, p["e3d.l2.w"], p["e3d.l2.b"])
        if null_mask is not None and np.any(null_mask):
            keep = self._c((~np.asarray(null_mask, dtype=bool)).astype(float)[:, None])
            out = ag.add(ag.mul(out, keep), ag.mul(self._c(1.0 - keep.data), p["e3d.null"]))
        return out

    def position_encode(self, tokens: Tensor, positions, null_mask=None) -> Tensor:
        if len(positions) != tokens.shape[0]:
            raise ValueError("one position per token required")
        return ag.add(tokens, self.e3d(positions, null_mask))

    def nav_summary(self, tokens: Tensor, instruction, return_attention=False):
        ids = np.asarray(instruction, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("empty instruction")
        p = self.params
        t = self.cfg.token_dim
        q0 = ag.add(ag.mean(ag.take_rows(p["nav.embed"], ids), axis=0), p["nav.query"])
        q = ag.matmul(q0, p["nav.wq"])
        k = ag.matmul(tokens, p["nav.wk"])
        v = ag.matmul(tokens, p["nav.wv"])
        att = ag.softmax(ag.mul(ag.matmul(k, q), self._c(1.0 / math.sqrt(t))))
        read = ag.matmul(att, v)
        nav = ag.linear(ag.concat([read, q0]), p["nav.wo"], p["nav.bo"])
        return (nav, att) if return_attention else nav

    def stage1_logits(self, nav: Tensor):
        p = self.params
        return ag.linear(nav, p["head.dir.w"], p["head.dir.b"]), ag.linear(nav, p["head.rng.w"], p["head.rng.b"])

    # BEV path ------------------------------------------------------------

    def pool_features(self, pix_feat: Tensor, obs: Observation) -> Tensor:
        """Mean-pool upsampled stride-2 features of in-grid pixels into BEV cells: (1, C, R, R)."""
        n, c, h, w = pix_feat.shape
        res = self.cfg.resolution
        full = ag.upsample_nearest(pix_feat, res // h)
        flat = ag.reshape(ag.transpose(full, (0, 2, 3, 1)), (-1, c))
        rows = self.cfg.spec.rows
        pooled = ag.scatter_mean(ag.take_rows(flat, obs.pixel_index), obs.pixel_cell, rows * rows)
        return ag.transpose(ag.reshape(pooled, (1, rows, rows, c)), (0, 3, 1, 2))

    def predict_gate(self, free) -> Tensor:
        p = self.params
        m = free if isinstance(free, Tensor) else self._c(np.asarray(free)[None, None])
        if m.shape[2:] != self.cfg.spec.shape:
            raise ValueError(f"free-space map {m.shape[2:]} does not match grid {self.cfg.spec.shape}")
        h = ag.silu(ag.conv2d(m, p["gate.c1.w"], p["gate.c1.b"], pad=1))
        return ag.sigmoid(ag.conv2d(h, p["gate.c2.w"], p["gate.c2.b"], pad=1))

    def fusion_input(self, f_img: Tensor, f_geom: Tensor, m: Tensor, gate: Tensor) -> Tensor:
        """Channel concatenation [(1 - G) * F_img, M, G * F_geom] before the 1x1 projection."""
        if not (f_img.shape[2:] == f_geom.shape[2:] == m.shape[2:] == gate.shape[2:]):
            raise ValueError("fusion inputs are on different grids")
        return ag.concat([ag.mul(ag.add(ag.neg(gate), 1.0), f_img), m, ag.mul(gate, f_geom)], axis=1)

    def gated_fusion(self, f_img: Tensor, f_geom: Tensor, m: Tensor, gate: Tensor) -> Tensor:
        p = self.params
        return ag.conv2d(self.fusion_input(f_img, f_geom, m, gate), p["phi.w"], p["phi.b"])

    def decode_affordance(self, f_bev: Tensor, nav: Tensor) -> Tensor:
        p = self.params
        cfg = self.cfg
        g = cfg.nav_grid
        s = cfg.spec.rows // g
        coarse = ag.silu(ag.reshape(ag.linear(nav, p["dec.nav.w"], p["dec.nav.b"]), (1, cfg.nav_map_dim, g, g)))
        up = ag.conv_transpose2d(coarse, p["dec.up.w"], p["dec.up.b"], stride=s, pad=s // 2)
        if up.shape[2:] != f_bev.shape[2:]:
            raise ValueError(f"upsampled NAV map {up.shape[2:]} does not match BEV {f_bev.shape[2:]}")
        x = ag.concat([f_bev, up, self._c(self._coords)], axis=1)
        x = ag.silu(ag.conv2d(x, p["dec.c1.w"], p["dec.c1.b"], pad=1))
        x = ag.silu(ag.conv2d(x, p["dec.c2.w"], p["dec.c2.b"], pad=2, dilation=2))
        return ag.conv2d(x, p["dec.c3.w"], p["dec.c3.b"], pad=1)

    # full pass ------------------------------------------------------------

    def forward(self, obs: Observation, use_positions=True) -> dict:
        tokens, pix = self.encode_views(obs.colors)
        if use_positions:
            tokens = self.position_encode(tokens, obs.token_pos, obs.token_null)
        nav = self.nav_summary(tokens, obs.instruction)
        f_img = self.pool_features(pix, obs)
        f_geom = self._c(np.asarray(obs.geom, dtype=float).transpose(2, 0, 1)[None])
        m = self._c(np.asarray(obs.free, dtype=float)[None, None])
        gate = self.predict_gate(m)
        f_bev = self.gated_fusion(f_img, f_geom, m, gate)
        logits = self.decode_affordance(f_bev, nav)
        return {"nav": nav, "gate": gate, "f_bev": f_bev, "logits": logits}

    def predict(self, obs: Observation, use_positions=True) -> BevMap:
        """Affordance map in (0, 1) on the model grid."""
        logits = self.forward(obs, use_positions)["logits"].data[0, 0]
        return BevMap(self.cfg.spec, ag.sigmoid_np(logits.astype(np.float64)))


def bce_region_loss(logits: Tensor, mask, pos_weight: float = 1.0) -> Tensor:
    mask = np.asarray(mask)
    if logits.data.size != mask.size:
        raise ValueError(f"logit map size {logits.shape} does not match mask {mask.shape}")
    return ag.bce_with_logits(logits, mask.reshape(logits.shape).astype(logits.dtype), pos_weight)


def stage1_aux_loss(model: BeaconNet, nav: Tensor, direction: int, rng: int) -> Tensor:
    d, r = model.stage1_logits(nav)
    return ag.add(ag.cross_entropy(d, direction), ag.cross_entropy(r, rng))
