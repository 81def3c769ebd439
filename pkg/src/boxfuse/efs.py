"""Ego-compatible feature synthesis.

Lifts a single-channel pseudo-BEV map into a feature map shaped like the ego
encoder output ``(H, W, C)`` in three parts:

* cue encoder: replicate to ``c0`` channels, then ``L`` stride-2 stages;
* context injection: add the (pooled) ego feature at two pyramid levels;
* refiner: concatenate, project to ``C``, three residual blocks.

Building blocks are Conv-BN-SiLU (``cba``) and residual blocks. Parameters are
deterministic in ``(config, seed)``.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .prng import SplitMix64
from .raster import GridSpec, PseudoBev, grid_dims
from .tensor import (
    DTYPE,
    BnAffine,
    ConvParams,
    adaptive_avg_pool,
    bilinear_upsample,
    bn_affine,
    conv2d,
    silu,
)


@dataclass(frozen=True)
class EfsConfig:
    grid: GridSpec
    channels: int = 256
    num_stages: int = 2
    c0: int = 64

    def __post_init__(self):
        rows, cols = grid_dims(self.grid)
        step = 1 << self.num_stages
        if self.num_stages < 1:
            raise ConfigError("need at least one encoder stage")
        if rows % step or cols % step:
            raise ConfigError(f"grid {rows}x{cols} is not divisible by 2^{self.num_stages}")
        if self.channels % 2:
            raise ConfigError("ego channel count must be even")
        h, w = self.feature_dims
        if h % 4 or w % 4:
            raise ConfigError(f"feature dims {h}x{w} must be multiples of 4 for the two-level pyramid")

    @classmethod
    def for_feature(cls, grid: GridSpec, feature_rows: int, feature_cols: int, channels: int, c0: int = 64) -> EfsConfig:
        """Derive the stage count from the ratio between BEV grid and ego feature size."""
        rows, cols = grid_dims(grid)
        if rows % feature_rows or cols % feature_cols or rows // feature_rows != cols // feature_cols:
            raise ConfigError(f"grid {rows}x{cols} is not a uniform power-of-two multiple of {feature_rows}x{feature_cols}")
        ratio = rows // feature_rows
        stages = int(round(math.log2(ratio)))
        if 1 << stages != ratio:
            raise ConfigError(f"grid/feature ratio {ratio} is not a power of two")
        return cls(grid=grid, channels=channels, num_stages=stages, c0=c0)

    @property
    def bev_dims(self) -> tuple[int, int]:
        return grid_dims(self.grid)

    @property
    def feature_dims(self) -> tuple[int, int]:
        rows, cols = grid_dims(self.grid)
        return rows >> self.num_stages, cols >> self.num_stages

    @property
    def half(self) -> int:
        return self.channels // 2

    def stage_channels(self) -> list[int]:
        """Double from c0 each stage, capped at C/2; the last stage always lands on C/2."""
        chans = [min(self.c0 << (i + 1), self.half) for i in range(self.num_stages)]
        chans[-1] = self.half
        return chans

    def to_dict(self) -> dict:
        g = self.grid
        return {
            "grid": [g.x_min, g.x_max, g.y_min, g.y_max, g.v_x, g.v_y],
            "channels": self.channels,
            "num_stages": self.num_stages,
            "c0": self.c0,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EfsConfig:
        return cls(GridSpec(*d["grid"]), d["channels"], d["num_stages"], d["c0"])


@dataclass(frozen=True)
class Block:
    conv: ConvParams
    bn: BnAffine


# (name, in_channels, out_channels, kernel, stride)
LayoutEntry = tuple[str, int, int, int, int]


def _oce_layout(cfg: EfsConfig) -> list[LayoutEntry]:
    layout = []
    cin = cfg.c0
    for i, cout in enumerate(cfg.stage_channels(), start=1):
        layout.append((f"oce.s{i}.down", cin, cout, 3, 2))
        layout.append((f"oce.s{i}.refine", cout, cout, 3, 1))
        cin = cout
    return layout


def _refiner_layout(prefix: str, cin: int, c: int) -> list[LayoutEntry]:
    layout = [(f"{prefix}.proj1", cin, c, 3, 1), (f"{prefix}.proj2", c, c, 3, 1)]
    for r in range(1, 4):
        layout.append((f"{prefix}.rb{r}.conv1", c, c, 3, 1))
        layout.append((f"{prefix}.rb{r}.conv2", c, c, 3, 1))
    return layout


def efs_layout(cfg: EfsConfig) -> list[LayoutEntry]:
    h = cfg.half
    eim = [
        ("eim.down1", h, h, 3, 2),
        ("eim.down2", h, h, 3, 2),
        ("eim.up1", h, h, 3, 1),
        ("eim.up2", h, h, 3, 1),
    ]
    return _oce_layout(cfg) + eim + _refiner_layout("elr", 3 * h, cfg.channels)


def encoder_layout(cfg: EfsConfig) -> list[LayoutEntry]:
    """Layout of the seeded stand-in for the frozen ego encoder (cue encoder + refiner)."""
    return _oce_layout(cfg) + _refiner_layout("enc", cfg.half, cfg.channels)


def xavier_bound(cin: int, cout: int, k: int) -> float:
    return math.sqrt(6.0 / (cin * k * k + cout * k * k))


@dataclass(frozen=True)
class EfsParams:
    config: EfsConfig
    seed: int
    blocks: dict[str, Block] = field(repr=False)
    layout: tuple[LayoutEntry, ...] = field(repr=False, default=())

    def __getitem__(self, name: str) -> Block:
        return self.blocks[name]

    def manifest(self) -> list[dict]:
        out = []
        for name, blk in self.blocks.items():
            out.append({"name": f"{name}.weight", "shape": list(blk.conv.weight.shape)})
            out.append({"name": f"{name}.bias", "shape": list(blk.conv.bias.shape)})
            for stat in ("mean", "var", "scale", "shift"):
                out.append({"name": f"{name}.bn.{stat}", "shape": [blk.bn.channels]})
        return out

    def tensors(self):
        for blk in self.blocks.values():
            yield blk.conv.weight
            yield blk.conv.bias
            yield from (blk.bn.mean, blk.bn.var, blk.bn.scale, blk.bn.shift)


def init_blocks(layout: list[LayoutEntry], seed: int) -> dict[str, Block]:
    """Weights uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)), drawn
    from one SplitMix64 stream in layout order, each weight tensor in C order.
    Biases start at zero and BN at identity."""
    rng = SplitMix64(seed)
    blocks = {}
    for name, cin, cout, k, stride in layout:
        a = xavier_bound(cin, cout, k)
        u = rng.uniform(cout * cin * k * k)
        weight = (a * (2.0 * u - 1.0)).astype(DTYPE).reshape(cout, cin, k, k)
        conv = ConvParams(weight, np.zeros(cout, DTYPE), stride)
        blocks[name] = Block(conv, BnAffine.identity(cout))
    return blocks


def init_params(cfg: EfsConfig, seed: int) -> EfsParams:
    layout = efs_layout(cfg)
    return EfsParams(cfg, seed, init_blocks(layout, seed), tuple(layout))


ENCODER_BIAS = 0.1


def init_encoder_params(cfg: EfsConfig, seed: int) -> EfsParams:
    """Like ``init_params`` but biases are drawn uniform in +-ENCODER_BIAS (after
    all weights, same stream) so empty space encodes to a nonzero vector."""
    layout = encoder_layout(cfg)
    blocks = init_blocks(layout, seed)
    rng = SplitMix64(seed)
    rng.u64_block(sum(cout * cin * k * k for _, cin, cout, k, _ in layout))
    for name, _cin, cout, _k, stride in layout:
        blk = blocks[name]
        bias = (ENCODER_BIAS * (2.0 * rng.uniform(cout) - 1.0)).astype(DTYPE)
        blocks[name] = Block(ConvParams(blk.conv.weight, bias, stride), blk.bn)
    return EfsParams(cfg, seed, blocks, tuple(layout))


def save_params(p: EfsParams, path: str | Path) -> None:
    """JSON manifest line, then every tensor as little-endian float32 in manifest order."""
    header = {"seed": p.seed, "config": p.config.to_dict(), "layout": [list(e) for e in p.layout], "tensors": p.manifest()}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        for t in p.tensors():
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_params(path: str | Path) -> EfsParams:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        payload = io.BytesIO(fh.read())
    cfg = EfsConfig.from_dict(header["config"])
    layout = [tuple(e) for e in header["layout"]]
    tensors = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"]))
        raw = payload.read(4 * n)
        if len(raw) != 4 * n:
            raise ShapeError(f"parameter file truncated at {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4").astype(DTYPE).reshape(entry["shape"])
    blocks = {}
    for name, _cin, _cout, _k, stride in layout:
        conv = ConvParams(tensors[f"{name}.weight"], tensors[f"{name}.bias"], stride)
        bn = BnAffine(*(tensors[f"{name}.bn.{s}"] for s in ("mean", "var", "scale", "shift")))
        blocks[name] = Block(conv, bn)
    return EfsParams(cfg, header["seed"], blocks, tuple(layout))


def cba(x: np.ndarray, blk: Block) -> np.ndarray:
    return silu(bn_affine(conv2d(x, blk.conv), blk.bn))


def residual_block(x: np.ndarray, b1: Block, b2: Block) -> np.ndarray:
    h = silu(bn_affine(conv2d(x, b1.conv), b1.bn))
    return x + bn_affine(conv2d(h, b2.conv), b2.bn)


def expand(x: PseudoBev | np.ndarray, c0: int) -> np.ndarray:
    values = x.values if isinstance(x, PseudoBev) else np.asarray(x)
    if values.ndim == 3:
        if values.shape[2] != 1:
            raise ShapeError("expand takes a single-channel map")
        values = values[:, :, 0]
    return np.repeat(values.astype(DTYPE, copy=False)[:, :, None], c0, axis=2)


def oce_forward(x: PseudoBev | np.ndarray, p: EfsParams, cfg: EfsConfig) -> np.ndarray:
    values = x.values if isinstance(x, PseudoBev) else np.asarray(x)
    if values.shape[:2] != cfg.bev_dims:
        raise ConfigError(f"pseudo-BEV is {values.shape[:2]}, config expects {cfg.bev_dims}")
    h = expand(values, cfg.c0)
    for i in range(1, cfg.num_stages + 1):
        h = cba(cba(h, p[f"oce.s{i}.down"]), p[f"oce.s{i}.refine"])
    return h


def reduce_pairs(f: np.ndarray) -> np.ndarray:
    """Average adjacent channel pairs: C channels -> C/2, no parameters."""
    if f.shape[2] % 2:
        raise ShapeError("channel count must be even to pair-average")
    return (f[:, :, 0::2] + f[:, :, 1::2]) * f.dtype.type(0.5)


def eim_forward(o: np.ndarray, f1: np.ndarray, p: EfsParams, cfg: EfsConfig) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = cfg.feature_dims
    if o.shape != (rows, cols, cfg.half):
        raise ShapeError(f"cue feature is {o.shape}, expected {(rows, cols, cfg.half)}")
    if f1.shape != (rows, cols, cfg.channels):
        raise ShapeError(f"ego feature is {f1.shape}, expected {(rows, cols, cfg.channels)}")
    ego = reduce_pairs(f1.astype(o.dtype, copy=False))

    lvl1 = cba(o + adaptive_avg_pool(ego, rows, cols), p["eim.down1"])
    z1 = cba(bilinear_upsample(lvl1, 2), p["eim.up1"])

    d = cba(o, p["eim.down1"])
    lvl2 = cba(d + adaptive_avg_pool(ego, d.shape[0], d.shape[1]), p["eim.down2"])
    z2 = cba(bilinear_upsample(lvl2, 4), p["eim.up2"])
    return z1, z2


def _refine(x: np.ndarray, p: EfsParams, prefix: str) -> np.ndarray:
    h = cba(cba(x, p[f"{prefix}.proj1"]), p[f"{prefix}.proj2"])
    for r in range(1, 4):
        h = residual_block(h, p[f"{prefix}.rb{r}.conv1"], p[f"{prefix}.rb{r}.conv2"])
    return h


def elr_forward(o: np.ndarray, z1: np.ndarray, z2: np.ndarray, p: EfsParams, cfg: EfsConfig) -> np.ndarray:
    expected = (*cfg.feature_dims, cfg.half)
    for name, t in (("cue", o), ("z1", z1), ("z2", z2)):
        if t.shape != expected:
            raise ShapeError(f"{name} feature is {t.shape}, expected {expected}")
    return _refine(np.concatenate([o, z1, z2], axis=2), p, "elr")


def efs_forward(x: PseudoBev | np.ndarray, f1: np.ndarray, p: EfsParams, cfg: EfsConfig | None = None) -> np.ndarray:
    cfg = cfg or p.config
    o = oce_forward(x, p, cfg)
    z1, z2 = eim_forward(o, f1, p, cfg)
    return elr_forward(o, z1, z2, p, cfg)


def encoder_forward(x: PseudoBev | np.ndarray, p: EfsParams, cfg: EfsConfig | None = None) -> np.ndarray:
    """Seeded stand-in for the frozen ego encoder, used for teacher and ego features."""
    cfg = cfg or p.config
    return _refine(oce_forward(x, p, cfg), p, "enc")
