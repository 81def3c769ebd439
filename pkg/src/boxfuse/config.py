"""JSON run configuration shared by ``simulate`` and ``ablate``.

Example::

    {
      "ego": "PP4",
      "aux": ["PP8", {"preset": "SD3", "lidar_beams": 64},
              {"name": "custom", "grid": [-80, 80, -40, 40, 0.5, 0.5],
               "feature_channels": 128, "encoder_stride": 4}],
      "schema": {"bits": 8, "k_max": 20},
      "seeds": [0, 1],
      "budget_bytes": 1000
    }

Unknown keys anywhere raise ``ConfigError``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .codec import MessageSchema
from .errors import ConfigError
from .loss import LossWeights
from .raster import GridSpec
from .sim.agents import AgentConfig, preset
from .sim.scenario import StubDetectorConfig

SCHEMA_KEYS = {"bits", "k_max", "w_range", "l_range", "yaw_range", "score_range"}
ABLATION_KEYS = {"bits", "k_max", "seeds"}


@dataclass
class RunConfig:
    ego: AgentConfig = field(default_factory=lambda: preset("PP4"))
    aux: list[AgentConfig] = field(default_factory=lambda: [preset("PP4")])
    bits: int = 8
    k_max: int = 20
    field_ranges: dict[str, tuple[float, float]] = field(default_factory=dict)
    weights: LossWeights = field(default_factory=LossWeights)
    detector: StubDetectorConfig = field(default_factory=StubDetectorConfig)
    seeds: list[int] = field(default_factory=lambda: [0])
    n_objects: int = 40
    params_seed: int = 1
    budget_bytes: int | None = None
    rate_hz: float = 10.0
    out_dir: str = "out"
    ablation_bits: list[int] = field(default_factory=lambda: [4, 8, 16, 32])
    ablation_kmax: list[int] = field(default_factory=lambda: [0, 5, 10, 20, 40, 60])
    ablation_seeds: int = 50

    def schema(self, agent: AgentConfig | None = None) -> MessageSchema:
        agent = agent or self.ego
        g = agent.grid
        return MessageSchema.for_range((g.x_min, g.x_max), (g.y_min, g.y_max), self.bits, self.k_max, **self.field_ranges)

    @property
    def budget_bits(self) -> int | None:
        return None if self.budget_bytes is None else 8 * self.budget_bytes


def _reject_unknown(d: dict, allowed: set[str], where: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


def parse_agent(spec: Any) -> AgentConfig:
    if isinstance(spec, str):
        return preset(spec)
    if not isinstance(spec, dict):
        raise ConfigError(f"agent must be a preset name or an object, got {spec!r}")
    if "preset" in spec:
        _reject_unknown(spec, {"preset", "lidar_beams"}, "agent")
        return preset(spec["preset"], spec.get("lidar_beams", 128))
    _reject_unknown(spec, {"name", "grid", "feature_channels", "encoder_stride", "lidar_beams"}, "agent")
    try:
        grid = GridSpec(*(float(v) for v in spec["grid"]))
        return AgentConfig(
            name=str(spec["name"]),
            grid=grid,
            feature_channels=int(spec["feature_channels"]),
            encoder_stride=int(spec["encoder_stride"]),
            lidar_beams=int(spec.get("lidar_beams", 128)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"incomplete agent definition {spec!r}: {exc}") from None


def _dataclass_from(cls, d: dict, where: str):
    names = {f.name for f in fields(cls)}
    _reject_unknown(d, names, where)
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {where}: {exc}") from None


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {
        "ego", "aux", "schema", "weights", "detector", "seeds", "n_objects",
        "params_seed", "budget_bytes", "rate_hz", "out_dir", "ablation",
    }
    _reject_unknown(doc, allowed, "config")
    cfg = RunConfig()
    if "ego" in doc:
        cfg.ego = parse_agent(doc["ego"])
    if "aux" in doc:
        cfg.aux = [parse_agent(a) for a in doc["aux"]]
    sch = doc.get("schema", {})
    _reject_unknown(sch, SCHEMA_KEYS, "schema")
    cfg.bits = int(sch.get("bits", cfg.bits))
    cfg.k_max = int(sch.get("k_max", cfg.k_max))
    cfg.field_ranges = {k: tuple(sch[k]) for k in ("w_range", "l_range", "yaw_range", "score_range") if k in sch}
    if "weights" in doc:
        cfg.weights = _dataclass_from(LossWeights, doc["weights"], "weights")
    if "detector" in doc:
        cfg.detector = _dataclass_from(StubDetectorConfig, doc["detector"], "detector")
    for key in ("seeds", "n_objects", "params_seed", "budget_bytes", "rate_hz", "out_dir"):
        if key in doc:
            setattr(cfg, key, doc[key])
    abl = doc.get("ablation", {})
    _reject_unknown(abl, ABLATION_KEYS, "ablation")
    cfg.ablation_bits = list(abl.get("bits", cfg.ablation_bits))
    cfg.ablation_kmax = list(abl.get("k_max", cfg.ablation_kmax))
    cfg.ablation_seeds = int(abl.get("seeds", cfg.ablation_seeds))
    try:
        cfg.schema()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(doc)
