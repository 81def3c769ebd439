"""Agent configurations: sensor tag, BEV grid and ego-feature geometry."""

from __future__ import annotations

from dataclasses import dataclass

from ..codec import MessageSchema
from ..efs import EfsConfig
from ..errors import ConfigError
from ..raster import GridSpec, grid_dims


@dataclass(frozen=True)
class AgentConfig:
    name: str
    grid: GridSpec
    feature_channels: int
    encoder_stride: int
    lidar_beams: int = 128

    def __post_init__(self):
        rows, cols = grid_dims(self.grid)
        s = self.encoder_stride
        if s < 2 or s & (s - 1):
            raise ConfigError(f"{self.name}: encoder stride must be a power of two >= 2, got {s}")
        if rows % s or cols % s:
            raise ConfigError(f"{self.name}: grid {rows}x{cols} not divisible by stride {s}")

    @property
    def bev_dims(self) -> tuple[int, int]:
        return grid_dims(self.grid)

    @property
    def feature_dims(self) -> tuple[int, int]:
        rows, cols = self.bev_dims
        return rows // self.encoder_stride, cols // self.encoder_stride

    def efs_config(self, c0: int = 64) -> EfsConfig:
        rows, cols = self.feature_dims
        return EfsConfig.for_feature(self.grid, rows, cols, self.feature_channels, c0)

    def message_schema(self, bits: int = 8, k_max: int = 20) -> MessageSchema:
        """Schema whose x/y ranges cover this agent's detection range."""
        g = self.grid
        return MessageSchema.for_range((g.x_min, g.x_max), (g.y_min, g.y_max), bits, k_max)

    def with_beams(self, beams: int) -> AgentConfig:
        return AgentConfig(self.name, self.grid, self.feature_channels, self.encoder_stride, beams)


RANGE_A = (-102.4, 102.4, -38.4, 38.4)
RANGE_B = (-105.6, 105.6, -38.4, 38.4)

# feature rows follow the x axis (grid rows), so e.g. PP4 is 128 x 48 x 256
PRESETS = {
    "PP4": AgentConfig("PP4", GridSpec(*RANGE_A, 0.4, 0.4), 256, 4),
    "PP6": AgentConfig("PP6", GridSpec(*RANGE_B, 0.6, 0.6), 256, 2),
    "PP8": AgentConfig("PP8", GridSpec(*RANGE_A, 0.8, 0.8), 256, 2),
    "SD2": AgentConfig("SD2", GridSpec(*RANGE_A, 0.2, 0.2), 512, 8),
    "SD3": AgentConfig("SD3", GridSpec(*RANGE_B, 0.3, 0.3), 512, 4),
}


def preset(name: str, lidar_beams: int = 128) -> AgentConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown agent preset {name!r}; known: {sorted(PRESETS)}") from None
    return base.with_beams(lidar_beams)
