"""Seeded scenarios and stub per-agent detectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import BoxBEV, Pose2, transform_box
from ..raster import GridSpec
from .agents import PRESETS, AgentConfig

CLASSES = ("car", "pedestrian", "truck")
CLASS_PRIOR = (0.6, 0.25, 0.15)
# (mean w, std w, mean l, std l) in metres
SIZE_PRIOR = {
    "car": (1.9, 0.1, 4.6, 0.3),
    "pedestrian": (0.65, 0.05, 0.8, 0.08),
    "truck": (2.6, 0.1, 9.0, 1.2),
}


# half-open length bands [lo, hi) in metres; generated sizes are clamped into
# their class band so size alone recovers the label
LENGTH_BANDS = {"pedestrian": (0.4, 2.0), "car": (2.0, 6.5), "truck": (6.5, math.inf)}
_BAND_MARGIN = 1e-3


def classify_by_size(b: BoxBEV) -> str:
    """Class label from box length; the message carries no class field."""
    if b.l < LENGTH_BANDS["pedestrian"][1]:
        return "pedestrian"
    if b.l < LENGTH_BANDS["car"][1]:
        return "car"
    return "truck"


def split_by_class(boxes) -> dict[str, list[BoxBEV]]:
    out = {c: [] for c in CLASSES}
    for b in boxes:
        out[classify_by_size(b)].append(b)
    return out


@dataclass(frozen=True)
class Scenario:
    """Ground truth in the ego frame plus the pose of every auxiliary agent.

    ``aux_poses[i]`` maps points from auxiliary agent ``i+1``'s frame into the
    ego frame.
    """

    seed: int
    gt: dict[str, tuple[BoxBEV, ...]]
    aux_poses: tuple[Pose2, ...]
    ego_pose: Pose2 = field(default_factory=Pose2.identity)

    def all_gt(self) -> list[BoxBEV]:
        return [b for c in CLASSES for b in self.gt[c]]

    def pose_of(self, agent_index: int) -> Pose2:
        """Agent-to-ego pose; index 0 is the ego itself."""
        return self.ego_pose if agent_index == 0 else self.aux_poses[agent_index - 1]


def _sample_size(rng: np.random.Generator, cls: str) -> tuple[float, float]:
    mw, sw, ml, sl = SIZE_PRIOR[cls]
    lo, hi = LENGTH_BANDS[cls]
    w = max(0.3, rng.normal(mw, sw))
    l = min(max(lo, rng.normal(ml, sl)), hi - _BAND_MARGIN)
    return float(w), float(l)


def gen_scenario(seed: int, n_objects: int, n_aux: int = 1, grid: GridSpec | None = None) -> Scenario:
    """Objects placed uniformly inside the ego range without overlapping; auxiliary
    agents 40-80 m ahead of or behind the ego with arbitrary heading."""
    grid = grid or PRESETS["PP4"].grid
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CE7]))
    gt = {c: [] for c in CLASSES}
    placed: list[tuple[float, float, float]] = []
    margin = 1.0
    for _ in range(n_objects):
        cls = CLASSES[rng.choice(len(CLASSES), p=CLASS_PRIOR)]
        w, l = _sample_size(rng, cls)
        r = math.hypot(w, l) / 2
        for _attempt in range(200):
            x = rng.uniform(grid.x_min + margin, grid.x_max - margin)
            y = rng.uniform(grid.y_min + margin, grid.y_max - margin)
            if all(math.hypot(x - px, y - py) > r + pr + 0.2 for px, py, pr in placed):
                break
        else:
            continue
        yaw = rng.uniform(-math.pi, math.pi)
        placed.append((x, y, r))
        gt[cls].append(BoxBEV(float(x), float(y), w, l, float(yaw), 1.0))
    poses = []
    for _ in range(n_aux):
        side = 1.0 if rng.random() < 0.5 else -1.0
        poses.append(Pose2(side * rng.uniform(40.0, 80.0), rng.uniform(-15.0, 15.0), rng.uniform(-math.pi, math.pi)))
    return Scenario(seed, {c: tuple(v) for c, v in gt.items()}, tuple(poses))


@dataclass(frozen=True)
class StubDetectorConfig:
    """Noise model for a black-box per-agent detector.

    Noise std grows linearly with range (x2 at ``sensing_range``) and by
    ``beam_factor`` for agents with fewer than 128 beams. Scores decay as
    ``exp(-err / score_scale)`` with ``err`` the summed perturbation, so a
    noiseless detection scores 1.
    """

    sigma_pos: float = 0.1
    sigma_size: float = 0.05
    sigma_yaw: float = 0.02
    p_miss: float = 0.1
    fp_rate: float = 2.0
    beam_factor: float = 1.5
    sensing_range: float = 50.0
    score_scale: float = 0.5
    fp_score: tuple[float, float] = (0.05, 0.3)

    def __post_init__(self):
        if not 0.0 <= self.p_miss <= 1.0:
            raise ValueError("p_miss must be in [0, 1]")
        if min(self.sigma_pos, self.sigma_size, self.sigma_yaw, self.fp_rate) < 0:
            raise ValueError("noise parameters must be >= 0")
        if self.beam_factor < 1.0:
            raise ValueError("beam_factor must be >= 1")

    @classmethod
    def perfect(cls) -> StubDetectorConfig:
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 1.0, math.inf)


def visible(b_agent: BoxBEV, agent: AgentConfig, cfg: StubDetectorConfig) -> bool:
    return agent.grid.contains(b_agent.x, b_agent.y) and math.hypot(b_agent.x, b_agent.y) <= cfg.sensing_range


def stub_detect(
    s: Scenario,
    agent: AgentConfig,
    cfg: StubDetectorConfig,
    seed: int,
    agent_index: int = 0,
) -> list[BoxBEV]:
    """Noisy detections of the scenario in the agent's own frame."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, agent_index, 0xDE7]))
    to_agent = s.pose_of(agent_index).inverse()
    beam = cfg.beam_factor if agent.lidar_beams < 128 else 1.0
    dets = []
    for gt in s.all_gt():
        # fixed number of draws per object keeps streams aligned across configs
        u_miss = rng.random()
        n = rng.standard_normal(5)
        b = transform_box(gt, to_agent)
        if not visible(b, agent, cfg) or u_miss < cfg.p_miss:
            continue
        dist = math.hypot(b.x, b.y)
        f = beam * (1.0 + (dist / cfg.sensing_range if math.isfinite(cfg.sensing_range) else 0.0))
        dx, dy = cfg.sigma_pos * f * n[0], cfg.sigma_pos * f * n[1]
        dw, dl = cfg.sigma_size * f * n[2], cfg.sigma_size * f * n[3]
        dyaw = cfg.sigma_yaw * f * n[4]
        err = math.hypot(dx, dy) + 0.5 * (abs(dw) + abs(dl)) + abs(dyaw)
        score = math.exp(-err / cfg.score_scale) if cfg.score_scale > 0 else 1.0
        dets.append(
            BoxBEV(
                float(b.x + dx),
                float(b.y + dy),
                float(max(0.1, b.w + dw)),
                float(max(0.1, b.l + dl)),
                float(b.yaw + dyaw),
                float(score),
            )
        )
    n_fp = rng.poisson(cfg.fp_rate) if cfg.fp_rate > 0 else 0
    g = agent.grid
    for _ in range(n_fp):
        for _attempt in range(100):
            x, y = rng.uniform(g.x_min, g.x_max), rng.uniform(g.y_min, g.y_max)
            if math.hypot(x, y) <= cfg.sensing_range:
                break
        else:
            continue
        cls = CLASSES[rng.choice(len(CLASSES), p=CLASS_PRIOR)]
        w, l = _sample_size(rng, cls)
        dets.append(BoxBEV(float(x), float(y), w, l, float(rng.uniform(-math.pi, math.pi)), float(rng.uniform(*cfg.fp_score))))
    return dets


def visible_gt(s: Scenario, agent: AgentConfig, cfg: StubDetectorConfig, agent_index: int) -> list[BoxBEV]:
    """Ground truth (ego frame) that the agent can observe."""
    to_agent = s.pose_of(agent_index).inverse()
    return [b for b in s.all_gt() if visible(transform_box(b, to_agent), agent, cfg)]
