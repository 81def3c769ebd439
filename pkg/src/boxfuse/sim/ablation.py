"""Desk-scale sweeps over codec precision and message size.

Fusion here is a late union: the ego's own detections plus every decoded,
ego-frame auxiliary box, deduplicated per size class with BEV NMS. Scores are
pooled over all seeds before AP is computed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..codec import decode_message, deserialize, encode_message, serialize
from ..geometry import BoxBEV, nms_bev, transform_box
from .agents import AgentConfig, preset
from .evaluate import THRESHOLDS, evaluate_frames
from .scenario import CLASSES, Scenario, StubDetectorConfig, gen_scenario, split_by_class, stub_detect

UNION_NMS_IOU = 0.1
DEFAULT_SEEDS = tuple(range(50))
DEFAULT_N_OBJECTS = 40


def late_union(ego_boxes: Sequence[BoxBEV], aux_boxes: Sequence[BoxBEV], iou_threshold: float = UNION_NMS_IOU):
    """Per-class NMS over ego detections followed by ego-frame auxiliary boxes."""
    merged = split_by_class(list(ego_boxes) + list(aux_boxes))
    return {c: nms_bev(merged[c], iou_threshold) for c in CLASSES}


def transmit(boxes: Sequence[BoxBEV], agent: AgentConfig, s: Scenario, agent_index: int, bits: int, k_max: int):
    """Encode, serialize, parse and decode one agent's boxes; returns (ego-frame boxes, bytes)."""
    schema = agent.message_schema(bits, k_max)
    wire = serialize(encode_message(boxes, schema))
    decoded = decode_message(deserialize(wire, schema))
    pose = s.pose_of(agent_index)
    return [transform_box(b, pose) for b in decoded], len(wire)


@dataclass
class SweepSetup:
    ego: AgentConfig = field(default_factory=lambda: preset("PP4"))
    aux: tuple[AgentConfig, ...] = field(default_factory=lambda: (preset("PP4"),))
    detector: StubDetectorConfig = field(default_factory=StubDetectorConfig)
    n_objects: int = DEFAULT_N_OBJECTS
    seeds: Sequence[int] = DEFAULT_SEEDS


def _detections(setup: SweepSetup, seed: int):
    s = gen_scenario(seed, setup.n_objects, n_aux=len(setup.aux), grid=setup.ego.grid)
    ego = stub_detect(s, setup.ego, setup.detector, seed, 0)
    aux = [stub_detect(s, a, setup.detector, seed, i) for i, a in enumerate(setup.aux, start=1)]
    return s, ego, aux


def _sweep(setup: SweepSetup, points: Iterable[tuple[int, int]]) -> list[dict]:
    points = list(points)
    per_point = {p: [] for p in points}
    rows = []
    for seed in sorted(setup.seeds):
        s, ego, aux = _detections(setup, seed)
        for bits, k_max in points:
            received = []
            n_bytes = 0
            for i, (agent, dets) in enumerate(zip(setup.aux, aux), start=1):
                boxes, nb = transmit(dets, agent, s, i, bits, k_max)
                received.extend(boxes)
                n_bytes = nb
            frame = (late_union(ego, received), s.gt)
            per_point[(bits, k_max)].append(frame)
            rows.append({"seed": seed, "bits": bits, "k_max": k_max, "bytes_per_agent": n_bytes, **evaluate_frames([frame]).row()})
    for bits, k_max in points:
        report = evaluate_frames(per_point[(bits, k_max)])
        nb = setup.aux[0].message_schema(bits, k_max).payload_bytes if setup.aux else 0
        rows.append({"seed": "pooled", "bits": bits, "k_max": k_max, "bytes_per_agent": nb, **report.row()})
    return rows


def ego_only(setup: SweepSetup) -> dict:
    frames = []
    for seed in sorted(setup.seeds):
        s, ego, _ = _detections(setup, seed)
        frames.append((late_union(ego, []), s.gt))
    return evaluate_frames(frames).row()


def ablate_quant_bits(bits_list: Sequence[int] = (4, 8, 16, 32), setup: SweepSetup | None = None, k_max: int = 20) -> list[dict]:
    return _sweep(setup or SweepSetup(), [(b, k_max) for b in bits_list])


def ablate_kmax(k_list: Sequence[int] = (0, 5, 10, 20, 40, 60), setup: SweepSetup | None = None, bits: int = 8) -> list[dict]:
    return _sweep(setup or SweepSetup(), [(bits, k) for k in k_list])


def pooled(rows: Sequence[dict]) -> list[dict]:
    return [r for r in rows if r["seed"] == "pooled"]


CSV_COLUMNS = ["seed", "bits", "k_max", "bytes_per_agent"] + [
    f"AP_{c}@{t}" for t in THRESHOLDS for c in CLASSES
] + [f"mAP@{t}" for t in THRESHOLDS]


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
