"""Acceptance gate. Every criterion runs at its stated tolerance and emits one
PASS/FAIL line (printed inline and repeated in the pytest terminal summary)."""

import hashlib
import math
import time

import numpy as np
import pytest

from boxfuse.codec import (
    BoxMessage,
    FieldSpec,
    MessageSchema,
    bandwidth_bps,
    decode_message,
    dequantize_field,
    deserialize,
    encode_message,
    quantize_field,
    serialize,
)
from boxfuse.efs import efs_forward, init_params
from boxfuse.geometry import transform_box
from boxfuse.loss import LossWeights, cos_align, detection_loss, grad_cos_align, total_loss
from boxfuse.masks import build_masks
from boxfuse.raster import GridSpec, footprint_mask, grid_dims, rasterize
from boxfuse.sim.ablation import SweepSetup, ablate_kmax, ablate_quant_bits, ego_only, late_union, pooled, transmit
from boxfuse.sim.agents import PRESETS, AgentConfig
from boxfuse.sim.evaluate import evaluate_frames
from boxfuse.sim.pipeline import run_pipeline
from boxfuse.sim.scenario import StubDetectorConfig, gen_scenario, stub_detect
from boxfuse.tensor import ConvParams, conv2d
from oracles import brute_masks, brute_rasterize, naive_conv2d

PRESET_NAMES = ("PP4", "PP6", "PP8", "SD2", "SD3")


def _digest(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def test_c1_wire_budget(verdict):
    t0 = time.perf_counter()
    sch = PRESETS["PP4"].message_schema(bits=8, k_max=20)
    wire = serialize(encode_message([], sch))
    bps = bandwidth_bps(sch, 10.0)
    dt = time.perf_counter() - t0
    ok = len(wire) == 120 and bps == 9600 and bps / 1e6 == 0.0096 and dt < 1.0
    verdict("1", ok, f"{len(wire)} bytes, {bps:g} bps @10Hz ({bps / 1e6:g} Mbps), {dt * 1e3:.1f} ms")


def test_c2_grid_geometry(verdict):
    expected = {"PP4": (512, 192), "PP6": (352, 128), "PP8": (256, 96), "SD2": (1024, 384), "SD3": (704, 256)}
    got = {n: grid_dims(PRESETS[n].grid) for n in expected}
    verdict("2", got == expected, ", ".join(f"{n}={got[n][0]}x{got[n][1]}" for n in expected))


def test_c3_quantizer_fidelity(verdict):
    t0 = time.perf_counter()
    sch = PRESETS["PP4"].message_schema(bits=8)
    worst = 0.0
    # every field, every supported integer width, dense sweep including endpoints
    for bits in (4, 8, 16):
        for f in sch.with_bits(bits).fields:
            vs = np.linspace(f.v_min, f.v_max, 20_001)
            if f.v_max == math.pi:
                vs = vs[:-1]  # yaw range is half-open
            excess = max(abs(v - dequantize_field(quantize_field(float(v), f), f)) - f.scale / 2 for v in vs)
            worst = max(worst, excess)
    rng = np.random.default_rng(2024)
    mismatches = 0
    for i in range(10_000):
        bits = (4, 8, 16, 32)[i % 4]
        s = sch.with_bits(bits)
        codes = rng.integers(0, (1 << bits) - 1, (20, 6), endpoint=True, dtype=np.int64)
        m = BoxMessage(codes, s)
        wire = serialize(m)
        back = deserialize(wire, s)
        mismatches += int(back != m or serialize(back) != wire)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and mismatches == 0 and dt < 30
    verdict("3", ok, f"max(err - s/2) = {worst:.2e}, {mismatches} of 10000 round trips differ, {dt:.1f} s")


def _random_box_set(rng, g, n):
    from boxfuse.geometry import BoxBEV

    boxes = []
    for _ in range(n):
        yaw = float(rng.choice([0.0, math.pi / 2, rng.uniform(-math.pi, math.pi)]))
        boxes.append(
            BoxBEV(
                rng.uniform(g.x_min - 3, g.x_max + 3),
                rng.uniform(g.y_min - 3, g.y_max + 3),
                rng.uniform(0.3, 3.0),
                rng.uniform(0.3, 10.0),
                yaw,
                float(rng.uniform(0.05, 1.0)),
            )
        )
    return boxes


def test_c4_rasterizer_oracle(verdict):
    t0 = time.perf_counter()
    bad = []
    for k, name in enumerate(PRESET_NAMES):
        g = PRESETS[name].grid
        rng = np.random.default_rng(100 + k)
        for _ in range(200):
            boxes = _random_box_set(rng, g, int(rng.integers(1, 8)))
            if not np.array_equal(rasterize(boxes, g).values, brute_rasterize(boxes, g, footprint_mask)):
                bad.append(name)
    dt = time.perf_counter() - t0
    verdict("4", not bad and dt < 120, f"1000 box sets over 5 grids, {len(bad)} mismatches, {dt:.1f} s")


def test_c5_mask_oracle(verdict):
    t0 = time.perf_counter()
    bad = 0
    n = 0
    for name in PRESET_NAMES:
        a = PRESETS[name]
        rows, cols = a.feature_dims
        rng = np.random.default_rng(len(name) * 7 + ord(name[-1]))
        for _ in range(4):
            bev = rasterize(_random_box_set(rng, a.grid, int(rng.integers(0, 25))), a.grid).values
            m = build_masks(bev, rows, cols)
            obj, bg = brute_masks(bev, rows, cols, 0.0, 2)
            bad += int(not (np.array_equal(m.obj, obj) and np.array_equal(m.bg, bg)))
            n += 1
    dt = time.perf_counter() - t0
    verdict("5", bad == 0 and dt < 30, f"{n} maps at tau=0, d_r=2, {bad} mismatches, {dt:.1f} s")


def test_c6_efs_shape_contract(verdict):
    t0 = time.perf_counter()
    notes = []
    ok = True
    for name in PRESET_NAMES:
        a = PRESETS[name]
        cfg = a.efs_config()
        rng = np.random.default_rng(6)
        x = rasterize(_random_box_set(rng, a.grid, 15), a.grid)
        f1 = rng.standard_normal((*a.feature_dims, a.feature_channels)).astype(np.float32)
        out1 = efs_forward(x, f1, init_params(cfg, 11))
        out2 = efs_forward(x, f1, init_params(cfg, 11))
        expect = (*a.feature_dims, a.feature_channels)
        this = out1.shape == expect and bool(np.all(np.isfinite(out1))) and out1.tobytes() == out2.tobytes()
        ok &= this
        notes.append(f"{name}:{'x'.join(map(str, out1.shape))}")
    worst = 0.0
    for seed in range(30):
        r = np.random.default_rng(seed)
        h, w, cin, cout = (int(v) for v in r.integers(1, [9, 9, 5, 5]))
        k, stride = int(r.choice([1, 3])), int(r.choice([1, 2]))
        x = r.uniform(-1, 1, (h, w, cin)).astype(np.float32)
        wt = r.uniform(-1, 1, (cout, cin, k, k)).astype(np.float32)
        b = r.uniform(-1, 1, cout).astype(np.float32)
        worst = max(worst, float(np.abs(conv2d(x, ConvParams(wt, b, stride)) - naive_conv2d(x, wt, b, stride)).max()))
    dt = time.perf_counter() - t0
    ok = ok and worst <= 1e-6 and dt < 120
    verdict("6", ok, f"{' '.join(notes)}; conv vs naive max |diff| {worst:.1e}; {dt:.1f} s")


def test_c7_loss_correctness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    checks = []
    a, b = rng.standard_normal((2, 6, 5, 8))
    m = (rng.random((6, 5)) < 0.5).astype(float)
    m[0, 0] = 1
    v = cos_align(a, b, m)
    checks.append(0.0 <= v <= 2.0)
    checks.append(abs(cos_align(3.7 * a, b, m) - v) <= 1e-6)
    checks.append(abs(cos_align(a, a, m)) <= 1e-12)
    checks.append(abs(cos_align(a, -a, m) - 2.0) <= 1e-12)
    worst = 0.0
    h = 1e-6
    for _ in range(50):
        a, b = rng.standard_normal((2, 3, 4, 5))
        m = (rng.random((3, 4)) < 0.6).astype(float)
        g, _ = grad_cos_align(a, b, m)
        fd = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            ap, am = a.copy(), a.copy()
            ap[idx] += h
            am[idx] -= h
            fd[idx] = (cos_align(ap, b, m) - cos_align(am, b, m)) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12))
    w = LossWeights()
    weights_ok = (w.a_cls, w.a_reg, w.a_obj, w.a_bg) == (1.0, 2.0, 1.0, 0.5)
    det = detection_loss(0.4, 0.1, w)
    combo_ok = abs(det - 0.6) <= 1e-12 and abs(total_loss(det, [0.2, 0.4], w) - 0.9) <= 1e-12
    dt = time.perf_counter() - t0
    ok = all(checks) and worst <= 1e-4 and weights_ok and combo_ok and dt < 60
    verdict("7", ok, f"bounds/scale/zero/antipodal {sum(checks)}/4, grad rel err {worst:.1e}, weights 1/2/1/0.5, {dt:.1f} s")


@pytest.fixture(scope="module")
def default_suite():
    setup = SweepSetup()
    t0 = time.perf_counter()
    bits_rows = pooled(ablate_quant_bits((4, 8, 16, 32), setup))
    k_rows = pooled(ablate_kmax((0, 5, 10, 20, 40, 60), setup))
    base = ego_only(setup)
    return {r["bits"]: r for r in bits_rows}, {r["k_max"]: r for r in k_rows}, base, time.perf_counter() - t0


def test_c8a_int4_below_int8(verdict, default_suite):
    by_bits, _, _, dt = default_suite
    i4, i8 = by_bits[4]["mAP@0.7"], by_bits[8]["mAP@0.7"]
    verdict("8(a)", i4 < i8 and dt < 600, f"INT4 {i4:.4f} < INT8 {i8:.4f} (margin {i8 - i4:.4f}); suite {dt:.1f} s")


def test_c8b_int16_close_to_int8(verdict, default_suite):
    by_bits, _, _, _ = default_suite
    i8, i16 = by_bits[8]["mAP@0.7"], by_bits[16]["mAP@0.7"]
    gap = abs(i16 - i8)
    verdict("8(b)", gap <= 0.02, f"|INT16 {i16:.4f} - INT8 {i8:.4f}| = {gap:.4f} (limit 0.02)")


def test_c8c_kmax0_equals_ego_only(verdict, default_suite):
    _, by_k, base, _ = default_suite
    row = by_k[0]
    same = all(row[k] == v for k, v in base.items())
    trend = " ".join(f"K{k}={by_k[k]['mAP@0.7']:.4f}" for k in sorted(by_k))
    verdict("8(c)", same, f"K_max=0 mAP@0.7 {row['mAP@0.7']:.4f} == ego-only {base['mAP@0.7']:.4f}; {trend}")


def test_c9_adaptation_free(verdict):
    ego = PRESETS["PP8"]
    novel = AgentConfig("novel", GridSpec(-57.6, 57.6, -28.8, 28.8, 0.45, 0.45), 96, 8, lidar_beams=48)
    params = init_params(ego.efs_config(), 3)
    before = _digest(params.tensors())
    s = gen_scenario(9, 40, 1, grid=ego.grid)
    schema = ego.message_schema(8, 20)
    report = run_pipeline(s, [ego, novel], schema, params)
    after = _digest(params.tensors())
    a = report.agents[0]
    ok = (
        before == after
        and a.feature_shape == (*ego.feature_dims, ego.feature_channels)
        and a.n_bytes == 120
        and report.total_loss is not None
        and math.isfinite(report.total_loss)
    )
    verdict(
        "9",
        ok,
        f"novel {novel.bev_dims[0]}x{novel.bev_dims[1]} @0.45 m, 48 beams -> {'x'.join(map(str, a.feature_shape))}, "
        f"{len(a.decoded)} boxes, params unchanged={before == after}",
    )


def test_c10_lossless_limit(verdict):
    t0 = time.perf_counter()
    perfect = StubDetectorConfig.perfect()
    ego, aux = PRESETS["PP4"], PRESETS["PP4"]
    ap_fail = []
    worst = -1.0
    for seed in range(50):
        s = gen_scenario(seed, 40, 1, grid=ego.grid)
        ego_dets = stub_detect(s, ego, perfect, seed, 0)
        aux_dets = stub_detect(s, aux, perfect, seed, 1)
        received, _ = transmit(aux_dets, aux, s, 1, 16, 20)
        sch = aux.message_schema(16, 20)
        decoded = decode_message(deserialize(serialize(encode_message(aux_dets, sch)), sch))
        kept = sorted(aux_dets, key=lambda b: -b.score)[:20]
        for d, b in zip(decoded, kept):
            for j, (dv, bv) in enumerate(zip(d.as_tuple(), b.as_tuple())):
                diff = abs(dv - bv)
                if j == 4:
                    diff = abs(math.remainder(dv - bv, 2 * math.pi))
                worst = max(worst, diff - sch.fields[j].scale / 2)
        report = evaluate_frames([(late_union(ego_dets, received), s.gt)], thresholds=(0.7,))
        if report.mean_ap(0.7) != 1.0:
            ap_fail.append(seed)
    dt = time.perf_counter() - t0
    ok = not ap_fail and worst <= 1e-9 and dt < 120
    verdict("10", ok, f"AP@0.7 == 1 on {50 - len(ap_fail)}/50 seeds, max(err - s/2) = {worst:.1e}, {dt:.1f} s")
