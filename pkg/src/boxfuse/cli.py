"""Command-line entry point.

Exit codes: 0 ok, 2 input parse error, 3 wire-format error, 4 budget
violation, 5 config error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .codec import bandwidth_bps, decode_message, deserialize, encode_message, serialize
from .config import RunConfig, load_config
from .efs import init_params
from .errors import BudgetError, ConfigError, DecodeError
from .geometry import BoxParseError, Pose2, format_boxes, parse_boxes, transform_box
from .raster import rasterize, write_pgm
from .sim.ablation import SweepSetup, ablate_kmax, ablate_quant_bits, late_union, pooled, rows_to_csv, transmit
from .sim.agents import preset
from .sim.evaluate import evaluate_frames
from .sim.pipeline import run_pipeline
from .sim.scenario import gen_scenario, stub_detect
from .tensor import write_feature_map

EXIT_PARSE, EXIT_WIRE, EXIT_BUDGET, EXIT_CONFIG = 2, 3, 4, 5


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "agent", None):
        cfg.ego = preset(args.agent)
    if getattr(args, "bits", None) is not None:
        cfg.bits = args.bits
    if getattr(args, "kmax", None) is not None:
        cfg.k_max = args.kmax
    if getattr(args, "budget_bytes", None) is not None:
        cfg.budget_bytes = args.budget_bytes
    if getattr(args, "rate_hz", None) is not None:
        cfg.rate_hz = args.rate_hz
    if getattr(args, "out_dir", None):
        cfg.out_dir = args.out_dir
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    cfg.schema()
    return cfg


def cmd_encode(args) -> int:
    cfg = _run_config(args)
    schema = cfg.schema()
    try:
        boxes = parse_boxes(Path(args.boxes).read_text())
    except BoxParseError as exc:
        return _fail(EXIT_PARSE, f"{args.boxes}: {exc}")
    wire = serialize(encode_message(boxes, schema))
    Path(args.output).write_bytes(wire)
    bps = bandwidth_bps(schema, cfg.rate_hz)
    print(f"{len(wire)} bytes")
    print(f"{bps:g} bps @{cfg.rate_hz:g}Hz")
    return 0


def cmd_decode(args) -> int:
    cfg = _run_config(args)
    schema = cfg.schema()
    data = Path(args.message).read_bytes()
    try:
        boxes = decode_message(deserialize(data, schema))
    except DecodeError as exc:
        return _fail(EXIT_WIRE, f"{args.message}: {exc}")
    pose = Pose2(*args.pose)
    text = format_boxes(transform_box(b, pose) for b in boxes)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_rasterize(args) -> int:
    cfg = _run_config(args)
    try:
        boxes = parse_boxes(Path(args.boxes).read_text())
    except BoxParseError as exc:
        return _fail(EXIT_PARSE, f"{args.boxes}: {exc}")
    bev = rasterize(boxes, cfg.ego.grid)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.boxes).stem
    write_pgm(bev, out / f"{stem}.pgm")
    write_feature_map(bev.as_feature_map(), out / f"{stem}.fmap")
    print(f"{bev.shape[0]}x{bev.shape[1]} grid, {int((bev.values > 0).sum())} occupied cells")
    return 0


def cmd_simulate(args) -> int:
    cfg = _run_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = init_params(cfg.ego.efs_config(), cfg.params_seed)
    agents = [cfg.ego, *cfg.aux]
    rows = []
    for seed in sorted(cfg.seeds):
        s = gen_scenario(seed, cfg.n_objects, n_aux=len(cfg.aux), grid=cfg.ego.grid)
        report = run_pipeline(s, agents, cfg.schema(), params, cfg.budget_bits, cfg.detector, weights=cfg.weights)
        (out / f"report_seed{seed}.json").write_text(report.to_json() + "\n")
        for i, a in enumerate(report.agents, start=1):
            write_pgm(a.bev, out / f"bev_seed{seed}_aux{i}_{a.name}.pgm")
        ego_dets = stub_detect(s, cfg.ego, cfg.detector, seed, 0)
        received = []
        for i, agent in enumerate(cfg.aux, start=1):
            dets = stub_detect(s, agent, cfg.detector, seed, i)
            received.extend(transmit(dets, agent, s, i, cfg.bits, cfg.k_max)[0])
        metrics = evaluate_frames([(late_union(ego_dets, received), s.gt)]).row()
        n_bytes = report.agents[0].n_bytes if report.agents else 0
        rows.append({"seed": seed, "bits": cfg.bits, "k_max": cfg.k_max, "bytes_per_agent": n_bytes, **metrics})
        print(f"seed {seed}: {report.total_bits // 8} bytes sent, mAP@0.7={metrics['mAP@0.7']:.3f}")
    (out / "metrics.csv").write_text(rows_to_csv(rows))
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    setup = SweepSetup(ego=cfg.ego, aux=tuple(cfg.aux), detector=cfg.detector, n_objects=cfg.n_objects, seeds=range(cfg.ablation_seeds))
    if args.mode == "bits":
        rows = ablate_quant_bits(cfg.ablation_bits, setup, k_max=cfg.k_max)
    else:
        rows = ablate_kmax(cfg.ablation_kmax, setup, bits=cfg.bits)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"ablation_{args.mode}.csv"
    path.write_text(rows_to_csv(rows))
    for r in pooled(rows):
        print(f"bits={r['bits']} k_max={r['k_max']} bytes={r['bytes_per_agent']} mAP@0.7={r['mAP@0.7']:.4f}")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boxfuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, agent=True):
        p.add_argument("--config", help="JSON run configuration")
        if agent:
            p.add_argument("--agent", help="agent preset whose detection range sets the x/y quantizer (default PP4)")
        p.add_argument("--bits", type=int)
        p.add_argument("--kmax", type=int)
        p.add_argument("--rate-hz", type=float)

    p = sub.add_parser("encode", help="boxes text file -> wire bytes")
    p.add_argument("boxes")
    p.add_argument("-o", "--output", required=True)
    common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="wire bytes -> boxes text file")
    p.add_argument("message")
    p.add_argument("-o", "--output")
    p.add_argument("--pose", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("X", "Y", "YAW"))
    common(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("rasterize", help="boxes text file -> PGM and feature-map dumps")
    p.add_argument("boxes")
    p.add_argument("--out-dir")
    common(p)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("simulate", help="run the full pipeline on seeded scenarios")
    common(p, agent=False)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--budget-bytes", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ablate", help="quantization or K_max sweep")
    common(p, agent=False)
    p.add_argument("--mode", choices=("bits", "kmax"), required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BudgetError as exc:
        return _fail(EXIT_BUDGET, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except DecodeError as exc:
        return _fail(EXIT_WIRE, str(exc))
    except OSError as exc:
        return _fail(EXIT_PARSE, str(exc))


if __name__ == "__main__":
    sys.exit(main())
