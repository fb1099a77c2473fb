"""Command-line front end: calibration tables, single drops, full sweeps."""

import argparse
import json
import sys
from pathlib import Path

from . import bench
from .qoe import (MOS_REPORT_RANGE, calibrate_web, video_sinr_threshold,
                  web_sinr_threshold)


def _load_config(path) -> bench.ExperimentConfig:
    if path is None:
        return bench.ExperimentConfig()
    return bench.ExperimentConfig.load(path)


def cmd_calibrate(args) -> int:
    cfg = _load_config(args.config)
    scale, offset = calibrate_web(cfg.web.rate_min_bps_hz, cfg.web.rate_max_bps_hz,
                                  cfg.web.calibration_page_kb * bench.KB,
                                  cfg.bandwidth_hz)
    print(f"K1 = {scale:.12g}")
    print(f"K2 = {offset:.12g}")
    print()
    k = cfg.topology.num_users
    web = bench.web_profile(cfg, k)
    video = bench.video_profile(cfg)
    print("per-user SINR floors (linear)")
    print(f"{'user':>4}  {'service':>7}  {'page_kb':>8}  {'mos_min':>7}  "
          f"{'A(mos_min)':>12}  {'sinr_min':>10}  {'floor':>12}")
    for svc_name, mos_min in (("web", cfg.web.mos_min), ("video", cfg.video.mos_min)):
        if svc_name not in cfg.services:
            continue
        for i in range(k):
            if svc_name == "web":
                page = web[i].page_size_bits / bench.KB
                a = web_sinr_threshold(mos_min, web[i]) \
                    if mos_min > MOS_REPORT_RANGE[0] else 0.0
                page_txt = f"{page:8.0f}"
            else:
                a = video_sinr_threshold(mos_min, video) \
                    if mos_min > MOS_REPORT_RANGE[0] else 0.0
                page_txt = f"{'-':>8}"
            floor = max(a, cfg.sinr_min)
            print(f"{i:>4}  {svc_name:>7}  {page_txt}  {mos_min:7.2f}  "
                  f"{a:12.4f}  {cfg.sinr_min:10.4f}  {floor:12.4f}")
    return 0


def cmd_solve_drop(args) -> int:
    cfg = _load_config(args.config)
    if args.service not in cfg.services:
        print(f"service {args.service!r} not enabled in the config", file=sys.stderr)
        return 2
    point = bench.SweepPoint(service=args.service,
                             mbs_antennas=cfg.sweep.mbs_antennas[0],
                             num_small=cfg.topology.num_small,
                             sbs_antennas=cfg.sweep.sbs_antennas[0])
    result = bench.run_drop(cfg, point, args.seed)
    json.dump(result.to_jsonable(), sys.stdout, indent=2)
    print()
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)

    def progress(r):
        tag = r.status if not r.feasible else f"mean MOS {r.mean_mos:.3f}"
        print(f"{r.service} M={r.mbs_antennas} N={r.sbs_antennas} "
              f"Ns={r.num_small} drop {r.drop}: {tag} "
              f"({r.wall_s:.1f}s, {r.iterations} it)", file=sys.stderr)

    summary = bench.run_sweep(cfg, args.out, progress=progress)
    print(f"{'service':>7}  {'M':>3}  {'N':>2}  {'Ns':>2}  {'feasible':>8}  "
          f"{'mean_mos':>9}  {'ci':>7}")
    for p in summary.points:
        print(f"{p.service:>7}  {p.mbs_antennas:>3}  {p.sbs_antennas:>2}  "
              f"{p.num_small:>2}  {p.feasible_drops:>4}/{p.drops:<3}  "
              f"{p.mean_mos:9.4f}  {p.ci_half_width:7.4f}")
    print(f"wrote {summary.results_csv}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qoebeam",
        description="QoE-aware beamforming: calibration, single drops, sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate",
                       help="print web-MOS constants and per-user SINR floors")
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("solve-drop", help="solve one drop, JSON to stdout")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--service", choices=("web", "video"), required=True)
    p.add_argument("--seed", type=int, required=True,
                   help="drop index within the config's master seed")
    p.set_defaults(func=cmd_solve_drop)

    p = sub.add_parser("sweep", help="run the full grid and write CSV + charts")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_sweep)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
