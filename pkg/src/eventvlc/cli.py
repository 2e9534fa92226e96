"""Command line: simulate, receive, run, sweep and codebook."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import InvalidArgument, SyncFailed
from .events import read_events, read_ground_truth, write_events, write_ground_truth
from .experiment import (EXIT_OK, EXIT_SYNC_FAILED, EXIT_TRACKING_LOST, MODES, evaluate, rate_summary, read_symbols,
                         run_trial, simulate, sweep, write_reports, write_symbols)
from .pipeline import receive


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value configuration file")
    g = p.add_argument_group("configuration overrides")
    for key in cfgmod.config_keys():
        g.add_argument(f"--{key}", dest=f"cfg:{key}", metavar="VALUE")


def _config(args):
    values = cfgmod.load(args.config) if args.config else {}
    for k, v in vars(args).items():
        if k.startswith("cfg:") and v is not None:
            values[k[4:]] = v
    return cfgmod.build(values)


def _print_ranges(ranges, out=sys.stdout) -> None:
    print("bin_mid_m  rmse_m  single_m  theory_0.5px_m  frac>=0.5m", file=out)
    for a, s in zip(ranges.rows("aggregate"), ranges.rows("single")):
        print(f"{a['bin_mid_m']:8g}  {a['rmse_m']:.4f}  {s['rmse_m']:.4f}  {a['theory_0p5px_m']:.4f}  "
              f"{a['frac_ge_0p5m']:.4f}", file=out)


def cmd_simulate(args) -> int:
    config = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    session, sim = simulate(config, args.seed)
    write_events(out / args.events_name, sim.events)
    write_ground_truth(out / "truth.csv", sim.truth_t_us, sim.truth_distance)
    write_symbols(out / "symbols.csv", session.symbols)
    (out / "config.txt").write_text(cfgmod.dump(config))
    print(f"{sim.events.size} events over {session.n_frames} frames -> {out}")
    return EXIT_OK


def cmd_receive(args) -> int:
    config = _config(args)
    events = read_events(args.events)
    truth_t, truth_d = read_ground_truth(args.truth)
    symbols = read_symbols(args.symbols)
    try:
        res = receive(events, config.tx, config.camera, config.layout, config.receiver, n_frames=symbols.shape[1])
    except SyncFailed as exc:
        print(f"sync failed: {exc}", file=sys.stderr)
        return EXIT_SYNC_FAILED
    report, ranges = evaluate(res, config, symbols, truth_t, truth_d)
    stats = {f"rx_{k}": v for k, v in res.stats.items()}
    write_reports(Path(args.out), report, ranges, stats)
    print(f"BER {report.ber:.3g} over {report.bits} bits")
    _print_ranges(ranges)
    return EXIT_TRACKING_LOST if res.stats.get("tracking_lost") else EXIT_OK


def cmd_run(args) -> int:
    config = _config(args)
    if args.out:
        config = replace(config, output_dir=args.out)
    seed = args.seed if args.seed is not None else config.seeds[0]
    t = run_trial(config, seed)
    if config.output_dir:
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)
        (Path(config.output_dir) / "config.txt").write_text(cfgmod.dump(config))
    if t.ranges is None:
        print(f"trial failed ({t.status}): {t.message}", file=sys.stderr)
        return t.exit_code
    print(f"seed {seed}, speed {t.speed:g} m/s: BER {t.ber.ber:.3g} over {t.ber.bits} bits")
    _print_ranges(t.ranges)
    for line in rate_summary(config.tx, t.ranges.scan_rate):
        print(line)
    if t.message:
        print(t.message, file=sys.stderr)
    return t.exit_code


def cmd_sweep(args) -> int:
    base = _config(args)
    if args.out:
        base = replace(base, output_dir=args.out)
    speeds = args.speeds or [base.trajectory.speed]
    configs = [replace(base, trajectory=replace(base.trajectory, speed=s)) for s in speeds]
    res = sweep(configs, modes=args.modes, workers=args.workers)
    target = Path(base.output_dir or ".")
    target.mkdir(parents=True, exist_ok=True)
    res.write_csv(target / "summary.csv")
    (target / "config.txt").write_text(cfgmod.dump(base))
    failed = [t for t in res.trials if t.ranges is None]
    print(f"{len(res.trials)} trials, {len(failed)} failed; summary -> {target / 'summary.csv'}")
    for t in failed:
        print(f"  speed {t.speed:g} seed {t.seed}: {t.status} {t.message}", file=sys.stderr)
    return EXIT_OK if not failed else 1


def cmd_codebook(args) -> int:
    config = _config(args)
    tx = config.tx
    print(f"pilots (order {tx.pilot_len}):")
    for k, cw in enumerate(tx.pilots()):
        print(f"  cluster {k:2d}  row {cw.row:2d}{'~' if cw.inverted else ' '}  {_chips(cw.chips)}")
    info = tx.info_book()
    print(f"info codebook ({len(info)} entries, {info.bits_per_symbol} bits/symbol):")
    for i, cw in enumerate(info):
        print(f"  {i:2d}  row {cw.row:2d}{'~' if cw.inverted else ' '}  {_chips(cw.chips)}")
    for line in rate_summary(tx):
        print(line)
    return EXIT_OK


def _chips(chips) -> str:
    return "".join("+" if c > 0 else "-" for c in np.asarray(chips))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eventvlc", description="Event-camera VLC/VLP simulator and receiver")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated event stream, ground truth and payload")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--events-name", default="events.bin", help="file name; .csv selects the text format")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("receive", help="decode and range a recorded event stream")
    _add_config_flags(p)
    p.add_argument("--events", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--symbols", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_receive)

    p = sub.add_parser("run", help="simulate and receive one seeded trial")
    _add_config_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="trials over speeds and seeds with a pooled summary")
    _add_config_flags(p)
    p.add_argument("--speeds", type=float, nargs="+")
    p.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("codebook", help="print pilot and info codes with rate accounting")
    _add_config_flags(p)
    p.set_defaults(func=cmd_codebook)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 64


if __name__ == "__main__":
    sys.exit(main())
