"""``relay-grid`` command line.

Subcommands::

    relay-grid run --preset fig3 [--out results/]
    relay-grid run --config my.json
    relay-grid analyze -K 2 --ld 3 --le 2 --snr 0 4 8
    relay-grid simulate -K 2 --ld 3 --le 2 --snr 8 --slots 1e6 --policy maxlink
    relay-grid diversity --lo 6 --hi 7 --csv results/table3_proposed_6_7_simulated.csv
    relay-grid preset fig6 > fig6.json

Set ``RELAY_GRID_THREADS`` to run sweep points in parallel threads.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiments import (
    CSV_HEADER,
    ConfigError,
    CurveRecord,
    _fmt,
    _row,
    get_preset,
    load_config,
    read_csv,
    run_experiment,
    summary_text,
    write_csv,
)
from .markov import OutageCurve, analyze, estimate_diversity
from .policy import PolicyKind
from .simulation import sweep
from .state import DEFAULT_STATE_CAP, NetworkConfig, SystemState


def _network_args(p: argparse.ArgumentParser):
    p.add_argument("-K", "--relays", type=int, default=2)
    p.add_argument("--ld", type=int, default=3, help="data buffer capacity (packets)")
    p.add_argument("--le", type=int, default=2, help="energy storage capacity (E_r units)")
    p.add_argument("--rho", type=float, default=0.5, help="harvesting coefficient")
    p.add_argument("--alpha", type=float, default=1.0, help="relay power coefficient P_r/P_s")
    p.add_argument("--gain", type=float, default=1.0, help="mean channel gain of every link")
    p.add_argument("--eta", type=float, default=1.0, help="target rate, bits/s/Hz")
    p.add_argument("--snr", type=float, nargs="+", default=[0, 5, 10, 15], help="SNR grid, dB")
    p.add_argument("--out", help="CSV output path (default stdout)")


def _config(args) -> NetworkConfig:
    return NetworkConfig.uniform(args.relays, args.ld, args.le, mean_gain=args.gain,
                                 harvest_coeff=args.rho, relay_coeff=args.alpha,
                                 target_rate=args.eta)


def _emit(curve: CurveRecord, out):
    if out:
        write_csv(curve, out)
        return
    cols = CSV_HEADER.split(",")
    print(CSV_HEADER)
    for r in curve.rows:
        print(",".join(_fmt(r[c]) for c in cols))


def cmd_run(args) -> int:
    preset = load_config(args.config) if args.config else get_preset(args.preset)
    report = run_experiment(preset, args.out, cap=args.state_cap, slots_scale=args.slots_scale)
    sys.stdout.write(summary_text(report))
    return 0 if report.ok else 1


def cmd_analyze(args) -> int:
    cfg = _config(args)
    rows = []
    for snr in sorted(args.snr):
        a = analyze(cfg, snr, cap=args.state_cap)
        rows.append(_row(snr, a.p_out, "analytical", "proposed", cfg, None))
        if args.dump_matrix:
            with open(f"{args.dump_matrix}_{snr:g}dB.txt", "w") as fh:
                a.transitions.dump(fh)
    _emit(CurveRecord("analyze", "analytical", "proposed", rows), args.out)
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    curve = sweep(cfg, args.policy, sorted(args.snr), int(args.slots), args.seed,
                  args.warmup, analytical=False)
    rows = [_row(s, p, "simulated", args.policy, cfg, ci)
            for s, p, ci in zip(curve.snr_db, curve.p_out, curve.ci)]
    _emit(CurveRecord("simulate", "simulated", args.policy, rows), args.out)
    return 0


def cmd_diversity(args) -> int:
    if args.csv:
        rows = read_csv(args.csv)
        curve = OutageCurve([float(r["snr_db"]) for r in rows],
                            [float(r["p_out"]) for r in rows], rows[0]["source"])
    else:
        cfg = _config(args)
        snrs = [args.lo, args.hi]
        if args.slots:
            curve = sweep(cfg, args.policy, snrs, int(args.slots), args.seed, analytical=False)
        else:
            curve = OutageCurve(snrs, [analyze(cfg, s).p_out for s in snrs], "analytical")
    print(f"{estimate_diversity(curve, args.lo, args.hi):.6g}")
    return 0


def cmd_preset(args) -> int:
    print(json.dumps(get_preset(args.name).to_dict(), indent=2))
    return 0


def cmd_state(args) -> int:
    """Print availability details of one state (debugging aid)."""
    from .policy import rank_links
    from .state import availability_vector, available_links, is_edge_state
    cfg = _config(args)
    s = SystemState.parse(args.state).validate(cfg)
    print(f"state {s}")
    print("availability", list(availability_vector(s, cfg)))
    print("available", [str(l) for l in available_links(s, cfg)])
    print("edge", is_edge_state(s, cfg))
    if available_links(s, cfg):
        print("ranking", [str(l) for l in rank_links(s, cfg)])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relay-grid", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a preset or JSON experiment config")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=["fig3", "fig4", "fig5", "fig6", "table3"])
    g.add_argument("--config", help="JSON experiment file")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--state-cap", type=int, default=DEFAULT_STATE_CAP)
    p.add_argument("--slots-scale", type=float, default=1.0,
                   help="multiply every slot budget (quick looks: 0.01)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="analytical outage curve (proposed rule)")
    _network_args(p)
    p.add_argument("--state-cap", type=int, default=DEFAULT_STATE_CAP)
    p.add_argument("--dump-matrix", metavar="PREFIX",
                   help="also write 'i j A_ji' triplets to PREFIX_<snr>dB.txt")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="Monte Carlo outage curve")
    _network_args(p)
    p.add_argument("--policy", default="proposed", choices=[k.value for k in PolicyKind])
    p.add_argument("--slots", type=float, default=1e6)
    p.add_argument("--warmup", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diversity", help="dB-slope of an outage curve between two SNRs")
    _network_args(p)
    p.add_argument("--lo", type=float, required=True)
    p.add_argument("--hi", type=float, required=True)
    p.add_argument("--csv", help="read the curve from a CSV written by run/analyze/simulate")
    p.add_argument("--policy", default="proposed", choices=[k.value for k in PolicyKind])
    p.add_argument("--slots", type=float, default=0,
                   help="simulate with this many slots instead of solving analytically")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_diversity)

    p = sub.add_parser("preset", help="print a preset as JSON")
    p.add_argument("name", choices=["fig3", "fig4", "fig5", "fig6", "table3"])
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("state", help="show availability and ranking of a state")
    _network_args(p)
    p.add_argument("state", help='e.g. "D:[2,5,1];E:[0,1,4]"')
    p.set_defaults(func=cmd_state)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as err:
        print(f"relay-grid: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
