"""Command-line interface.

Subcommands: simulate, preset, report, serve-hub, agent.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import bench, net, presets, report
from .config import load_config, save_config
from .sim import run_simulation


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adfll")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an experiment config in the simulator")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int, default=None, help="override master_seed")
    sim.add_argument("--out", required=True, help="output directory")

    pre = sub.add_parser("preset", help="write a canned experiment config")
    pre.add_argument("name", choices=sorted(presets.PRESETS))
    pre.add_argument("--out", required=True, help="config file to write")
    pre.add_argument("--seed", type=int, default=None,
                     help="master seed (default: the preset's pinned seed)")

    rep = sub.add_parser("report", help="build comparison CSVs and figures from a run")
    rep.add_argument("--in", dest="run_dir", required=True)
    rep.add_argument("--out", default=None, help="output directory (default: --in)")
    rep.add_argument("--csv", default=None, help="path for the main comparison table")

    hub = sub.add_parser("serve-hub", help="serve a hub node over TCP")
    hub.add_argument("--listen", required=True, help="host:port to bind")
    hub.add_argument("--hub-id", required=True)
    hub.add_argument("--peers", nargs="*", default=[], help="peer hub host:port list")
    hub.add_argument("--manifest-out", default=None)
    hub.add_argument("--dropout", type=float, default=0.0)
    hub.add_argument("--seed", type=int, default=0)
    hub.add_argument("--sync-period", type=float, default=1.0, help="seconds")

    ag = sub.add_parser("agent", help="run an agent against a live hub")
    ag.add_argument("--hub", required=True, help="hub host:port")
    ag.add_argument("--config", required=True)
    ag.add_argument("--agent-id", required=True)
    ag.add_argument("--out", default=None, help="directory for the metrics CSV")
    return p


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed, env_seed=args.seed)
    result = run_simulation(cfg)
    if cfg.baselines:
        rows, _ = bench.run_baselines(cfg)
        result.metrics.extend(rows)
    result.write(args.out)
    print(f"wrote {args.out}: {len(result.events)} events, {len(result.metrics)} metric rows")
    return 0


def cmd_preset(args) -> int:
    builder = presets.PRESETS[args.name]
    cfg = builder() if args.seed is None else builder(master_seed=args.seed)
    save_config(cfg, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_report(args) -> int:
    paths = report.generate_report(args.run_dir, args.out, args.csv)
    for name in ("table", "rounds", "pairwise"):
        print(f"{name}: {paths[name]}")
    return 0


def cmd_serve_hub(args) -> int:
    server = net.HubServer(
        hub_id=args.hub_id,
        listen=args.listen,
        peers=tuple(args.peers),
        dropout_p=args.dropout,
        seed=args.seed,
        manifest_path=args.manifest_out,
        sync_period_s=args.sync_period,
    )
    server.serve_forever()
    return 0


def cmd_agent(args) -> int:
    cfg = load_config(args.config)
    return net.run_agent(args.hub, cfg, args.agent_id, args.out)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    handlers = {
        "simulate": cmd_simulate,
        "preset": cmd_preset,
        "report": cmd_report,
        "serve-hub": cmd_serve_hub,
        "agent": cmd_agent,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
