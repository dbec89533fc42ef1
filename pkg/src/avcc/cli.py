"""Command line entry points: headless simulation, the networked service,
table export, profile diffing, log replay, and scenario generation."""

from __future__ import annotations

import argparse
import asyncio
import json
import random
import sys
from pathlib import Path

from . import fsm
from .agent import VehicleAgent, load_scenario
from .eventlog import ReplayDivergence, read_log, replay
from .fsm import ManeuverModeKind, UnknownProfile, export_table, get_profile, profile_diff
from .netagent import run_agent
from .service import ServiceConfig, serve
from .sim import OperatorPolicy, PolicyError, generate_scenario, run_sim, run_walkthrough

USAGE_ERROR = 2


def _profile(name: str) -> fsm.LegalProfile:
    try:
        return get_profile(name)
    except UnknownProfile:
        raise SystemExit(f"unknown profile {name!r}; known: {', '.join(sorted(fsm.PROFILES))}")


def _policy(args: argparse.Namespace) -> OperatorPolicy:
    prefer = None
    if args.prefer_mode:
        prefer = ManeuverModeKind(args.prefer_mode)
    try:
        return OperatorPolicy(
            args.policy,
            claim_delay_s=args.claim_delay,
            prefer_mode=prefer,
            fallback=not args.no_fallback,
        )
    except PolicyError as e:
        raise SystemExit(str(e))


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.serve:
        config = ServiceConfig().overridden(
            profile=args.profile,
            fm_intervention=args.fm_intervention or None,
            log_path=str(Path(args.out) / "service.ndjson") if args.out else None,
        )
        asyncio.run(serve(config))
        return 0
    if not args.scenario:
        print("at least one --scenario file is required for a headless run", file=sys.stderr)
        return USAGE_ERROR
    log_path = None
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "sim.ndjson"
    result = run_sim(
        [Path(p) for p in args.scenario],
        _profile(args.profile),
        _policy(args),
        seed=args.seed,
        duration_s=args.duration,
        log_path=log_path,
        require_resolution=args.require_resolution,
        fm_intervention=args.fm_intervention,
        operators=args.operators,
    )
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    return result.exit_code


def cmd_walkthrough(args: argparse.Namespace) -> int:
    log_path = None
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "walkthrough.ndjson"
    result = run_walkthrough(_profile(args.profile), log_path=log_path)
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    return result.exit_code


def cmd_export_table(args: argparse.Namespace) -> int:
    sys.stdout.write(export_table(_profile(args.profile)))
    return 0


def cmd_profile_diff(args: argparse.Namespace) -> int:
    diff = profile_diff(_profile(args.base), _profile(args.other))

    def label(key):
        kind, mode = key
        return kind.value if mode is None else f"{kind.value}({mode.value})"

    for key in sorted(diff.removed, key=label):
        print(f"- {label(key)}")
    for key in sorted(diff.added, key=label):
        print(f"+ {label(key)}")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    entries = read_log(args.log)
    try:
        fleet = replay(entries)
    except ReplayDivergence as e:
        print(f"divergence at entry {e.entry_seq}: {e.reason}", file=sys.stderr)
        return 1
    print(
        json.dumps(
            {
                "applied": fleet.applied,
                "states": {v: s.to_wire() for v, s in sorted(fleet.states.items())},
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    rng = random.Random(args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        doc = generate_scenario(rng, f"v{i + 1:03d}")
        path = out_dir / f"{doc['vehicle_id']}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(path)
    return 0


def cmd_agent(args: argparse.Namespace) -> int:
    agent = VehicleAgent(load_scenario(args.scenario), _profile(args.profile))
    try:
        run_agent(agent, args.host, args.port, tick_s=args.tick, duration_s=args.duration)
    except ConnectionRefusedError:
        raise SystemExit(f"no center listening at {args.host}:{args.port}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    config = ServiceConfig.from_file(args.config) if args.config else ServiceConfig()
    config = config.overridden(
        profile=args.profile,
        http_port=args.http_port,
        vehicle_port=args.vehicle_port,
        fm_intervention=args.fm_intervention or None,
        auto_registration=args.auto_registration or None,
        log_path=args.log,
        console_dir=args.console,
    )
    asyncio.run(serve(config))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avcc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="headless end-to-end run with scripted operators")
    sim.add_argument("--profile", default="generic", help="legal profile: generic or german")
    sim.add_argument("--scenario", action="append", default=[], help="scenario file; repeatable")
    sim.add_argument("--policy", default="auto_resolve", help="operator policy: auto_resolve, assist_only, ignore")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--headless", action="store_true", help="accepted for symmetry; headless is the default")
    sim.add_argument("--serve", action="store_true", help="serve the console instead of running headless")
    sim.add_argument("--require-resolution", action="store_true", help="fail if any request is left unresolved")
    sim.add_argument("--fm-intervention", action="store_true")
    sim.add_argument("--out", help="directory for the run log")
    sim.add_argument("--duration", type=float, default=60.0, help="simulated seconds")
    sim.add_argument("--operators", type=int, default=None, help="scripted operator count (default: one per vehicle)")
    sim.add_argument("--prefer-mode", choices=[m.value for m in ManeuverModeKind], default=None)
    sim.add_argument("--no-fallback", action="store_true", help="do not retry forbidden/refused maneuvers as assistance")
    sim.add_argument("--claim-delay", type=float, default=0.0)
    sim.set_defaults(func=cmd_simulate)

    walk = sub.add_parser("walkthrough", help="scripted reference run over the full state diagram")
    walk.add_argument("--profile", default="generic")
    walk.add_argument("--out", help="directory for the run log")
    walk.set_defaults(func=cmd_walkthrough)

    table = sub.add_parser("export-table", help="print the permitted transition table")
    table.add_argument("--profile", default="generic")
    table.set_defaults(func=cmd_export_table)

    diff = sub.add_parser("profile-diff", help="rows removed/added between two profiles")
    diff.add_argument("base")
    diff.add_argument("other")
    diff.set_defaults(func=cmd_profile_diff)

    rep = sub.add_parser("replay", help="recompute a log's transitions and report divergence")
    rep.add_argument("log")
    rep.set_defaults(func=cmd_replay)

    gen = sub.add_parser("generate", help="write randomized scenario files")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--count", type=int, default=1)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    srv = sub.add_parser("serve", help="run the networked control center")
    srv.add_argument("--config", help="JSON config file")
    srv.add_argument("--profile", default=None)
    srv.add_argument("--http-port", type=int, default=None)
    srv.add_argument("--vehicle-port", type=int, default=None)
    srv.add_argument("--fm-intervention", action="store_true")
    srv.add_argument("--auto-registration", action="store_true")
    srv.add_argument("--log", help="event log path")
    srv.add_argument("--console", help="directory of console assets to serve at /")
    srv.set_defaults(func=cmd_serve)

    agt = sub.add_parser("agent", help="connect one scripted vehicle to a running center")
    agt.add_argument("--scenario", required=True)
    agt.add_argument("--profile", default="generic")
    agt.add_argument("--host", default="127.0.0.1")
    agt.add_argument("--port", type=int, default=8421)
    agt.add_argument("--tick", type=float, default=0.1, help="wall-clock step period in seconds")
    agt.add_argument("--duration", type=float, default=None, help="disconnect after this many seconds")
    agt.set_defaults(func=cmd_agent)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
