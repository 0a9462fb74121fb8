"""Command-line entry points.

Subcommands: serve, gen-dataset, eval-control, eval-decision, lap, raceline.
Exit status 0 on success, 2 on validation/usage errors, 3 on policy or
transport errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import threading

from . import maps
from .behaviors import behavior_by_id, metric_rmse, TRAIN_BEHAVIORS
from .dataset import corpus_from_jsonl, corpus_to_jsonl, generate_dataset
from .episodes import EpisodeEnvironment
from .evalharness import (HarnessError, control_policy, run_control_eval,
                          run_decision_eval)
from .mpc import InvalidParameterError, default_params, validate_params
from .service import (DEFAULT_HTTP_PORT, RolloutService, make_http_server,
                      make_socket_server)
from .tracks import TrackError, generate_raceline, raceline_to_csv

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TRANSPORT = 3


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="deterministic seed")
    p.add_argument("--map", default=maps.TRAIN_MAP,
                   help="map id (train_circle/circle, eval_grand_tour/grand_tour)")
    p.add_argument("--out", default=None, help="output file path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driverl",
                                     description="Closed-loop MPC driving environment "
                                                 "with verifiable rewards")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the rollout scoring service")
    _add_common(p)
    p.add_argument("--port", type=int,
                   default=int(os.environ.get("DRIVERL_PORT", DEFAULT_HTTP_PORT)),
                   help="HTTP port (0 picks a free port; default from DRIVERL_PORT)")
    p.add_argument("--socket", default=None, help="also serve on this Unix socket path")

    p = sub.add_parser("gen-dataset", help="generate the labeled decision corpus")
    _add_common(p)
    p.add_argument("--per-style", type=int, default=25)
    p.add_argument("--max-time", type=float, default=60.0,
                   help="per-lap simulation-time cap in seconds")

    p = sub.add_parser("eval-control", help="control-adaptability evaluation")
    _add_common(p)
    p.set_defaults(map=maps.EVAL_MAP)
    p.add_argument("--policy", default="mock-default",
                   help="mock-default | mock-garbage | oracle | http(s)://...")
    p.add_argument("--runs", type=int, default=5, help="phrasings per behavior (<=5)")

    p = sub.add_parser("eval-decision", help="decision-accuracy evaluation")
    _add_common(p)
    p.add_argument("--policy", default="rule-oracle",
                   help="rule-oracle | always-yes | always-no")
    p.add_argument("--corpus", default=None,
                   help="existing corpus file (default: generate per-style 25)")
    p.add_argument("--per-style", type=int, default=25)

    p = sub.add_parser("lap", help="run one lap with given parameters")
    _add_common(p)
    p.add_argument("--params", default="default",
                   help="'default', inline JSON object, or @file.json")
    p.add_argument("--behavior", default="train/centerline",
                   help="behavior id for the reported metric")

    p = sub.add_parser("raceline", help="generate and store a raceline CSV")
    _add_common(p)
    p.add_argument("--alat-max", type=float, default=10.0)
    p.add_argument("--v-cap", type=float, default=5.0)
    p.add_argument("--margin", type=float, default=0.1)
    return parser


def _write_out(path: str | None, text: str):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_params(spec: str):
    if spec == "default":
        return default_params()
    if spec.startswith("@"):
        with open(spec[1:], encoding="utf-8") as fh:
            return validate_params(json.load(fh))
    return validate_params(json.loads(spec))


def cmd_serve(args) -> int:
    service = RolloutService(default_map=args.map)
    http_server = make_http_server(service, port=args.port)
    servers = [http_server]
    if args.socket:
        if os.path.exists(args.socket):
            os.unlink(args.socket)
        servers.append(make_socket_server(service, args.socket))
    port = http_server.server_address[1]
    print(json.dumps({"event": "serving", "port": port, "socket": args.socket,
                      "map": args.map}), flush=True)
    threads = [threading.Thread(target=s.serve_forever, daemon=True) for s in servers]
    for t in threads:
        t.start()
    try:
        for t in threads:
            while t.is_alive():
                t.join(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        for s in servers:
            s.shutdown()
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    track = maps.get_map(args.map)
    from .simulator import LapLimits
    instances = generate_dataset(track, per_style=args.per_style, seed=args.seed,
                                 limits=LapLimits(max_time=args.max_time))
    _write_out(args.out, corpus_to_jsonl(instances, seed=args.seed))
    print(json.dumps({"event": "dataset", "instances": len(instances),
                      "histories": len(instances) // 8 if instances else 0,
                      "out": args.out}), file=sys.stderr)
    return EXIT_OK


def cmd_eval_control(args) -> int:
    try:
        policy = control_policy(args.policy)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    service = RolloutService(default_map=args.map)
    try:
        report = run_control_eval(policy, args.map, runs=args.runs, service=service)
    except HarnessError as exc:
        print(f"policy error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    _write_out(args.out, report.to_json())
    print(report.table(), file=sys.stderr)
    return EXIT_OK


def cmd_eval_decision(args) -> int:
    if args.corpus:
        with open(args.corpus, encoding="utf-8") as fh:
            instances = corpus_from_jsonl(fh.read())
    else:
        instances = generate_dataset(maps.get_map(args.map),
                                     per_style=args.per_style, seed=args.seed)
    try:
        result = run_decision_eval(instances, args.policy)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    text = json.dumps(result, indent=2) + "\n"
    _write_out(args.out, text)
    return EXIT_OK


def cmd_lap(args) -> int:
    try:
        params = _load_params(args.params)
        behavior = behavior_by_id(args.behavior)
    except (InvalidParameterError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    env = EpisodeEnvironment(maps.get_map(args.map))
    episode = env.run_episode(params, behavior)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(episode.trace.to_ldjson())
    summary = {
        "terminated_by": episode.trace.terminated_by,
        "lap_time": episode.trace.lap_time,
        "behavior_id": args.behavior,
        "e_llm": episode.e_llm, "e_mpc": episode.e_mpc, "r_drive": episode.r_drive,
        "metrics": {b.metric_id: metric_rmse(episode.trace, b)
                    for b in TRAIN_BEHAVIORS},
        "trace_out": args.out,
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_raceline(args) -> int:
    track = maps.get_map(args.map)
    try:
        regenerated = generate_raceline(track, alat_max=args.alat_max,
                                        v_cap=args.v_cap, margin=args.margin)
    except (TrackError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    _write_out(args.out, raceline_to_csv(regenerated))
    print(json.dumps({"event": "raceline", "map": args.map,
                      "converged": regenerated.raceline_converged,
                      "rms_curvature": regenerated.raceline.rms_curvature(),
                      "out": args.out}), file=sys.stderr)
    return EXIT_OK


_COMMANDS = {
    "serve": cmd_serve,
    "gen-dataset": cmd_gen_dataset,
    "eval-control": cmd_eval_control,
    "eval-decision": cmd_eval_decision,
    "lap": cmd_lap,
    "raceline": cmd_raceline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except (InvalidParameterError, maps.UnknownMapError, TrackError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
