"""Command-line entry points: run trials (headless or serving a live
client), analyze logs into reports, and verify replays."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import yaml

from .analysis import metrics_from_log, write_report
from .errors import TelesimError
from .operators import ConfirmationChannel, OperatorPolicy, PolicyKind
from .session import TrialConfig, logs_identical, read_log, replay, write_log
from .world import SCENE_DIR

SCENE_DIR_ENV = "TELESIM_SCENE_DIR"


def resolve_scene(ref) -> dict:
    """A scene is an inline mapping, a file path, or a bare name looked up
    in $TELESIM_SCENE_DIR (falling back to the packaged scenes)."""
    if isinstance(ref, dict):
        return ref
    ref = str(ref)
    candidates = [Path(ref)]
    env_dir = os.environ.get(SCENE_DIR_ENV)
    for base in ([Path(env_dir)] if env_dir else []) + [SCENE_DIR]:
        candidates.append(base / ref)
        candidates.append(base / f"{ref}.yaml")
    for path in candidates:
        if path.is_file():
            return yaml.safe_load(path.read_text())
    raise FileNotFoundError(f"scene {ref!r} not found (searched {candidates})")


def load_trial_config(path: str | Path) -> TrialConfig:
    data = yaml.safe_load(Path(path).read_text())
    cond = data["condition"]
    policy = None
    if data.get("policy"):
        p = data["policy"]
        policy = OperatorPolicy(
            variant=PolicyKind(p.get("variant", "wait_for_confirmation")),
            reaction_time_ms=int(p.get("reaction_time_ms", 200)),
            speed_limit=float(p.get("speed_limit", 0.5)),
            confirmation_channel=ConfirmationChannel(
                p.get("confirmation_channel", "haptic")),
            seed=int(p.get("seed", data.get("seed", 0))),
            segment_length_m=float(p.get("segment_length_m", 0.10)),
        )
    base = TrialConfig.from_dict({
        "condition": {"kind": cond["kind"],
                      "visual_delay_ms": cond.get("visual_delay_ms", 0),
                      "onset_delay_ms": cond.get("onset_delay_ms", 0)},
        "scene": resolve_scene(data.get("scene", "default")),
        "policy": None,
        "seed": int(data.get("seed", 0)),
        "sim_rate_hz": int(data.get("sim_rate_hz", 1000)),
        "frame_rate_hz": int(data.get("frame_rate_hz", 90)),
        "duration_cap_s": float(data.get("duration_cap_s", 120.0)),
        "trial_id": str(data.get("trial_id", Path(path).stem)),
    })
    return dataclasses.replace(base, policy=policy)


def _cmd_run(args) -> int:
    config = load_trial_config(args.config)
    if args.serve is not None:
        from .service import TeleopServer
        server = TeleopServer(port=args.serve, log_dir=args.out)
        print(f"serving live sessions on 127.0.0.1:{server.port} "
              f"(logs under {args.out})", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            server.stop()
        return 0
    from .service import run_session
    if config.policy is None:
        print("headless runs need a scripted policy in the config", file=sys.stderr)
        return 2
    log = run_session(config)
    out = Path(args.out) / config.trial_id
    write_log(log, out)
    placements = len(log.events_of_kind("placement"))
    print(f"{config.trial_id}: {log.end_status}, {len(log.tick_rows)} ticks, "
          f"{placements}/4 placements -> {out}")
    return 0


def _cmd_analyze(args) -> int:
    reports = []
    for ref in args.logs:
        log = read_log(ref)
        reports.append(metrics_from_log(log))
    path = write_report(reports, args.report)
    print(path.read_text())
    print(f"report written to {path}")
    return 0


def _cmd_replay(args) -> int:
    log = read_log(args.log)
    again = replay(log)
    if logs_identical(log, again):
        print(f"replay of {args.log}: identical ({len(log.tick_rows)} ticks)")
        return 0
    print(f"replay of {args.log}: DIVERGED", file=sys.stderr)
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="telesim",
        description="Deterministic teleoperation-delay simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a trial from a config file")
    run.add_argument("--config", required=True)
    group = run.add_mutually_exclusive_group()
    group.add_argument("--headless", action="store_true",
                       help="scripted run, free-running clock (default)")
    group.add_argument("--serve", type=int, metavar="PORT",
                       help="host live sessions on this TCP port")
    run.add_argument("--out", default="logs", help="log output directory")
    run.set_defaults(func=_cmd_run)

    analyze = sub.add_parser("analyze", help="score logs and write a report")
    analyze.add_argument("logs", nargs="+")
    analyze.add_argument("--report", required=True, help="report directory")
    analyze.set_defaults(func=_cmd_analyze)

    rep = sub.add_parser("replay", help="re-run a log and verify it matches")
    rep.add_argument("log")
    rep.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TelesimError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
