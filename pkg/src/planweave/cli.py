"""Command line interface.

Subcommands:
  validate  check a task bundle and the built-in topology/templates
  run       execute one episode with a chosen policy
  bench     run a benchmark over task bundles, or the policy simulator
  serve     expose the control endpoint, optionally launching an episode
  replay    re-check a recorded episode log for legality and consistency

Exit codes: 0 ok, 1 domain failure (bad config, failed episode, replay
violations), 2 usage error, 3 hard runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import threading
from pathlib import Path

from . import taskio
from .bench import (
    DEFAULT_PASS_K,
    load_simulation_config,
    run_bench,
    simulate_policies,
    write_report,
)
from .control import DEFAULT_CONTROL_PORT, EpisodeRegistry, serve_control
from .errors import (
    ArityError,
    ConfigError,
    HardError,
    IoError,
    MissingFile,
    ParseError,
    PlanweaveError,
    PortInUse,
    RefError,
)
from .eventlog import EpisodeLog, read_log, replay_consistency, result_of
from .gateway import load_all_templates, make_backend
from .model import default_topology, validate_topology
from .orchestrator import (
    POLICY_PLANNER,
    POLICY_RANDOM,
    POLICY_SEQUENTIAL,
    HitlChannel,
    Policy,
    run_episode,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_HARD = 3

_POLICIES = (POLICY_PLANNER, POLICY_SEQUENTIAL, POLICY_RANDOM)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planweave",
        description="Multi-actor code generation workflow engine")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a task bundle")
    p.add_argument("run_yaml", help="path to the task's run.yaml")
    p.add_argument("--templates", help="prompt template directory override")

    p = sub.add_parser("run", help="execute one episode")
    p.add_argument("run_yaml", help="path to the task's run.yaml")
    p.add_argument("--policy", choices=_POLICIES,
                   default=POLICY_PLANNER)
    p.add_argument("--seed", type=int, default=None,
                   help="required for --policy random")
    p.add_argument("--backend",
                   help="override the configured llm backend spec "
                        "(scripted:<path> or http-chat:<url>)")
    p.add_argument("--out", help="output root override")
    p.add_argument("--log", help="episode log path (JSONL)")
    p.add_argument("--hitl", choices=("default", "console"),
                   default="default")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=DEFAULT_CONTROL_PORT,
                   help="control endpoint port for --hitl console")
    p.add_argument("--templates", help="prompt template directory override")

    p = sub.add_parser("bench",
                       help="benchmark task bundles or run the simulator")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--tasks", help="directory of task bundles")
    mode.add_argument("--simulate",
                      help="simulator calibration file (YAML)")
    p.add_argument("--policy", choices=_POLICIES,
                   default=POLICY_SEQUENTIAL)
    p.add_argument("--runs", type=int, default=3,
                   help="runs per task (the k of pass@k)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--backend", help="llm backend spec override")
    p.add_argument("--episodes", type=int, default=500,
                   help="episodes per policy in simulator mode")
    p.add_argument("--k", type=int, default=None,
                   help="pass@k group size in simulator mode")
    p.add_argument("--out", default="bench_out",
                   help="report/output directory")

    p = sub.add_parser("serve", help="start the control endpoint")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=DEFAULT_CONTROL_PORT)
    p.add_argument("--run", dest="run_yaml",
                   help="also launch an episode for this task bundle")
    p.add_argument("--policy", choices=_POLICIES,
                   default=POLICY_PLANNER)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--backend", help="llm backend spec override")
    p.add_argument("--out", help="output root override")
    p.add_argument("--log", help="episode log path (JSONL)")
    p.add_argument("--exit-after-episode", action="store_true",
                   help="stop serving when the launched episode ends")

    p = sub.add_parser("replay", help="re-check a recorded episode log")
    p.add_argument("log_path", help="episode log (JSONL)")
    return parser


def _print_err(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def cmd_validate(args: argparse.Namespace) -> int:
    task = taskio.load_task(args.run_yaml)
    report = validate_topology(default_topology())
    for finding in report.findings:
        print(f"topology {finding.code}: {finding.message}")
    templates = load_all_templates(args.templates)
    for warning in task.warnings:
        print(f"warning: {warning}")
    if not report.ok:
        return EXIT_FAILURE
    print(f"task: {task.fsc.name}")
    print(f"datasets: {', '.join(sorted(task.dfr.names()))}")
    print(f"features: {len(task.fsc.features)}")
    print(f"templates: {len(templates)} loaded")
    print("OK")
    return EXIT_OK


def _make_episode_log(args: argparse.Namespace,
                      task: taskio.TaskSpec) -> EpisodeLog:
    if args.log:
        return EpisodeLog(args.log)
    out = Path(args.out) if args.out \
        else task.resolve(task.run.env.output_root_dir)
    return EpisodeLog(out / "episode.jsonl")


def _episode_backend(args: argparse.Namespace, task: taskio.TaskSpec):
    if not args.backend:
        return None
    return make_backend(args.backend, base_dir=task.root,
                        api_key_env=task.run.planner.llm_api_key_env)


def _print_result(result, log_path) -> None:
    print(f"status: {result.status}")
    print(f"steps: {result.total_steps}")
    print(f"hitl exchanges: {result.hitl_exchanges}")
    for actor in sorted(result.per_actor):
        s, f = result.per_actor[actor]
        print(f"  {actor}: {s} ok / {f} failed")
    if log_path is not None:
        print(f"log: {log_path}")


def cmd_run(args: argparse.Namespace) -> int:
    if args.policy == POLICY_RANDOM and args.seed is None:
        _print_err("--policy random requires --seed")
        return EXIT_USAGE
    task = taskio.load_task(args.run_yaml)
    policy = Policy(kind=args.policy, seed=args.seed)
    templates = load_all_templates(args.templates)
    settings = task.run.planner

    registry = None
    server = None
    hitl = None
    episode_id = None
    if args.hitl == "console":
        registry = EpisodeRegistry()
        try:
            server = serve_control(registry, host=args.host,
                                   port=args.port)
        except PortInUse as exc:
            # Degrade rather than fail: the episode still runs, HITL
            # questions get the default answer.
            log.warning("%s; falling back to default HITL answers", exc)
            registry = None
        if registry is not None:
            episode_id = registry.register(Path(args.run_yaml).parent.name
                                           or "episode")
            hitl = HitlChannel(
                mode="console",
                default_answer=settings.hitl_default_answer,
                timeout=settings.hitl_timeout_seconds,
                registry=registry, episode_id=episode_id)
            print(f"control endpoint: {server.url}", flush=True)
            print(f"episode id: {episode_id}", flush=True)

    episode_log = _make_episode_log(args, task)
    try:
        with episode_log:
            result = run_episode(
                task, policy=policy,
                backend=_episode_backend(args, task),
                hitl=hitl, templates=templates,
                episode_log=episode_log,
                registry=registry, episode_id=episode_id,
                run_label=episode_id or "episode",
                out_dir=args.out)
    except HardError as exc:
        _print_err(str(exc))
        if exc.partial_result is not None:
            _print_result(exc.partial_result, episode_log.path)
        return EXIT_HARD
    finally:
        if server is not None:
            server.stop()
    _print_result(result, episode_log.path)
    return EXIT_OK if result.success else EXIT_FAILURE


def cmd_bench(args: argparse.Namespace) -> int:
    if args.simulate:
        cfg = load_simulation_config(args.simulate)
        report = simulate_policies(
            cfg["models"],
            episodes_per_policy=args.episodes,
            seed=args.seed if args.seed is not None else 0,
            max_iterations=cfg["max_iterations"],
            k=args.k or cfg.get("k", DEFAULT_PASS_K))
        if args.out:
            write_report(report, args.out)
        print(report.render_text(), end="")
        return EXIT_OK
    if args.policy == POLICY_RANDOM and args.seed is None:
        _print_err("--policy random requires --seed")
        return EXIT_USAGE
    policy = Policy(kind=args.policy, seed=args.seed)
    report = run_bench(args.tasks, policy, args.runs, args.out,
                       backend_spec=args.backend)
    print(report.render_text(), end="")
    print(f"report written to {args.out}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    if args.run_yaml and args.policy == POLICY_RANDOM \
            and args.seed is None:
        _print_err("--policy random requires --seed")
        return EXIT_USAGE
    registry = EpisodeRegistry()
    try:
        server = serve_control(registry, host=args.host, port=args.port)
    except PortInUse as exc:
        _print_err(str(exc))
        return EXIT_FAILURE
    print(f"control endpoint: {server.url}", flush=True)

    outcome: dict[str, object] = {}
    worker = None
    if args.run_yaml:
        task = taskio.load_task(args.run_yaml)
        policy = Policy(kind=args.policy, seed=args.seed)
        settings = task.run.planner
        episode_id = registry.register(Path(args.run_yaml).parent.name
                                       or "episode")
        hitl = HitlChannel(mode="console",
                           default_answer=settings.hitl_default_answer,
                           timeout=settings.hitl_timeout_seconds,
                           registry=registry, episode_id=episode_id)
        episode_log = _make_episode_log(args, task)
        print(f"episode id: {episode_id}", flush=True)

        def _runner() -> None:
            try:
                with episode_log:
                    outcome["result"] = run_episode(
                        task, policy=policy,
                        backend=_episode_backend(args, task),
                        hitl=hitl, episode_log=episode_log,
                        registry=registry,
                        episode_id=episode_id, run_label=episode_id,
                        out_dir=args.out)
            except HardError as exc:
                outcome["error"] = exc
            except Exception as exc:   # noqa: BLE001 (report, don't die)
                outcome["error"] = HardError(str(exc))

        worker = threading.Thread(target=_runner, daemon=True)
        worker.start()

    try:
        if worker is not None and args.exit_after_episode:
            worker.join()
        else:
            threading.Event().wait()   # serve until interrupted
    except KeyboardInterrupt:
        print("stopping")
    finally:
        server.stop()
    if "error" in outcome:
        _print_err(str(outcome["error"]))
        return EXIT_HARD
    result = outcome.get("result")
    if result is not None:
        _print_result(result, None)
        return EXIT_OK if result.success else EXIT_FAILURE
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    records = read_log(args.log_path)
    issues = replay_consistency(records, default_topology())
    for issue in issues:
        print(f"violation: {issue}")
    result = result_of(records)
    steps = sum(1 for r in records if r.get("type") == "step")
    if result is not None:
        print(f"recorded status: {result.status}")
    print(f"steps checked: {steps}")
    if issues:
        print(f"{len(issues)} violation(s)")
        return EXIT_FAILURE
    print("replay clean")
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "run": cmd_run,
    "bench": cmd_bench,
    "serve": cmd_serve,
    "replay": cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ParseError, RefError, MissingFile, ConfigError, ArityError,
            IoError) as exc:
        _print_err(str(exc))
        return EXIT_FAILURE
    except HardError as exc:
        _print_err(str(exc))
        return EXIT_HARD
    except PlanweaveError as exc:
        _print_err(str(exc))
        return EXIT_FAILURE
    except Exception as exc:   # noqa: BLE001 (last resort)
        _print_err(f"unexpected: {exc}")
        return EXIT_HARD


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
