"""Command-line entry point.

Exit codes (stable):
    0  success
    2  configuration, usage or input error
    3  pipeline terminal failure (e.g. too few ballots)
    4  input file is not a valid image
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
from dataclasses import replace
from pathlib import Path

from . import bench, canon, logs
from .model import Ballot, Granularity, TieBreak, VotingConfig
from .pipeline import ConfigInvalid, Pipeline, PipelineConfig, document_from_path, load_config
from .store import ReportFailure, render_report
from .vote import InsufficientBallots, explain, majority_vote

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3
EXIT_NOT_IMAGE = 4


def _err(msg: str) -> None:
    print(f"lmv-rpa: {msg}", file=sys.stderr)


def _config_path(args: argparse.Namespace) -> str | None:
    return args.config or os.environ.get("LMV_CONFIG")


def _load(args: argparse.Namespace) -> PipelineConfig:
    path = _config_path(args)
    if not path:
        raise ConfigInvalid("no config given (use --config or set LMV_CONFIG)")
    cfg = load_config(path)
    monitor = cfg.monitor
    if getattr(args, "dir", None) is not None:
        monitor = replace(monitor, directory=args.dir)
    if getattr(args, "interval_ms", None) is not None:
        monitor = replace(monitor, interval_ms=args.interval_ms)
    if getattr(args, "horizon_ms", None) is not None:
        monitor = replace(monitor, horizon_ms=args.horizon_ms)
    if getattr(args, "strict_magic", False):
        monitor = replace(monitor, strict_magic=True)
    changes: dict = {"monitor": monitor}
    if getattr(args, "output_dir", None) is not None:
        changes["output_dir"] = args.output_dir
    if getattr(args, "max_in_flight", None) is not None:
        changes["max_in_flight"] = args.max_in_flight
    try:
        return replace(cfg, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from None


def cmd_watch(args: argparse.Namespace) -> int:
    try:
        cfg = _load(args)
    except ConfigInvalid as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    stop = threading.Event()
    if threading.current_thread() is threading.main_thread():
        for sig in (signal.SIGINT, signal.SIGTERM):
            signal.signal(sig, lambda *_: stop.set())
    Pipeline(cfg).run(stop)
    return EXIT_OK


def cmd_process(args: argparse.Namespace) -> int:
    try:
        cfg = _load(args)
    except ConfigInvalid as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    if not Path(args.file).is_file():
        _err(f"no such file: {args.file}")
        return EXIT_CONFIG
    doc = document_from_path(args.file, strict=cfg.monitor.strict_magic)
    if doc is None:
        _err(f"not a valid image: {args.file}")
        return EXIT_NOT_IMAGE
    pipe = Pipeline(cfg)
    result = pipe.process(doc)
    if result.skipped:
        sys.stdout.write(pipe.store.final_path(doc.id).read_text(encoding="utf-8") + "\n")
        return EXIT_OK
    if not result.ok or result.outcome is None:
        _err(f"{result.failure}: {result.failure_detail}")
        return EXIT_PIPELINE
    sys.stdout.write(canon.render(result.outcome.fields) + "\n")
    return EXIT_OK


def _voting_from_args(args: argparse.Namespace) -> VotingConfig:
    quorum = None if args.quorum == "majority" else int(args.quorum)
    return VotingConfig(Granularity(args.granularity), quorum, TieBreak(args.tie_break), args.min_ballots)


def _quorum(text: str) -> str:
    if text == "majority":
        return text
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'majority' or a positive integer") from None
    if k < 1:
        raise argparse.ArgumentTypeError("fixed quorum must be >= 1")
    return text


def cmd_vote(args: argparse.Namespace) -> int:
    cfg = _voting_from_args(args)
    ballots = []
    for i, path in enumerate(args.ballots):
        try:
            raw = Path(path).read_text(encoding="utf-8")
            fields = canon.canonicalize(raw)
        except (OSError, UnicodeDecodeError, canon.CanonError) as exc:
            _err(f"cannot use ballot {path}: {exc}")
            return EXIT_CONFIG
        # Earlier files rank higher for priority tie-breaks.
        ballots.append(Ballot("cli", f"file{i + 1}", Path(path).name, raw, fields, priority=i + 1))
    try:
        outcome = majority_vote(ballots, cfg)
    except InsufficientBallots as exc:
        _err(str(exc))
        return EXIT_PIPELINE
    sys.stdout.write(canon.render(outcome.fields) + "\n")
    sys.stderr.write(explain(outcome))
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    spec_path = args.spec or bench.preset_path(args.preset)
    try:
        spec = bench.load_spec(spec_path)
    except bench.BenchSpecError as exc:
        _err(f"invalid bench spec: {exc}")
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        report = bench.run_benchmark(spec, out)
    except (bench.BenchSpecError, bench.TargetNotEmpty, FileNotFoundError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    pj, pm = bench.write_report(report, out)
    print(json.dumps({"report_json": str(pj), "report_md": str(pm)}))
    if spec.timing is not None and not args.no_timing:
        bench.write_timing(bench.measure_timing(spec, out), out)
    sys.stderr.write(bench.format_report(report))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    output_dir = args.output_dir
    if output_dir is None:
        try:
            output_dir = _load(args).output_dir
        except ConfigInvalid as exc:
            _err(f"invalid config: {exc}")
            return EXIT_CONFIG
    try:
        path = render_report(output_dir)
    except ReportFailure as exc:
        _err(str(exc))
        return EXIT_CONFIG
    print(json.dumps({"report": str(path)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="pipeline config JSON (falls back to $LMV_CONFIG)")
    common.add_argument("--log-level", default=None, choices=["debug", "info", "warning", "error"], help="stderr log level (info when unset)")

    # Global flags may precede the subcommand; separate dests keep subparser defaults from clobbering them.
    parser = argparse.ArgumentParser(prog="lmv-rpa", description="Multi-engine document extraction with majority voting.", formatter_class=fmt)
    parser.add_argument("--config", dest="global_config", default=None, help="pipeline config JSON (falls back to $LMV_CONFIG)")
    parser.add_argument("--log-level", dest="global_log_level", default="info", choices=["debug", "info", "warning", "error"], help="stderr log level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("watch", help="watch a directory and process new images", formatter_class=fmt, parents=[common])
    p.add_argument("--dir", default=None, help="directory to monitor (overrides config)")
    p.add_argument("--interval-ms", type=int, default=None, help="polling interval in ms, >= 1 (config default 1000)")
    p.add_argument("--strict-magic", action="store_true", help="require image magic bytes to match the extension")
    p.add_argument("--horizon-ms", type=int, default=None, help="stop after this many ms (default: run until signalled)")
    p.add_argument("--output-dir", default=None, help="output directory (overrides config)")
    p.add_argument("--max-in-flight", type=int, default=None, help="documents processed concurrently (config default 2)")
    p.set_defaults(func=cmd_watch)

    p = sub.add_parser("process", help="process one image and print the consensus JSON", formatter_class=fmt, parents=[common])
    p.add_argument("file", help="image file")
    p.add_argument("--output-dir", default=None, help="output directory (overrides config)")
    p.add_argument("--strict-magic", action="store_true", help="require image magic bytes to match the extension")
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("vote", help="vote over JSON files; consensus on stdout, tally on stderr", formatter_class=fmt, parents=[common])
    p.add_argument("ballots", nargs="+", help="JSON ballot files, highest priority first")
    p.add_argument("--granularity", default="field", choices=["field", "document"], help="voting unit")
    p.add_argument("--quorum", default="majority", type=_quorum, help="key-inclusion quorum: 'majority' or a fixed k")
    p.add_argument("--tie-break", default="priority", choices=["priority", "lexicographic"], help="tie resolution rule")
    p.add_argument("--min-ballots", default=3, type=int, help="minimum number of ballots")
    p.set_defaults(func=cmd_vote)

    p = sub.add_parser("bench", help="run the synthetic benchmark", formatter_class=fmt, parents=[common])
    p.add_argument("--spec", default=None, help="bench spec JSON (default: the shipped preset)")
    p.add_argument("--preset", default="tables.json", help="shipped preset used when --spec is absent")
    p.add_argument("--out", default="bench_out", help="work/output directory (corpus generated here if absent)")
    p.add_argument("--no-timing", action="store_true", help="skip the wall-clock timing run")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="render report.md from records.jsonl", formatter_class=fmt, parents=[common])
    p.add_argument("--output-dir", default=None, help="output directory (default: from config)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.config = args.config or args.global_config
    args.log_level = args.log_level or args.global_log_level
    logs.configure(args.log_level)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
