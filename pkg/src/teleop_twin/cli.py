"""Command-line entry point: simulate, metrics, compare, netcheck.

Exit codes: 0 success, 2 configuration/input error, 3 runtime violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .harness.analysis import UnpairedInput, compare_conditions, replay_metrics
from .harness.config import ConfigError, load_config
from .harness.runlog import CorruptLog, read_log
from .harness.sim import simulate
from .metrics import EmptyLog, MetricsReport
from .transport import Datagram, EmptyTrace, UdpLoopbackLink, latency_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VIOLATION = 3


def _parse_apex(text: Optional[str]):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("apex must be x,y,z")
    return tuple(float(p) for p in parts)


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    result = simulate(cfg)
    text = result.log.to_text()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    for line in result.violations:
        print(f"violation: {line}", file=sys.stderr)
    print(
        f"{cfg.name}: seed={cfg.seed} samples={len(result.log.samples)} "
        f"events={len(result.log.events)} violations={len(result.violations)}",
        file=sys.stderr,
    )
    return EXIT_VIOLATION if result.violations else EXIT_OK


def _cmd_metrics(args) -> int:
    report = replay_metrics(read_log(args.log), args.apex)
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(report.as_text())
    return EXIT_OK


def _load_reports(directory: str, apex) -> List[MetricsReport]:
    path = Path(directory)
    if not path.is_dir():
        raise ConfigError(directory, "not a directory")
    reports = []
    for f in sorted(path.iterdir()):
        if f.suffix == ".csv":
            reports.append(replay_metrics(read_log(f), apex))
        elif f.suffix == ".json":
            try:
                reports.append(MetricsReport.from_dict(json.loads(f.read_text())))
            except (ValueError, TypeError) as exc:
                raise ConfigError(str(f), f"not a metrics report: {exc}") from None
    if not reports:
        raise ConfigError(directory, "no .csv logs or .json reports found")
    return reports


def _cmd_compare(args) -> int:
    groups: Dict[str, List[MetricsReport]] = {}
    if args.a:
        groups["A"] = _load_reports(args.a, args.apex)
    if args.b:
        groups["B"] = _load_reports(args.b, args.apex)
    for item in args.cond or []:
        label, sep, directory = item.partition("=")
        if not sep or not label:
            raise ConfigError("--cond", f"expected LABEL=DIR, got {item!r}")
        groups[label] = _load_reports(directory, args.apex)
    pairs = None
    if args.pair:
        pairs = []
        for item in args.pair:
            a, sep, b = item.partition(":")
            if not sep:
                raise ConfigError("--pair", f"expected A:B, got {item!r}")
            pairs.append((a, b))
    table = compare_conditions(groups, pairs=pairs, paired_by=args.paired_by)
    print(table.as_text())
    return EXIT_OK


def _cmd_netcheck(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    if args.delay_ms is not None:
        cfg = replace(cfg, net=replace(cfg.net, delay_ms=args.delay_ms))
    result = simulate(cfg)
    failed = False
    for hand, trace in sorted(result.latency.items()):
        print(f"[{hand}] simulated channel")
        try:
            report = latency_report(trace, args.budget_ms)
        except EmptyTrace:
            print("samples=0\nverdict=fail")
            failed = True
            continue
        print(report.as_text())
        failed |= not report.passed
    if args.loopback:
        failed |= not _loopback_check(args.budget_ms, args.loopback_packets)
    return EXIT_VIOLATION if failed else EXIT_OK


def _loopback_check(budget_ms: float, packets: int) -> bool:
    def clock() -> int:
        return time.perf_counter_ns() // 1000

    with UdpLoopbackLink(clock) as link:
        for seq in range(1, packets + 1):
            link.send(Datagram(seq, clock(), (0.0, 0.0, 0.0)))
            time.sleep(1.0 / 90)
        time.sleep(0.05)
        trace = list(link.latencies)
    print("[loopback] udp 127.0.0.1")
    try:
        report = latency_report(trace, budget_ms)
    except EmptyTrace:
        print("samples=0\nverdict=fail")
        return False
    print(report.as_text())
    return report.passed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="teleop-twin", description="Teleoperation digital-twin simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write its log")
    p.add_argument("--config", required=True, help="scenario JSON file or bundled name (brain_trace, tumor_resect)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="log path (default: stdout)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("metrics", help="compute the metrics report of a log")
    p.add_argument("--log", required=True)
    p.add_argument("--apex", type=_parse_apex, default=None, help="anchor point x,y,z in mm")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("compare", help="paired comparison of conditions")
    p.add_argument("--a", help="directory of condition A logs (.csv) or reports (.json)")
    p.add_argument("--b", help="directory of condition B")
    p.add_argument("--cond", action="append", metavar="LABEL=DIR", help="additional condition")
    p.add_argument("--pair", action="append", metavar="A:B", help="follow-up pair (default: all pairs)")
    p.add_argument("--paired-by", default="seed")
    p.add_argument("--apex", type=_parse_apex, default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("netcheck", help="latency report for a scenario's channel")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--delay-ms", type=float, default=None, help="override net.delay_ms")
    p.add_argument("--budget-ms", type=float, default=11.1)
    p.add_argument("--loopback", action="store_true", help="also time real UDP datagrams over 127.0.0.1")
    p.add_argument("--loopback-packets", type=int, default=90)
    p.set_defaults(func=_cmd_netcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CorruptLog, UnpairedInput, EmptyLog) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
