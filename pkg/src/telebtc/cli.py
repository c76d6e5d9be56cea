"""Command-line entry point.

Exit codes: 0 clean, 1 usage / config / I/O error, 2 protocol detection
(invariant violation or a rejected header).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .bridge_spv import Checkpoint
from .btc_headers import HeaderError, read_headers
from .replay import genesis_checkpoint, replay
from .sim.harness import InvariantViolation, dumps_report, run_scenario
from .sim.scenario import PRESET_NAMES, InvalidConfig, load_scenario, preset_text

EXIT_OK, EXIT_USAGE, EXIT_DETECTED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="telebtc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario file or preset")
    run.add_argument("--scenario", required=True, help="scenario JSON path or preset name")
    run.add_argument("--seed", type=_u64, default=None, help="override the scenario seed")
    run.add_argument("--out", type=Path, default=None, help="write the full JSON report here")
    run.add_argument("--format", choices=("summary", "events"), default="summary")

    vh = sub.add_parser("verify-headers", help="replay raw 80-byte headers through a bridge")
    vh.add_argument("--file", required=True, type=Path)
    vh.add_argument("--bridge", choices=("spv", "optimistic"), default="spv")
    vh.add_argument("--checkpoint", default=None,
                    help="height:hash:bits:epoch_start_ts (default: mainnet genesis)")
    vh.add_argument("--count", type=int, default=None, help="only the first N headers")

    sub.add_parser("presets", help="list the shipped scenario presets")

    rep = sub.add_parser("report", help="print a saved report")
    rep.add_argument("--in", dest="path", required=True, type=Path)
    rep.add_argument("--format", choices=("summary", "events"), default="summary")
    return parser


def format_summary(report: dict) -> str:
    final = report["final"]
    lines = [
        f"scenario {report['scenario']}  seed {report['seed']}  bridge {report['bridge']}",
        f"ticks {report['ticks_run']}  btc height {final['btc_height']}  "
        f"finalized height {final['finalized_height']}",
        f"telebtc supply {final['telebtc_supply']}  "
        f"locked {sum(l['locked_btc'] for l in final['lockers'].values())}",
        f"violations {report['summary']['violations']}",
    ]
    if report.get("violation"):
        v = report["violation"]
        lines.append(f"  tick {v['tick']}: {v['invariant']}: {v['detail']}")
    lines.append("events")
    for name, n in report["summary"]["event_counts"].items():
        lines.append(f"  {name} {n}")
    lines.append("agents")
    for name, out in report["outcomes"].items():
        extra = " ".join(f"{k}={json.dumps(v, sort_keys=True)}" for k, v in out.items()
                         if k not in ("role", "profile"))
        lines.append(f"  {name} [{out['role']}/{out['profile']}] {extra}")
    return "\n".join(lines) + "\n"


def format_events(report: dict) -> str:
    return "".join(json.dumps(ev, sort_keys=True) + "\n" for ev in report["events"])


def _emit(report: dict, fmt: str) -> None:
    sys.stdout.write(format_summary(report) if fmt == "summary" else format_events(report))


def cmd_run(args) -> int:
    try:
        cfg = load_scenario(args.scenario, args.seed)
    except (InvalidConfig, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    code = EXIT_OK
    try:
        report = run_scenario(cfg)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        report = exc.report
        code = EXIT_DETECTED
    if args.out is not None:
        try:
            args.out.write_text(dumps_report(report))
        except OSError as exc:
            print(f"error: cannot write report: {exc}", file=sys.stderr)
            return EXIT_USAGE
    _emit(report, args.format)
    return code


def cmd_verify_headers(args) -> int:
    try:
        headers = read_headers(args.file)
        checkpoint = Checkpoint.parse(args.checkpoint) if args.checkpoint else genesis_checkpoint()
    except (OSError, HeaderError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.count is not None:
        headers = headers[:args.count]
    result = replay(headers, args.bridge, checkpoint)
    retargets = [(h, want, got) for h, want, got in result.boundary_checks]
    print(f"bridge {args.bridge}  headers {len(headers)}  accepted {result.accepted}  "
          f"finalized {result.finalized}")
    for h, want, got in retargets:
        shown = f"{want:#010x}" if want is not None else "unknown"
        print(f"retarget at {h}: computed {shown} header {got:#010x}")
    if not result.ok:
        print(f"rejected at height {result.rejected_height}: {result.reason} {result.detail}".rstrip(),
              file=sys.stderr)
        return EXIT_DETECTED
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in PRESET_NAMES:
        desc = json.loads(preset_text(name)).get("description", "")
        print(f"{name:26s} {desc}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        report = json.loads(args.path.read_text())
        _emit(report, args.format)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: cannot read report: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "verify-headers": cmd_verify_headers,
               "presets": cmd_presets, "report": cmd_report}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
