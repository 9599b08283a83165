"""Command-line entry point.

Exit codes: 0 clean run, 3 at least one alert fired, 1 usage error,
2 bad input (missing or malformed file, invalid config).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from . import __version__
from .addresses import AddressMap, DeviceSnapshot, Resolution, shipped_snapshot
from .config import (FilterMode, FilterSpec, HookKind, HooksConfig, default_multilayer_config,
                     load_hooks_config, validate)
from .dispatch import (EventSelection, JsonlAlertSink, PackageMap, RunSummary, TextEventSink,
                       dispatch_loop)
from .errors import InputError, TracescopeError
from .signatures import WriteCapture, default_signatures
from .sources import (SCENARIO_NAMES, ListSource, Scenario, build_scenario, emit_probe_plan, open_replay,
                      write_replay)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_ALERTS = 3

CAPTURE_ENV = "TRACESCOPE_CAPTURE_DIR"
BUILTIN_FIXTURES = "builtin"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="hooks configuration (default: the shipped multi-layer set)")
    p.add_argument("--fixtures", metavar="DIR", default=BUILTIN_FIXTURES,
                   help="device snapshot used to resolve probe addresses (default: builtin)")


def _add_pipeline_args(p: argparse.ArgumentParser) -> None:
    _add_config_args(p)
    target = p.add_mutually_exclusive_group()
    target.add_argument("--uid", type=int, action="append", metavar="UID",
                        help="trace only this uid (repeatable)")
    target.add_argument("--package", action="append", metavar="NAME",
                        help="trace only this package (repeatable; needs --packages-file)")
    target.add_argument("--all-user-apps", action="store_true",
                        help="trace every uid above 10000")
    p.add_argument("--packages-file", metavar="FILE", help="'package uid' lines, as in packages.list")
    p.add_argument("--follow-processes", action="store_true",
                   help="keep tracing a process after its uid stops matching the filter")
    p.add_argument("--events", metavar="NAMES",
                   help="comma-separated hook names to keep from the config")
    p.add_argument("--capture-dir", metavar="DIR", default=os.environ.get(CAPTURE_ENV),
                   help=f"write forensic captures here (default: ${CAPTURE_ENV})")
    p.add_argument("--output", choices=("text", "jsonl"), default="text",
                   help="text: every event plus alerts; jsonl: alerts only")
    p.add_argument("--alerts-out", metavar="FILE", help="also append alert JSON lines to FILE")
    p.add_argument("--address-map", metavar="FILE",
                   help="address map JSON to use instead of resolving from --fixtures")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tracescope", description="Multi-layer Android event tracing pipeline, host side.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("replay", help="run the pipeline over a recorded replay file")
    p.add_argument("input", help="replay file (BPFRPLY1 format)")
    _add_pipeline_args(p)

    p = sub.add_parser("simulate", help="run the pipeline over a seeded scenario")
    p.add_argument("scenario", choices=SCENARIO_NAMES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--app-uid", type=int, default=10050)
    p.add_argument("--app-pid", type=int, default=4242)
    p.add_argument("--record", metavar="FILE", help="also write the scenario as a replay file")
    _add_pipeline_args(p)

    p = sub.add_parser("plan", help="print the probe plan a kernel backend would attach")
    _add_config_args(p)
    p.add_argument("--out", metavar="FILE", help="write the plan here instead of stdout")
    p.add_argument("--strict", action="store_true", help="fail if any hook cannot be resolved")

    p = sub.add_parser("list-events", help="list configured hooks")
    p.add_argument("--config", metavar="FILE")
    p.add_argument("--fixtures", metavar="DIR",
                   help=f"resolve addresses from this snapshot ('{BUILTIN_FIXTURES}' for the shipped one)")

    p = sub.add_parser("validate-config", help="check a hooks configuration")
    p.add_argument("config", nargs="?", help="config file (default: the shipped one)")

    sub.add_parser("run", help="reserved: attach to a live kernel (not implemented)")
    return parser


# ---------------------------------------------------------------- helpers


def _load_config(path: Optional[str]) -> HooksConfig:
    return load_hooks_config(path) if path else default_multilayer_config()


def _snapshot(fixtures: Optional[str]) -> DeviceSnapshot:
    if fixtures in (None, BUILTIN_FIXTURES):
        return shipped_snapshot()
    return DeviceSnapshot(fixtures)


def _warn(msg: str) -> None:
    print(f"tracescope: {msg}", file=sys.stderr)


def _report_unresolved(res: Resolution) -> None:
    for u in res.unresolved:
        _warn(f"warning: {u}")
    for c in res.collisions:
        _warn(f"warning: {c}")


def _select_events(config: HooksConfig, names: Optional[str]) -> HooksConfig:
    if not names:
        return config
    wanted = [n.strip() for n in names.split(",") if n.strip()]
    by_name = {h.name: h for h in config.hooks}
    unknown = [n for n in wanted if n not in by_name]
    if unknown:
        raise InputError(f"--events names not in the config: {', '.join(unknown)}")
    keep = set(wanted)
    return HooksConfig(tuple(h for h in config.hooks if h.name in keep), config.filter)


def _effective_filter(args, config: HooksConfig) -> FilterSpec:
    if args.uid:
        return FilterSpec.uid_list(args.uid)
    if args.package:
        return FilterSpec.package_list(args.package)
    if args.all_user_apps:
        return FilterSpec.all_user_apps()
    return config.filter


def _address_map(args, config: HooksConfig) -> AddressMap:
    if args.address_map:
        try:
            with open(args.address_map, encoding="utf-8") as f:
                return AddressMap.from_document(json.load(f))
        except OSError as exc:
            raise InputError(f"cannot read address map {args.address_map}: {exc.strerror}") from None
        except ValueError as exc:
            raise InputError(f"malformed address map {args.address_map}: {exc}") from None
    res = _snapshot(args.fixtures).resolve(config)
    _report_unresolved(res)
    return res.address_map


def _run_pipeline(args, source, config: HooksConfig) -> int:
    config = _select_events(config, args.events)
    f = _effective_filter(args, config)
    packages = None
    if f.mode is FilterMode.PACKAGE_LIST:
        if not args.packages_file:
            raise UsageError("--package needs --packages-file")
        packages = PackageMap.load(args.packages_file)
    if args.packages_file and packages is None:
        packages = PackageMap.load(args.packages_file)
    addrs = _address_map(args, config)
    sinks = [TextEventSink(sys.stdout) if args.output == "text" else JsonlAlertSink(sys.stdout)]
    alerts_file = None
    if args.alerts_out:
        try:
            alerts_file = open(args.alerts_out, "a", encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot open {args.alerts_out}: {exc.strerror}") from None
        sinks.append(JsonlAlertSink(alerts_file))
    capture = WriteCapture(args.capture_dir) if args.capture_dir else None
    try:
        summary: RunSummary = dispatch_loop(
            source, f, addrs, default_signatures(), sinks, packages=packages, capture=capture,
            selection=EventSelection.from_config(config), follow_processes=args.follow_processes)
    finally:
        source.close()
        if alerts_file is not None:
            alerts_file.close()
    print(json.dumps(summary.to_dict(), sort_keys=True), file=sys.stderr)
    return EXIT_ALERTS if summary.total_alerts else EXIT_OK


# ------------------------------------------------------------- subcommands


def cmd_replay(args) -> int:
    config = _load_config(args.config)
    return _run_pipeline(args, open_replay(args.input), config)


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    trace = build_scenario(Scenario(args.scenario, args.seed, app_uid=args.app_uid, app_pid=args.app_pid))
    if args.record:
        write_replay(args.record, trace.records)
    return _run_pipeline(args, ListSource(trace.records), config)


def cmd_plan(args) -> int:
    config = _load_config(args.config)
    res = _snapshot(args.fixtures).resolve(config)
    _report_unresolved(res)
    if args.strict and (res.unresolved or res.collisions):
        return EXIT_INPUT
    text = emit_probe_plan(config, res.probes).to_json()
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as f:
                f.write(text)
        except OSError as exc:
            raise InputError(f"cannot write {args.out}: {exc.strerror}") from None
    else:
        sys.stdout.write(text)
    return EXIT_OK


LIST_HEADER = "KIND     NAME  ADDRESS"


def list_events(config: HooksConfig, snapshot: Optional[DeviceSnapshot] = None) -> str:
    """One line per hook: kind, name and, for uprobe-backed hooks, the resolved address."""
    addresses = {}
    if snapshot is not None:
        for p in snapshot.resolve(config).probes:
            addresses[p.display_name] = p.address
    lines = [LIST_HEADER]
    for h in config.hooks:
        line = f"{h.kind.value:<8} {h.name}"
        if snapshot is not None and h.kind in (HookKind.API, HookKind.UPROBE):
            addr = addresses.get(h.name)
            line += f"  {'0x%x' % addr if addr is not None else 'unresolved'}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def cmd_list_events(args) -> int:
    config = _load_config(args.config)
    snapshot = _snapshot(args.fixtures) if args.fixtures else None
    sys.stdout.write(list_events(config, snapshot))
    return EXIT_OK


def cmd_validate_config(args) -> int:
    config = _load_config(args.config)
    problems = validate(config)
    for d in problems:
        print(f"{d}: {d.message}")
    if problems:
        return EXIT_INPUT
    counts = config.counts()
    print("ok: " + ", ".join(f"{counts[k]} {k.value}" for k in HookKind))
    return EXIT_OK


def cmd_run(args) -> int:
    _warn("run: live kernel attachment is not implemented; 'plan' prints what it would attach")
    return EXIT_USAGE


COMMANDS = {
    "replay": cmd_replay,
    "simulate": cmd_simulate,
    "plan": cmd_plan,
    "list-events": cmd_list_events,
    "validate-config": cmd_validate_config,
    "run": cmd_run,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _warn(f"error: {exc}")
        return EXIT_USAGE
    except InputError as exc:
        _warn(f"error: {exc}")
        return EXIT_INPUT
    except TracescopeError as exc:
        _warn(f"error: {exc}")
        return EXIT_INPUT
    except BrokenPipeError:
        # Reader went away (e.g. piped into head); nothing left to report.
        try:
            sys.stdout = open(os.devnull, "w")
        except OSError:
            pass
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
