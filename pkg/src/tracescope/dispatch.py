"""Userspace half of the pipeline: filter, resolve, track processes, run signatures, emit.

The loop is single-threaded on purpose. The privilege-escalation signature
compares consecutive syscalls of a process, which needs a total order.
"""
from __future__ import annotations

import enum
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence, TextIO

from .addresses import AddressMap, ProbeKind
from .config import FilterMode, FilterSpec, HooksConfig
from .errors import InputError
from .events import EventContext, EventRecord, Kprobe, SyscallEnter, SyscallExit
from .syscalls import ARM64_SYSCALLS, FORK_SYSCALLS, KPROBE_CATALOG, syscall_name

log = logging.getLogger(__name__)


class Layer(enum.Enum):
    SYSCALL = "syscall"
    KERNEL = "kernel"
    NATIVE = "native"
    API = "api"


class ResolvedEvent(NamedTuple):
    record: EventRecord
    display_name: str
    layer: Layer

    @property
    def context(self) -> EventContext:
        return self.record.context


# ---------------------------------------------------------------- filtering


class UnknownPackage(InputError):
    def __init__(self, name: str):
        super().__init__(f"package {name!r} is not in the package map")
        self.name = name


class PackageMap(dict):
    """package name -> uid, as in the device's packages.list."""

    @classmethod
    def parse(cls, text: str) -> "PackageMap":
        pkgs = cls()
        for line_no, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2 or not parts[1].isdigit():
                raise InputError(f"packages line {line_no}: expected 'package uid', got {line!r}")
            name, uid = parts[0], int(parts[1])
            if name in pkgs and pkgs[name] != uid:
                raise InputError(f"packages line {line_no}: {name} listed with two uids")
            pkgs[name] = uid
        return pkgs

    @classmethod
    def load(cls, path) -> "PackageMap":
        try:
            with open(path, encoding="utf-8") as f:
                return cls.parse(f.read())
        except OSError as exc:
            raise InputError(f"cannot read package map {path}: {exc.strerror}") from None


def compile_uid_filter(f: FilterSpec, pkgs: Optional[Mapping[str, int]] = None) -> Callable[[int], bool]:
    """The filter as a predicate on uid alone. Package names are resolved here, once."""
    if f.mode is FilterMode.NONE:
        return lambda uid: False
    if f.mode is FilterMode.ALL_USER_APPS:
        threshold = f.user_app_uid_threshold
        return lambda uid: uid > threshold
    if f.mode is FilterMode.UID_LIST:
        uids = frozenset(f.uids)
    else:
        pkgs = pkgs or {}
        missing = sorted(p for p in f.packages if p not in pkgs)
        if missing:
            raise UnknownPackage(missing[0])
        uids = frozenset(pkgs[p] for p in f.packages)
    return uids.__contains__


def compile_filter(f: FilterSpec, pkgs: Optional[Mapping[str, int]] = None) -> Callable[[EventContext], bool]:
    """Build the per-event predicate."""
    uid_ok = compile_uid_filter(f, pkgs)
    return lambda ctx: uid_ok(ctx[4])


def should_trace(ctx: EventContext, f: FilterSpec, pkgs: Optional[Mapping[str, int]] = None) -> bool:
    return compile_filter(f, pkgs)(ctx)


# --------------------------------------------------------------- resolution


class EventResolver:
    """Names events: syscall numbers via the arm64 table, uprobe hits via the AddressMap."""

    def __init__(self, addrs: Optional[AddressMap] = None,
                 syscall_table: Mapping[int, str] = ARM64_SYSCALLS,
                 kprobe_ids: Mapping[str, int] = KPROBE_CATALOG):
        self.addrs = addrs or AddressMap()
        self.syscall_table = syscall_table
        self.kprobe_names = {i: n for n, i in kprobe_ids.items()}
        self._cache: dict = {}

    def name_of(self, kind) -> tuple[str, Layer]:
        hit = self._cache.get(kind)
        if hit is not None:
            return hit
        if type(kind) in (SyscallEnter, SyscallExit):
            hit = (self.syscall_table.get(kind.nr) or syscall_name(kind.nr), Layer.SYSCALL)
        elif type(kind) is Kprobe:
            hit = (self.kprobe_names.get(kind.kprobe_id) or f"kprobe#{kind.kprobe_id}", Layer.KERNEL)
        else:
            entry = self.addrs.get(kind.address)
            if entry is None:
                hit = (f"unknown@0x{kind.address:x}", Layer.NATIVE)
            else:
                hit = (entry.display_name, Layer.API if entry.kind is ProbeKind.API_CALL else Layer.NATIVE)
        if type(kind) is not SyscallExit or len(self._cache) < 65536:
            self._cache[kind] = hit
        return hit

    def resolve(self, rec: EventRecord) -> ResolvedEvent:
        name, layer = self.name_of(rec.kind)
        return ResolvedEvent(rec, name, layer)


def resolve_event(rec: EventRecord, addrs: AddressMap,
                  syscall_table: Mapping[int, str] = ARM64_SYSCALLS) -> ResolvedEvent:
    return EventResolver(addrs, syscall_table).resolve(rec)


class EventSelection:
    """Names of the events the operator chose; everything else is dropped at the boundary."""

    def __init__(self, names: Iterable[str]):
        self.names = frozenset(names)

    @classmethod
    def from_config(cls, config: HooksConfig) -> "EventSelection":
        return cls(h.name for h in config.hooks)

    def __contains__(self, ev: ResolvedEvent) -> bool:
        return self.selects(ev.display_name)

    def selects(self, name: str) -> bool:
        if name in self.names:
            return True
        # A collided address names every candidate; any chosen candidate keeps it.
        return "|" in name and any(n in self.names for n in name.split("|"))


# ------------------------------------------------------------ process table


@dataclass
class ProcessInfo:
    uid: int
    comm: str
    first_seen_ns: int


class ProcessTable:
    def __init__(self):
        self._procs: dict[int, ProcessInfo] = {}

    def __contains__(self, pid) -> bool:
        return pid in self._procs

    def __len__(self) -> int:
        return len(self._procs)

    def get(self, pid: int) -> Optional[ProcessInfo]:
        return self._procs.get(pid)

    def update(self, ev: ResolvedEvent) -> None:
        rec = ev[0]
        ctx = rec[0]
        info = self._procs.get(ctx[1])
        if info is None:
            self._procs[ctx[1]] = ProcessInfo(ctx.uid, ctx.comm, ctx.timestamp_ns)
        else:
            info.uid = ctx[4]
            info.comm = ctx[5]
        kind = rec[1]
        if type(kind) is SyscallExit:
            if kind.ret > 0 and ev.display_name in FORK_SYSCALLS and kind.ret not in self._procs:
                self._procs[kind.ret] = ProcessInfo(ctx.uid, ctx.comm, ctx.timestamp_ns)
        elif type(kind) is Kprobe and ev.display_name == "sched_process_exit" and ctx.tid == ctx.pid:
            # Thread exits fire the same hook; only the group leader ends the process.
            self._procs.pop(ctx.pid, None)


# -------------------------------------------------------------------- sinks


class Sink:
    """Receives traced events and alerts. Override either method; both default to no-ops."""

    def on_event(self, ev: ResolvedEvent) -> None:
        pass

    def on_alert(self, alert) -> None:
        pass

    def flush(self) -> None:
        pass


class CollectingSink(Sink):
    def __init__(self):
        self.events: list[ResolvedEvent] = []
        self.alerts: list = []

    def on_event(self, ev):
        self.events.append(ev)

    def on_alert(self, alert):
        self.alerts.append(alert)


def _render_arg(arg) -> str:
    t, v = arg
    label = t.name.lower()
    if label == "str":
        return json.dumps(v, ensure_ascii=False)
    if label == "bytes":
        head = v[:16].hex()
        return f"bytes[{len(v)}]:{head}{'..' if len(v) > 16 else ''}"
    if label == "addr":
        return f"0x{v:x}"
    return str(v)


def format_relative_time(ns: int) -> str:
    ns = max(ns, 0)
    secs, frac = divmod(ns, 1_000_000_000)
    hours, rem = divmod(secs, 3600)
    minutes, seconds = divmod(rem, 60)
    return f"{hours:02d}:{minutes:02d}:{seconds:02d}.{frac // 1000:06d}"


def format_event_line(ev: ResolvedEvent, t0: int) -> str:
    """time uid pid tid ppid comm layer name args, whitespace separated."""
    rec = ev.record
    ctx = rec.context
    if type(rec.kind) is SyscallExit:
        rendered = f"= {rec.kind.ret}"
    else:
        rendered = "(" + ", ".join(_render_arg(a) for a in rec.args) + ")"
    comm = ctx.comm.replace(" ", "_") or "-"
    name = ev.display_name + (" [exit]" if type(rec.kind) is SyscallExit else "")
    return (f"{format_relative_time(ctx.timestamp_ns - t0)} {ctx.uid:>6} {ctx.pid:>6} {ctx.tid:>6} "
            f"{ctx.ppid:>6} {comm:<15} {ev.layer.value:<7} {name} {rendered}")


class TextEventSink(Sink):
    """Human-readable trace: one line per event, alerts inline."""

    def __init__(self, stream: TextIO, show_alerts: bool = True):
        self.stream = stream
        self.show_alerts = show_alerts
        self.t0: Optional[int] = None

    def on_event(self, ev):
        if self.t0 is None:
            self.t0 = ev.record.context.timestamp_ns
        self.stream.write(format_event_line(ev, self.t0) + "\n")

    def on_alert(self, alert):
        if self.show_alerts:
            self.stream.write(alert.format_text() + "\n")

    def flush(self):
        self.stream.flush()


class JsonlAlertSink(Sink):
    def __init__(self, stream: TextIO):
        self.stream = stream

    def on_alert(self, alert):
        self.stream.write(json.dumps(alert.to_dict(), separators=(",", ":")) + "\n")

    def flush(self):
        self.stream.flush()


# --------------------------------------------------------------------- loop


@dataclass
class RunSummary:
    events_seen: int = 0
    events_traced: int = 0
    alerts_by_kind: dict = field(default_factory=dict)
    signature_errors: dict = field(default_factory=dict)

    @property
    def total_alerts(self) -> int:
        return sum(self.alerts_by_kind.values())

    def to_dict(self) -> dict:
        return {
            "events_seen": self.events_seen,
            "events_traced": self.events_traced,
            "alerts_by_kind": dict(sorted(self.alerts_by_kind.items())),
            "signature_errors": dict(sorted(self.signature_errors.items())),
        }


def _overrides(obj, name: str) -> bool:
    return getattr(type(obj), name, None) is not getattr(Sink, name)


def _wants(obj, name: str, layer: Layer) -> bool:
    wants = getattr(obj, "wants", None)
    return True if wants is None else bool(wants(name, layer))


def dispatch_loop(src, filter, addrs: Optional[AddressMap], signatures: Sequence, sinks: Sequence, *,
                  packages: Optional[Mapping[str, int]] = None, capture=None,
                  selection: Optional[EventSelection] = None,
                  resolver: Optional[EventResolver] = None,
                  process_table: Optional[ProcessTable] = None,
                  follow_processes: bool = False) -> RunSummary:
    """Drive every event from ``src`` through filter, signatures and sinks, in source order.

    Sources offering ``set_prefilter`` get the filter and event selection
    pushed down, so rejected events are dropped before their arguments are
    decoded; they still count in ``events_seen``.

    ``filter`` is a FilterSpec or an already compiled predicate. Signatures
    expose ``name`` and ``on_event(ResolvedEvent) -> list[Alert]``, and may
    define ``wants(display_name, layer) -> bool`` to skip events they never
    act on. A signature that raises is counted in ``signature_errors`` and
    the loop carries on. ``capture`` (optional) sees every traced event it
    wants before the signatures and is told about each alert afterwards.

    With ``follow_processes`` a pid admitted once by the filter stays traced
    until its group leader exits, even if its uid later stops matching. That
    is what lets the privesc signature see a uid-0 syscall from an app
    process under a uid-based filter. Off by default: the filter then
    judges every event on its own uid.
    """
    accept = compile_filter(filter, packages) if isinstance(filter, FilterSpec) else filter
    resolver = resolver or EventResolver(addrs)
    name_of = resolver.name_of
    procs = process_table if process_table is not None else ProcessTable()
    update = procs.update
    event_sinks = [s.on_event for s in sinks if _overrides(s, "on_event")]
    alert_sinks = [s.on_alert for s in sinks if _overrides(s, "on_alert")]
    sigs = [(getattr(s, "name", type(s).__name__), s) for s in signatures]
    routes: dict = {}
    new_event = tuple.__new__

    def route_for(name: str, layer: Layer):
        if selection is not None and not selection.selects(name):
            return False
        handlers = tuple((n, s.on_event) for n, s in sigs if _wants(s, name, layer))
        cap = capture.on_event if capture is not None and _wants(capture, name, layer) else None
        return handlers, cap

    by_kind: dict = {}

    def lookup(kind):
        name, layer = name_of(kind)
        route = routes.get(name)
        if route is None:
            route = routes[name] = route_for(name, layer)
        hit = (name, layer, route)
        if len(by_kind) < 65536:
            by_kind[kind] = hit
        return hit

    uid_ok = None
    if isinstance(filter, FilterSpec) and not follow_processes:
        uid_ok = compile_uid_filter(filter, packages)

    def keep_at_source(uid: int, kind) -> bool:
        # Same decision the loop makes, taken before the context and arguments are built.
        if uid_ok is not None and not uid_ok(uid):
            return False
        hit = by_kind.get(kind) or lookup(kind)
        return hit[2] is not False

    set_prefilter = getattr(src, "set_prefilter", None)
    if set_prefilter is not None:
        set_prefilter(keep_at_source)
    skipped_before = getattr(src, "skipped", 0)
    summary = RunSummary()
    alert_counts: Counter = Counter()
    errors: Counter = Counter()
    seq = 0
    seen = traced = 0
    followed: set = set()
    try:
        while True:
            batch = src.next_batch()
            if not batch:
                break
            seen += len(batch)
            for rec in batch:
                ctx = rec[0]
                if not accept(ctx):
                    if not (follow_processes and ctx.pid in followed):
                        continue
                elif follow_processes:
                    followed.add(ctx.pid)
                kind = rec[1]
                name, layer, route = by_kind.get(kind) or lookup(kind)
                if route is False:
                    continue
                ev = new_event(ResolvedEvent, (rec, name, layer))
                if follow_processes and name == "sched_process_exit" and ctx.tid == ctx.pid:
                    followed.discard(ctx.pid)
                traced += 1
                update(ev)
                handlers, cap = route
                if cap is not None:
                    cap(ev)
                alerts = None
                for sig_name, on_event in handlers:
                    try:
                        produced = on_event(ev)
                    except Exception as exc:
                        errors[f"{sig_name}:{type(exc).__name__}"] += 1
                        log.debug("signature %s failed on %s: %s", sig_name, name, exc)
                        continue
                    if produced:
                        if alerts is None:
                            alerts = []
                        for alert in produced:
                            seq += 1
                            alerts.append(alert.with_seq(seq))
                for emit in event_sinks:
                    emit(ev)
                if alerts:
                    for alert in alerts:
                        alert_counts[alert.kind_name] += 1
                        if capture is not None:
                            capture.link_alert(alert)
                        for emit in alert_sinks:
                            emit(alert)
    finally:
        seen += getattr(src, "skipped", 0) - skipped_before
        summary.events_seen = seen
        summary.events_traced = traced
        summary.alerts_by_kind = dict(alert_counts)
        summary.signature_errors = dict(errors)
        for s in sinks:
            s.flush()
        if capture is not None:
            capture.finalize()
    return summary
