"""Event producers: recorded replays, seeded scenario simulation, and the probe plan.

Every source hands out records through ``next_batch()``; an empty batch
means end of stream. The probe plan is the document a kernel backend would
consume to attach the tracepoints, kprobes and uprobes this package models.
"""
from __future__ import annotations

import io
import json
import queue
import random
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .addresses import AddressMap, ResolvedProbe, shipped_snapshot
from .config import FilterMode, FilterSpec, HookKind, HooksConfig, default_multilayer_config
from .errors import InputError, TracescopeError
from .events import (MAGIC, MAX_ARGS, Arg, ArgLayout, ArgType, DecodeError, EventContext, EventRecord,
                     Kprobe, SyscallEnter, SyscallExit, UserProbe, _FIXED_BY_TAG, _KIND_CACHES,
                     context_from_fields, decode_args, encode_event,
                     kind_from_fields, normalize_comm, unpack_fixed)
from .syscalls import KPROBE_CATALOG, SYSCALL_NUMBERS, kprobe_id_table, syscall_number

REPLAY_MAGIC = b"BPFRPLY1"
_FRAME = struct.Struct("<I")
# Largest possible message: header, kind payload and eight full-size arguments.
MAX_FRAME = 64 + 8 * (5 + 4096)
DEFAULT_BATCH = 512
_new_record = tuple.__new__


class SourceError(TracescopeError):
    pass


class SourceIoError(SourceError, InputError):
    pass


class FormatError(SourceError, InputError):
    def __init__(self, offset: int, reason: str):
        super().__init__(f"replay format error at byte {offset}: {reason}")
        self.offset = offset
        self.reason = reason


class EventSource:
    """Base contract: ``next_batch()`` returns records in order, ``[]`` once exhausted."""

    def next_batch(self) -> list[EventRecord]:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __iter__(self) -> Iterator[EventRecord]:
        while True:
            batch = self.next_batch()
            if not batch:
                return
            yield from batch

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ListSource(EventSource):
    def __init__(self, records: Iterable[EventRecord], batch_size: int = DEFAULT_BATCH):
        self.records = list(records)
        self.batch_size = batch_size
        self._pos = 0

    def next_batch(self):
        batch = self.records[self._pos:self._pos + self.batch_size]
        self._pos += len(batch)
        return batch


# ------------------------------------------------------------------- replay


class ReplaySource(EventSource):
    """Streams a replay file in fixed-size reads.

    Records that decode cleanly are always delivered before a format error
    found later in the same read is raised.
    """

    read_size = 1 << 20

    def __init__(self, stream, name: str = "<replay>"):
        self.stream = stream
        self.name = name
        self._buf = b""
        self._pos = 0
        self._file_offset = len(REPLAY_MAGIC)  # file offset of self._buf[0]
        self._eof = False
        self._pending: Optional[Exception] = None
        self.prefilter = None
        self.skipped = 0
        self._layouts: dict = {}  # kind -> ArgLayout last seen for it
        head = self._read(len(REPLAY_MAGIC))
        if head and head != REPLAY_MAGIC:
            raise FormatError(0, f"expected file magic {REPLAY_MAGIC!r}, found {head[:8]!r}")
        if len(head) < len(REPLAY_MAGIC):
            if head:
                raise FormatError(0, "file shorter than the replay header")
            self._eof = True

    def _read(self, n: int) -> bytes:
        try:
            return self.stream.read(n)
        except OSError as exc:
            raise SourceIoError(f"cannot read {self.name}: {exc.strerror or exc}") from None

    def _fill(self) -> None:
        chunk = self._read(self.read_size)
        if not chunk:
            self._eof = True
            return
        self._file_offset += self._pos
        self._buf = self._buf[self._pos:] + chunk
        self._pos = 0

    def set_prefilter(self, keep) -> None:
        """Install ``keep(uid, kind) -> bool``. Rejected frames are counted in
        ``skipped`` and never get a context or decoded arguments."""
        self.prefilter = keep

    def next_batch(self, max_records: int = 4096) -> list[EventRecord]:
        if self._pending is not None:
            exc, self._pending = self._pending, None
            raise exc
        out = []
        append = out.append
        frame_len = _FRAME.unpack_from
        fixed_by_tag = _FIXED_BY_TAG
        caches = _KIND_CACHES
        keep = self.prefilter
        layouts = self._layouts
        skipped = 0
        remaining = max_records
        buf, pos = self._buf, self._pos
        buflen = len(buf)
        while remaining:
            avail = buflen - pos
            length = frame_len(buf, pos)[0] if avail >= 4 else -1
            if length > MAX_FRAME:
                self._pending = FormatError(self._file_offset + pos, f"frame length {length} exceeds {MAX_FRAME}")
                break
            if length < 0 or avail < 4 + length:
                if self._eof:
                    if avail:
                        self._pending = FormatError(self._file_offset + pos, "truncated frame at end of file")
                    break
                self._pos = pos
                self._fill()
                buf, pos = self._buf, self._pos
                buflen = len(buf)
                continue
            start = pos + 4
            stop = start + length
            try:
                fixed = fixed_by_tag.get(buf[start + 44]) if length >= 45 else None
                if (fixed is None or fixed.size > length
                        or (fields := fixed.unpack_from(buf, start))[0] != MAGIC or fields[-1] > MAX_ARGS):
                    fields = unpack_fixed(buf, start, stop)
                tag = fields[7]
                if tag == 2:
                    kind = caches[2].get((fields[8], fields[9])) or kind_from_fields(fields)
                else:
                    kind = caches[tag].get(fields[8]) or kind_from_fields(fields)
                if keep is not None and not keep(fields[5], kind):
                    skipped += 1
                    pos = stop
                    continue
                if fields[-1]:
                    layout = layouts.get(kind)
                    got = layout.decode(buf, start + fixed.size, stop) if layout is not None else None
                    if got is None:
                        got = decode_args(buf, start + fixed.size, stop, fields[-1], start)
                        if len(layouts) < 4096:
                            layouts[kind] = ArgLayout(a[0] for a in got[0])
                    args, apos = got
                    if apos != stop:
                        raise FormatError(self._file_offset + pos,
                                          f"frame declares {length} bytes, message is {apos - start}")
                else:
                    args = ()
                    if start + fixed.size != stop:
                        raise FormatError(self._file_offset + pos,
                                          f"frame declares {length} bytes, message is {fixed.size}")
            except DecodeError as exc:
                self._pending = FormatError(self._file_offset + pos, str(exc))
                break
            except FormatError as exc:
                self._pending = exc
                break
            append(_new_record(EventRecord, (context_from_fields(fields), kind, args)))
            remaining -= 1
            pos = stop
        self._pos = pos
        self.skipped += skipped
        if not out and self._pending is not None:
            exc, self._pending = self._pending, None
            raise exc
        return out

    def close(self):
        self.stream.close()


def open_replay(path) -> ReplaySource:
    try:
        f = open(path, "rb")
    except OSError as exc:
        raise SourceIoError(f"cannot open replay {path}: {exc.strerror}") from None
    try:
        return ReplaySource(f, str(path))
    except Exception:
        f.close()
        raise


class ReplayWriter:
    def __init__(self, stream):
        self.stream = stream
        self.count = 0
        stream.write(REPLAY_MAGIC)

    def write(self, record: EventRecord) -> None:
        self.write_encoded(encode_event(record))

    def write_encoded(self, message: bytes) -> None:
        self.stream.write(_FRAME.pack(len(message)) + message)
        self.count += 1

    def close(self):
        self.stream.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_replay(path, records: Iterable[EventRecord]) -> int:
    try:
        with ReplayWriter(open(path, "wb")) as w:
            for rec in records:
                w.write(rec)
            return w.count
    except OSError as exc:
        raise SourceIoError(f"cannot write replay {path}: {exc.strerror}") from None


def replay_bytes(records: Iterable[EventRecord]) -> bytes:
    buf = io.BytesIO()
    w = ReplayWriter(buf)
    for rec in records:
        w.write(rec)
    return buf.getvalue()


# ------------------------------------------------------------ queued source


_END = object()


class QueuedSource(EventSource):
    """Runs ``inner`` on a feeder thread behind a bounded queue; batch order is preserved."""

    def __init__(self, inner: EventSource, maxsize: int = 8):
        self.inner = inner
        self._q: queue.Queue = queue.Queue(maxsize)
        self._stop = threading.Event()
        self._done = False
        self._thread = threading.Thread(target=self._feed, name="tracescope-feeder", daemon=True)
        self._thread.start()

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self._q.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _feed(self):
        try:
            while not self._stop.is_set():
                batch = self.inner.next_batch()
                if not batch:
                    break
                if not self._put(batch):
                    return
            self._put(_END)
        except BaseException as exc:  # handed to the consumer thread
            self._put(exc)

    @property
    def skipped(self) -> int:
        return getattr(self.inner, "skipped", 0)

    def next_batch(self):
        if self._done:
            return []
        item = self._q.get()
        if item is _END:
            self._done = True
            return []
        if isinstance(item, BaseException):
            self._done = True
            raise item
        return item

    def close(self):
        self._stop.set()
        self._thread.join()
        self.inner.close()


# --------------------------------------------------------------- scenarios

SCENARIO_NAMES = ("dropper_dex", "dropper_elf", "dropper_archive", "privesc", "benign")

SCENARIO_MAGIC = {
    "dropper_dex": b"dex\n",
    "dropper_elf": b"\x7fELF",
    "dropper_archive": b"PK\x03\x04",
}

DEFAULT_PATHS = {
    "dropper_dex": "/data/user/0/ufD.wykyx.vlhvh/files/dex",
    "dropper_elf": "/data/user/0/org.rabbit/files/rssocks",
    "dropper_archive": "/data/user/0/dj.czm.ygq/app_en/dj.czm.ygq.jar",
    "privesc": "/data/local/tmp/.x",
    "benign": "/data/user/0/com.example.notes/files/notes.db",
}

DEFAULT_COMMS = {
    "dropper_dex": "ufD.wykyx.vlhvh",
    "dropper_elf": "org.rabbit",
    "dropper_archive": "dj.czm.ygq",
    "privesc": "com.flashlight",
    "benign": "com.example.notes",
}

# Format headers placed right after the magic so payloads look like the real thing.
_PAYLOAD_PREFIX = {
    "dropper_dex": b"dex\n035\x00",
    "dropper_elf": b"\x7fELF\x02\x01\x01\x00",
    "dropper_archive": b"PK\x03\x04\x14\x00\x08\x08",
}

ZYGOTE_PID = 612
SYSTEM_UID = 1000
BACKGROUND_APP_UID = 10077
BACKGROUND_APP_PID = 3177
DATA_DEVICE = 0xFD05
WRITE_CHUNK_MAX = 4096
AT_FDCWD = -100


@dataclass(frozen=True)
class Scenario:
    """A seeded, reproducible event stream. An empty payload is generated from the seed."""

    name: str
    seed: int = 0
    app_uid: int = 10050
    app_pid: int = 4242
    payload: bytes = b""
    path: str = ""
    comm: str = ""

    def __post_init__(self):
        if self.name not in SCENARIO_NAMES:
            raise InputError(f"unknown scenario {self.name!r}; choose from {', '.join(SCENARIO_NAMES)}")
        if not self.path:
            object.__setattr__(self, "path", DEFAULT_PATHS[self.name])
        if not self.comm:
            object.__setattr__(self, "comm", DEFAULT_COMMS[self.name])
        object.__setattr__(self, "comm", normalize_comm(self.comm))
        if self.name in SCENARIO_MAGIC:
            if not self.payload:
                object.__setattr__(self, "payload", _generate_payload(self.name, self.seed))
            elif len(self.payload) < 5 or not self.payload.startswith(SCENARIO_MAGIC[self.name]):
                raise InputError(f"{self.name} payload must start with its magic and have a body")

    @property
    def magic(self) -> Optional[bytes]:
        return SCENARIO_MAGIC.get(self.name)


def _generate_payload(name: str, seed: int) -> bytes:
    rng = random.Random(f"payload:{name}:{seed}")
    body = rng.randbytes(rng.randrange(3000, 14000))
    return _PAYLOAD_PREFIX[name] + body


def _split_payload(rng: random.Random, payload: bytes) -> list[tuple[int, bytes]]:
    """At least two chunks, each at most one capture buffer; the first covers the magic."""
    chunks = []
    pos = 0
    n = len(payload)
    while pos < n:
        lo = 4 if pos == 0 else 1
        hi = min(WRITE_CHUNK_MAX, n - pos)
        if pos == 0:
            hi = min(hi, n - 1)  # leave something for a second write
        size = rng.randint(lo, max(lo, hi))
        chunks.append((pos, payload[pos:pos + size]))
        pos += size
    return chunks


@dataclass
class _Emitter:
    rng: random.Random
    kprobe_ids: dict
    addrs: dict
    t: int = 1_000_000_000
    out: list = field(default_factory=list)

    def tick(self) -> int:
        self.t += self.rng.randint(2_000, 250_000)
        return self.t

    def ctx(self, pid, uid, comm, tid=None, ppid=ZYGOTE_PID) -> EventContext:
        return EventContext(self.tick(), pid, tid or pid, ppid, uid, comm)

    def syscall(self, c: EventContext, name: str, args=(), ret: int = 0) -> None:
        nr = SYSCALL_NUMBERS[name]
        self.out.append(EventRecord(c, SyscallEnter(nr), tuple(args)))
        self.out.append(EventRecord(c._replace(timestamp_ns=self.tick()), SyscallExit(nr, ret)))

    def kprobe(self, c: EventContext, name: str, args=()) -> None:
        self.out.append(EventRecord(c, Kprobe(self.kprobe_ids[name]), tuple(args)))

    def uprobe(self, c: EventContext, display_name: str, args=()) -> None:
        self.out.append(EventRecord(c, UserProbe(self.addrs[display_name]), tuple(args)))

    def vfs_write(self, c: EventContext, path: str, data: bytes, offset: int, inode: int,
                  fn: str = "vfs_write") -> None:
        self.syscall(c, "write" if fn == "vfs_write" else "writev", ret=len(data))
        # The kprobe fires inside the syscall; give it its own timestamp after the exit.
        self.kprobe(c._replace(timestamp_ns=self.tick()), fn,
                    [Arg(ArgType.STR, path), Arg(ArgType.BYTES, data), Arg(ArgType.ULONG, offset),
                     Arg(ArgType.ULONG, DATA_DEVICE), Arg(ArgType.ULONG, inode)])

    def open_file(self, c: EventContext, path: str, fd: int) -> None:
        self.syscall(c, "openat", [Arg(ArgType.INT, AT_FDCWD), Arg(ArgType.STR, path),
                                   Arg(ArgType.INT, 0o1101), Arg(ArgType.UINT, 0o600)], ret=fd)

    def probe_syscall(self, c: EventContext) -> None:
        """A harmless syscall from the monitored set, as an exploit would issue while probing."""
        path = self.rng.choice(["/system/bin/su", "/proc/self/status", "/data/local/tmp"])
        if self.rng.random() < 0.5:
            self.syscall(c, "faccessat", [Arg(ArgType.INT, AT_FDCWD), Arg(ArgType.STR, path),
                                          Arg(ArgType.INT, 0)], ret=-2)
        else:
            self.syscall(c, "openat", [Arg(ArgType.INT, AT_FDCWD), Arg(ArgType.STR, path),
                                       Arg(ArgType.INT, 0), Arg(ArgType.UINT, 0)], ret=-13)

    def background(self, n: int) -> None:
        """Unrelated activity from a system daemon and another user app."""
        rng = self.rng
        for _ in range(n):
            if rng.random() < 0.5:
                c = self.ctx(1501, SYSTEM_UID, "system_server", tid=1501 + rng.randrange(40), ppid=ZYGOTE_PID)
            else:
                c = self.ctx(BACKGROUND_APP_PID, BACKGROUND_APP_UID, "com.android.chr", ppid=ZYGOTE_PID)
            choice = rng.randrange(4)
            if choice == 0:
                self.syscall(c, "getuid", ret=c.uid)
            elif choice == 1:
                self.syscall(c, "close", [Arg(ArgType.INT, rng.randrange(3, 200))])
            elif choice == 2:
                data = rng.randbytes(rng.randrange(1, 64))
                # Offset is past the header, so this can never look like a drop.
                self.vfs_write(c, "/data/misc/logd/events", data, 4096 + rng.randrange(1 << 16), 77001)
            else:
                self.syscall(c, "faccessat", [Arg(ArgType.INT, AT_FDCWD),
                                              Arg(ArgType.STR, "/system/bin/sh"), Arg(ArgType.INT, 1)], ret=0)


@dataclass(frozen=True)
class ScenarioTrace:
    scenario: Scenario
    records: tuple
    inode: Optional[int]
    device: int = DATA_DEVICE


def _scenario_addresses() -> dict:
    res = shipped_snapshot().resolve(default_multilayer_config())
    return {p.display_name: p.address for p in res.probes}


def build_scenario(s: Scenario) -> ScenarioTrace:
    rng = random.Random(f"scenario:{s.name}:{s.seed}")
    em = _Emitter(rng, kprobe_id_table(), _scenario_addresses())
    em.background(rng.randint(3, 8))
    app = lambda tid=None, uid=None: em.ctx(s.app_pid, s.app_uid if uid is None else uid, s.comm, tid=tid)
    inode = None

    if s.name in SCENARIO_MAGIC:
        inode = rng.randrange(100_000, 3_000_000)
        fd = rng.randrange(30, 90)
        em.open_file(app(), s.path, fd)
        em.uprobe(app(), "libc.so!open", [Arg(ArgType.STR, s.path), Arg(ArgType.INT, 0o1101),
                                          Arg(ArgType.UINT, 0o600)])
        for offset, data in _split_payload(rng, s.payload):
            em.vfs_write(app(), s.path, data, offset, inode)
            if rng.random() < 0.3:
                em.background(1)
        em.syscall(app(), "close", [Arg(ArgType.INT, fd)])
        if s.name == "dropper_dex":
            em.uprobe(app(), "dalvik.system.DexFile.openDexFile")
    elif s.name == "privesc":
        for _ in range(rng.randint(4, 12)):
            em.probe_syscall(app())
        child = s.app_pid + rng.randint(1, 50)
        em.syscall(app(), "clone", [Arg(ArgType.ULONG, 0x1200011), Arg(ArgType.ADDR, 0),
                                    Arg(ArgType.ADDR, 0), Arg(ArgType.ULONG, 0), Arg(ArgType.ADDR, 0)], ret=child)
        for _ in range(rng.randint(1, 3)):
            em.probe_syscall(em.ctx(child, s.app_uid, s.comm, ppid=s.app_pid))
        # The exploit runs without a setuid call; the uid simply differs at the next syscall.
        for _ in range(rng.randint(3, 8)):
            em.probe_syscall(app(uid=0))
        em.kprobe(em.ctx(child, s.app_uid, s.comm, ppid=s.app_pid), "sched_process_exit")
    else:
        inode = rng.randrange(100_000, 3_000_000)
        header = rng.choice([b"SQLi", b"{\"a\"", b"\x00\x00\x00\x01"])
        em.open_file(app(), s.path, 40)
        em.vfs_write(app(), s.path, header + rng.randbytes(rng.randrange(4, 200)), 0, inode)
        em.vfs_write(app(), s.path, b"dex\n" + rng.randbytes(32), 8, inode)
        zip_path = s.path + ".zip"
        em.vfs_write(app(), zip_path, b"PK\x00\x00" + rng.randbytes(60), 0, inode + 1)
        elf_path = s.path + ".so"
        em.vfs_write(app(), elf_path, b"\x7fEL", 0, inode + 2)
        em.vfs_write(app(), elf_path, b"X" + rng.randbytes(40), 3, inode + 2)
        em.syscall(app(), "close", [Arg(ArgType.INT, 40)])
    em.background(rng.randint(2, 6))
    if s.name != "privesc":
        em.kprobe(app(), "sched_process_exit")
    return ScenarioTrace(s, tuple(em.out), inode)


def simulate_scenario(s: Scenario, batch_size: int = DEFAULT_BATCH) -> ListSource:
    return ListSource(build_scenario(s).records, batch_size)


# ---------------------------------------------------------------- probe plan


@dataclass(frozen=True)
class PlannedUprobe:
    target_path: str
    absolute_address: int
    display_name: str
    arg_encoding: int
    kind: str


@dataclass(frozen=True)
class ProbePlan:
    raw_syscall_entry: bool = False
    raw_syscall_exit: bool = False
    syscalls: tuple = ()
    kprobes: tuple = ()
    kprobe_ids: tuple = ()
    uprobes: tuple = ()
    filter: FilterSpec = field(default_factory=FilterSpec)

    def to_document(self) -> dict:
        f = self.filter
        return {
            "raw_syscalls": {"entry": self.raw_syscall_entry, "exit": self.raw_syscall_exit},
            "syscalls": [{"name": n, "nr": nr} for n, nr in self.syscalls],
            "kprobes": list(self.kprobes),
            "kprobe_ids": dict(self.kprobe_ids),
            "uprobes": [{"target_path": u.target_path, "address": f"0x{u.absolute_address:x}",
                         "display_name": u.display_name, "arg_encoding": f"0x{u.arg_encoding:016x}",
                         "kind": u.kind} for u in self.uprobes],
            "filter": {"mode": f.mode.value, "uids": sorted(f.uids), "packages": sorted(f.packages),
                       "user_app_uid_threshold": f.user_app_uid_threshold},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2) + "\n"

    @classmethod
    def from_document(cls, doc) -> "ProbePlan":
        try:
            f = doc["filter"]
            return cls(
                raw_syscall_entry=bool(doc["raw_syscalls"]["entry"]),
                raw_syscall_exit=bool(doc["raw_syscalls"]["exit"]),
                syscalls=tuple((s["name"], s["nr"]) for s in doc["syscalls"]),
                kprobes=tuple(doc["kprobes"]),
                kprobe_ids=tuple(doc["kprobe_ids"].items()),
                uprobes=tuple(PlannedUprobe(u["target_path"], int(u["address"], 16), u["display_name"],
                                            int(u["arg_encoding"], 16), u["kind"]) for u in doc["uprobes"]),
                filter=FilterSpec(FilterMode(f["mode"]), frozenset(f["uids"]), frozenset(f["packages"]),
                                  f["user_app_uid_threshold"]),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise InputError(f"malformed probe plan: {exc}") from None


def emit_probe_plan(config: HooksConfig, probes: Sequence[ResolvedProbe]) -> ProbePlan:
    """What a backend must attach: raw_syscalls tracepoints, kprobes and uprobes, plus the filter.

    Syscall hooks without an arm64 number are listed with ``nr`` null; the
    tracepoints fire for every syscall regardless and names are matched in
    userspace.
    """
    syscalls = tuple((h.syscall_name, syscall_number(h.syscall_name)) for h in config.of_kind(HookKind.SYSCALL))
    kprobes = tuple(h.kernel_function_name for h in config.of_kind(HookKind.KPROBE))
    ids = kprobe_id_table(kprobes)
    seen = set()
    uprobes = []
    for p in sorted(probes, key=lambda p: (p.address, p.display_name)):
        if p.address in seen:
            continue  # one breakpoint per address; the AddressMap carries every name
        seen.add(p.address)
        uprobes.append(PlannedUprobe(p.target_path, p.address, p.display_name, p.arg_encoding, p.kind.value))
    return ProbePlan(
        raw_syscall_entry=bool(syscalls),
        raw_syscall_exit=bool(syscalls),
        syscalls=syscalls,
        kprobes=kprobes,
        kprobe_ids=tuple(sorted(((k, ids[k]) for k in kprobes), key=lambda kv: kv[1])),
        uprobes=tuple(uprobes),
        filter=config.filter,
    )


def check_plan(plan: ProbePlan, addrs: AddressMap) -> list[str]:
    """Addresses in the plan that the AddressMap cannot name."""
    return [u.display_name for u in plan.uprobes if u.absolute_address not in addrs]


# ------------------------------------------------------------ load generator


def generate_load(n: int, seed: int = 0, app_uids: Sequence[int] = (10050, 10051, 10052),
                  addrs: Optional[AddressMap] = None) -> Iterator[bytes]:
    """Yield ``n`` encoded messages of mixed kinds for throughput runs.

    A pool of encoded templates is built once and the timestamp is patched
    into each copy, so generation does not dominate the measurement.
    """
    rng = random.Random(seed)
    if addrs is None:
        addrs = shipped_snapshot().resolve(default_multilayer_config()).address_map
    uprobe_addrs = sorted(addrs)
    pids = [(2000 + i * 37, rng.choice(app_uids + (SYSTEM_UID,))) for i in range(24)]
    pool = []
    for _ in range(512):
        pid, uid = rng.choice(pids)
        ctx = EventContext(0, pid, pid + rng.randrange(4), ZYGOTE_PID, uid, f"app{pid}")
        r = rng.random()
        if r < 0.6:
            # Half from the default syscall hooks, half everyday traffic that is not hooked.
            nr = rng.choice([56, 48, 220, 203, 221, 57, 63, 64, 29, 174])
            kind = SyscallEnter(nr) if rng.random() < 0.5 else SyscallExit(nr, rng.randrange(-5, 100))
            rec = EventRecord(ctx, kind, (Arg(ArgType.INT, 3),) if type(kind) is SyscallEnter else ())
        elif r < 0.85:
            data = rng.randbytes(rng.randrange(1, 256))
            offset = rng.choice([0, 0, 4096, rng.randrange(1 << 20)])
            if offset == 0:
                data = b"\x00" + data  # headers never form a magic
            rec = EventRecord(ctx, Kprobe(KPROBE_CATALOG["vfs_write"]),
                              (Arg(ArgType.STR, f"/data/user/0/app{pid}/cache/f"), Arg(ArgType.BYTES, data),
                               Arg(ArgType.ULONG, offset), Arg(ArgType.ULONG, DATA_DEVICE),
                               Arg(ArgType.ULONG, 500_000 + rng.randrange(5000))))
        else:
            rec = EventRecord(ctx, UserProbe(rng.choice(uprobe_addrs)), ())
        pool.append(bytearray(encode_event(rec)))
    ts = 1_000_000_000
    pack_ts = struct.Struct("<Q").pack_into
    for i in range(n):
        msg = pool[rng.randrange(len(pool))] if i % 7 else pool[i % len(pool)]
        ts += 1000
        pack_ts(msg, 4, ts)
        yield bytes(msg)


def write_load_replay(path, n: int, seed: int = 0) -> int:
    try:
        with ReplayWriter(open(path, "wb")) as w:
            for msg in generate_load(n, seed):
                w.write_encoded(msg)
            return w.count
    except OSError as exc:
        raise SourceIoError(f"cannot write replay {path}: {exc.strerror}") from None
