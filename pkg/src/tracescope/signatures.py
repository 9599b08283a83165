"""Behavioral signatures over the resolved event stream, plus forensic write capture.

DropperDetector watches vfs_write(v) for a file header that becomes one of
the ELF, DEX or archive magics. PrivescDetector watches for a process whose
uid changes between two syscalls. WriteCapture keeps every traced write so
dropped files can be rebuilt byte for byte.
"""
from __future__ import annotations

import enum
import hashlib
import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

from .dispatch import Layer, ResolvedEvent
from .errors import TracescopeError
from .events import ArgType, EventContext, Kprobe, SyscallExit
from .syscalls import FORK_SYSCALLS

WRITE_FUNCTIONS = frozenset({"vfs_write", "vfs_writev"})
HEADER_LEN = 4


class MagicKind(enum.Enum):
    ELF = b"\x7fELF"
    DEX = b"dex\n"
    ARCHIVE = b"PK\x03\x04"

    @property
    def label(self) -> str:
        return self.name.lower()


MAGIC_BY_BYTES = {m.value: m for m in MagicKind}


class FileIdentity(NamedTuple):
    """(device, inode) is the identity; the path is advisory and ignored by == and hash."""

    device: int
    inode: int
    last_known_path: str = ""

    @property
    def key(self) -> tuple[int, int]:
        return (self[0], self[1])

    def __eq__(self, other):
        if isinstance(other, FileIdentity):
            return self[0] == other[0] and self[1] == other[1]
        return NotImplemented

    def __ne__(self, other):
        eq = self.__eq__(other)
        return eq if eq is NotImplemented else not eq

    def __hash__(self):
        return hash((self[0], self[1]))


@dataclass(frozen=True)
class DroppedFile:
    magic: MagicKind
    file: FileIdentity
    path: str


@dataclass(frozen=True)
class PrivilegeEscalation:
    pid: int
    old_uid: int
    new_uid: int


@dataclass(frozen=True)
class Alert:
    kind: Union[DroppedFile, PrivilegeEscalation]
    context: EventContext
    seq: int = 0

    @property
    def kind_name(self) -> str:
        return "dropped_file" if isinstance(self.kind, DroppedFile) else "privilege_escalation"

    def with_seq(self, seq: int) -> "Alert":
        return replace(self, seq=seq)

    def details(self) -> dict:
        k = self.kind
        if isinstance(k, DroppedFile):
            return {"magic": k.magic.label, "device": k.file.device, "inode": k.file.inode, "path": k.path}
        return {"pid": k.pid, "old_uid": k.old_uid, "new_uid": k.new_uid}

    def to_dict(self) -> dict:
        ctx = self.context
        return {"seq": self.seq, "ts_ns": ctx.timestamp_ns, "kind": self.kind_name, "pid": ctx.pid,
                "tid": ctx.tid, "uid": ctx.uid, "comm": ctx.comm, "details": self.details()}

    def format_text(self) -> str:
        d = " ".join(f"{k}={v}" for k, v in self.details().items())
        return f"ALERT #{self.seq} {self.kind_name} pid={self.context.pid} uid={self.context.uid} {d}"


class MalformedWriteEvent(TracescopeError):
    pass


class WriteRecord(NamedTuple):
    file: FileIdentity
    offset: int
    data: bytes


_STR, _BYTES, _ULONG = ArgType.STR, ArgType.BYTES, ArgType.ULONG
_SYSCALL, _KERNEL = Layer.SYSCALL, Layer.KERNEL


def write_args(ev: ResolvedEvent) -> Optional[tuple]:
    """The validated argument tuple of a vfs_write(v) event; None for any other event.

    Argument convention: [str path, bytes data, ulong offset, ulong device, ulong inode].
    vfs_writev data is the iovecs already flattened in order.
    """
    if ev[2] is not _KERNEL or ev[1] not in WRITE_FUNCTIONS:
        return None
    args = ev[0][2]
    if (len(args) != 5 or args[0][0] != _STR or args[1][0] != _BYTES or args[2][0] != _ULONG
            or args[3][0] != _ULONG or args[4][0] != _ULONG):
        raise MalformedWriteEvent(f"{ev.display_name} arguments do not match the write convention")
    return args


def parse_write(ev: ResolvedEvent) -> Optional[WriteRecord]:
    args = write_args(ev)
    if args is None:
        return None
    return WriteRecord(FileIdentity(args[3][1], args[4][1], args[0][1]), args[2][1], args[1][1])


def wants_writes(name: str, layer: Layer) -> bool:
    return layer is Layer.KERNEL and name in WRITE_FUNCTIONS


# ------------------------------------------------------------------ dropper


class DropperDetector:
    """Alert once per (device, inode) when the file's first four bytes form a watched magic.

    Header bytes may arrive across several writes; each covered byte is
    shadowed and the match is checked whenever all four are known.
    """

    name = "dropper"

    def __init__(self):
        self._headers: dict[tuple, list] = {}
        self._alerted: set = set()

    @staticmethod
    def wants(name: str, layer: Layer) -> bool:
        return wants_writes(name, layer)

    def on_event(self, ev: ResolvedEvent) -> list[Alert]:
        args = write_args(ev)
        if args is None:
            return []
        offset, data = args[2][1], args[1][1]
        if offset >= HEADER_LEN or not data:
            return []
        key = (args[3][1], args[4][1])
        if key in self._alerted:
            return []
        state = self._headers.get(key)
        if state is None:
            state = self._headers[key] = [bytearray(HEADER_LEN), 0]
        header = state[0]
        for i in range(offset, min(HEADER_LEN, offset + len(data))):
            header[i] = data[i - offset]
            state[1] |= 1 << i
        if state[1] != 0b1111:
            return []
        magic = MAGIC_BY_BYTES.get(bytes(header))
        if magic is None:
            return []
        self._alerted.add(key)
        del self._headers[key]
        file = FileIdentity(key[0], key[1], args[0][1])
        return [Alert(DroppedFile(magic, file, file.last_known_path), ev.record.context)]


def dropper_on_event(e: ResolvedEvent, state: DropperDetector) -> list[Alert]:
    return state.on_event(e)


# ------------------------------------------------------------------ privesc


class PrivescDetector:
    """Alert when a process's uid differs from the one recorded at its previous syscall.

    App uids are fixed for the life of the process, so any change, upward or
    downward, is reported. Each (pid, old, new) transition alerts once.
    """

    name = "privesc"

    def __init__(self):
        self.uids: dict[int, int] = {}
        self._reported: set = set()

    @staticmethod
    def wants(name: str, layer: Layer) -> bool:
        return layer is Layer.SYSCALL or (layer is Layer.KERNEL and name == "sched_process_exit")

    def on_event(self, ev: ResolvedEvent) -> list[Alert]:
        rec, name, layer = ev
        ctx = rec[0]
        pid, uid = ctx[1], ctx[4]
        if layer is not _SYSCALL:
            if layer is _KERNEL and name == "sched_process_exit" and ctx[2] == pid:
                self.uids.pop(pid, None)
            return []
        alerts = []
        known = self.uids.get(pid)
        if known != uid:
            self.uids[pid] = uid
            if known is not None:
                transition = (pid, known, uid)
                if transition not in self._reported:
                    self._reported.add(transition)
                    alerts.append(Alert(PrivilegeEscalation(pid, known, uid), ctx))
        kind = rec[1]
        if type(kind) is SyscallExit and kind.ret > 0 and name in FORK_SYSCALLS:
            self.uids.setdefault(kind.ret, uid)
        return alerts


def privesc_on_event(e: ResolvedEvent, state: PrivescDetector) -> list[Alert]:
    return state.on_event(e)


# ------------------------------------------------------------------ capture


class CaptureChunk(NamedTuple):
    file: FileIdentity
    offset: int
    data: bytes


class MixedIdentity(TracescopeError, ValueError):
    pass


class CaptureIoError(TracescopeError):
    pass


_CHUNK_HEAD = struct.Struct("<QI")
CHUNKS_LOG = "chunks.log"
RECONSTRUCTED = "reconstructed.bin"
MANIFEST = "manifest.json"


def capture_dirname(file: FileIdentity) -> str:
    return f"{file.device}_{file.inode}"


def reconstruct_file(chunks: Sequence[CaptureChunk]) -> bytes:
    """Rebuild file contents: gaps read as zero, later chunks overwrite earlier ones."""
    if not chunks:
        return b""
    key = chunks[0].file.key
    size = 0
    for c in chunks:
        if c.file.key != key:
            raise MixedIdentity(f"chunks for {key} and {c.file.key} mixed")
        size = max(size, c.offset + len(c.data))
    out = bytearray(size)
    for c in chunks:
        out[c.offset:c.offset + len(c.data)] = c.data
    return bytes(out)


def read_chunks_log(path, file: FileIdentity) -> list[CaptureChunk]:
    data = Path(path).read_bytes()
    chunks = []
    pos = 0
    while pos < len(data):
        if pos + _CHUNK_HEAD.size > len(data):
            raise CaptureIoError(f"{path}: truncated chunk header at {pos}")
        offset, n = _CHUNK_HEAD.unpack_from(data, pos)
        pos += _CHUNK_HEAD.size
        if pos + n > len(data):
            raise CaptureIoError(f"{path}: truncated chunk at {pos}")
        chunks.append(CaptureChunk(file, offset, data[pos:pos + n]))
        pos += n
    return chunks


def capture_write(e: ResolvedEvent, capture_dir) -> Optional[CaptureChunk]:
    """Append one write to ``capture_dir/<device>_<inode>/chunks.log`` and return it."""
    w = parse_write(e)
    if w is None or not w.data:
        return None
    chunk = CaptureChunk(w.file, w.offset, w.data)
    target = Path(capture_dir) / capture_dirname(w.file)
    try:
        target.mkdir(parents=True, exist_ok=True)
        with open(target / CHUNKS_LOG, "ab") as f:
            f.write(_CHUNK_HEAD.pack(chunk.offset, len(chunk.data)) + chunk.data)
    except OSError as exc:
        raise CaptureIoError(f"cannot write capture under {capture_dir}: {exc.strerror}") from None
    return chunk


class WriteCapture:
    """Keeps every traced write, in memory or, given ``capture_dir``, on disk.

    Capture is unconditional for traced processes: the magic may be the
    last thing written, and the whole file should be recoverable either way.
    On disk, chunks go straight to each file's chunks.log and are read back
    at finalize, so memory stays flat on long runs.
    """

    max_open_files = 64

    def __init__(self, capture_dir=None):
        self.capture_dir = Path(capture_dir) if capture_dir is not None else None
        # (device, inode) -> [last path, chunk count, [(offset, data)] when kept in memory]
        self._files: dict[tuple, list] = {}
        self.alerts: dict[tuple, list[int]] = {}
        self._open: OrderedDict = OrderedDict()
        self.finalized = False

    @staticmethod
    def wants(name: str, layer: Layer) -> bool:
        return wants_writes(name, layer)

    def _dir_for(self, key: tuple) -> Path:
        return self.capture_dir / f"{key[0]}_{key[1]}"

    def _log_file(self, key: tuple):
        f = self._open.get(key)
        if f is not None:
            self._open.move_to_end(key)
            return f
        target = self._dir_for(key)
        try:
            target.mkdir(parents=True, exist_ok=True)
            f = open(target / CHUNKS_LOG, "ab")
        except OSError as exc:
            raise CaptureIoError(f"cannot write capture under {self.capture_dir}: {exc.strerror}") from None
        self._open[key] = f
        if len(self._open) > self.max_open_files:
            self._open.popitem(last=False)[1].close()
        return f

    def on_event(self, ev: ResolvedEvent) -> None:
        try:
            args = write_args(ev)
        except MalformedWriteEvent:
            return
        if args is None or not args[1][1]:
            return
        key = (args[3][1], args[4][1])
        entry = self._files.get(key)
        if entry is None:
            entry = self._files[key] = [args[0][1], 0, []]
        else:
            entry[0] = args[0][1]
        entry[1] += 1
        if self.capture_dir is None:
            entry[2].append((args[2][1], args[1][1]))
        else:
            data = args[1][1]
            try:
                self._log_file(key).write(_CHUNK_HEAD.pack(args[2][1], len(data)) + data)
            except OSError as exc:
                raise CaptureIoError(f"cannot write capture under {self.capture_dir}: {exc.strerror}") from None

    def link_alert(self, alert: Alert) -> None:
        if isinstance(alert.kind, DroppedFile):
            self.alerts.setdefault(alert.kind.file.key, []).append(alert.seq)

    def files(self) -> list[FileIdentity]:
        return [FileIdentity(k[0], k[1], e[0]) for k, e in sorted(self._files.items())]

    def chunks_for(self, device: int, inode: int) -> list[CaptureChunk]:
        key = (device, inode)
        entry = self._files.get(key)
        if entry is None:
            return []
        file = FileIdentity(device, inode, entry[0])
        if self.capture_dir is None:
            return [CaptureChunk(file, off, data) for off, data in entry[2]]
        f = self._open.get(key)
        if f is not None:
            f.flush()
        return read_chunks_log(self._dir_for(key) / CHUNKS_LOG, file)

    def reconstruct(self, device: int, inode: int) -> bytes:
        return reconstruct_file(self.chunks_for(device, inode))

    def finalize(self) -> None:
        """Close chunk logs and write reconstructed.bin plus manifest.json per file."""
        for f in self._open.values():
            f.close()
        self._open.clear()
        if self.capture_dir is None or self.finalized:
            self.finalized = True
            return
        self.finalized = True
        try:
            for key, entry in sorted(self._files.items()):
                target = self._dir_for(key)
                content = self.reconstruct(*key)
                (target / RECONSTRUCTED).write_bytes(content)
                manifest = {
                    "device": key[0],
                    "inode": key[1],
                    "last_known_path": entry[0],
                    "chunks": entry[1],
                    "size": len(content),
                    "sha256": hashlib.sha256(content).hexdigest(),
                    "alerts": self.alerts.get(key, []),
                }
                (target / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
        except OSError as exc:
            raise CaptureIoError(f"cannot finalize capture under {self.capture_dir}: {exc.strerror}") from None


def default_signatures() -> list:
    return [DropperDetector(), PrivescDetector()]
