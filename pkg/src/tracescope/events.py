"""Event domain types and the probe-handler wire codec.

Message layout (all integers little-endian)::

    u32  magic            0x42504644 ("DFPB" on the wire)
    u64  timestamp_ns
    u32  pid, tid, ppid, uid
    16B  comm             NUL padded, at most 15 significant bytes
    u8   kind_tag         1 SyscallEnter, 2 SyscallExit, 3 Kprobe, 4 UserProbe
    ...  kind payload     u32 nr | u32 nr + i64 ret | u32 kprobe_id | u64 address
    u8   argnum
    per argument:
    u8   type_code        see ArgType
    ...  value            i32 | u32 | i64 | u64 | u64 | u32 len + utf-8 | u32 len + octets

str and bytes payloads are capped at MAX_ARG_BYTES; longer values are
truncated by the encoder, the same way a probe handler bounds its reads.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

from .errors import InputError, TracescopeError

MAGIC = 0x42504644
COMM_LEN = 16
MAX_ARGS = 8
MAX_ARG_BYTES = 4096

TAG_SYSCALL_ENTER = 1
TAG_SYSCALL_EXIT = 2
TAG_KPROBE = 3
TAG_USER_PROBE = 4


class ArgType(enum.IntEnum):
    NONE = 0
    INT = 1
    UINT = 2
    LONG = 3
    ULONG = 4
    ADDR = 5
    STR = 6
    BYTES = 7

    @classmethod
    def from_name(cls, name: str) -> "ArgType":
        try:
            member = cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown argument type {name!r}") from None
        if member is cls.NONE:
            raise ValueError("'none' is not a declarable argument type")
        return member

    @property
    def label(self) -> str:
        return self.name.lower()


class Arg(NamedTuple):
    type: ArgType
    value: Union[int, str, bytes]


class EventContext(NamedTuple):
    timestamp_ns: int
    pid: int
    tid: int
    ppid: int
    uid: int
    comm: str


@dataclass(frozen=True, slots=True)
class SyscallEnter:
    nr: int


@dataclass(frozen=True, slots=True)
class SyscallExit:
    nr: int
    ret: int


@dataclass(frozen=True, slots=True)
class Kprobe:
    kprobe_id: int


@dataclass(frozen=True, slots=True)
class UserProbe:
    """A uprobe hit; covers both native functions and framework API methods."""

    address: int


EventKind = Union[SyscallEnter, SyscallExit, Kprobe, UserProbe]


class EventRecord(NamedTuple):
    context: EventContext
    kind: EventKind
    args: tuple = ()


class DecodeError(InputError):
    pass


class BadMagic(DecodeError):
    def __init__(self, found: int):
        super().__init__(f"bad magic 0x{found:08x}")
        self.found = found


class Truncated(DecodeError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"truncated message: need {expected} bytes, have {got}")
        self.expected = expected
        self.got = got


class UnknownKindTag(DecodeError):
    def __init__(self, tag: int):
        super().__init__(f"unknown kind tag {tag}")
        self.tag = tag


class UnknownArgType(DecodeError):
    def __init__(self, code: int):
        super().__init__(f"unknown argument type code {code}")
        self.code = code


class EncodeError(TracescopeError, ValueError):
    pass


_HEAD = struct.Struct("<IQIIII16sB")
_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_NR_RET = struct.Struct("<Iq")
_U64 = struct.Struct("<Q")
_ARG_NUMERIC = {
    ArgType.INT: struct.Struct("<i"),
    ArgType.UINT: struct.Struct("<I"),
    ArgType.LONG: struct.Struct("<q"),
    ArgType.ULONG: struct.Struct("<Q"),
    ArgType.ADDR: struct.Struct("<Q"),
}
# Decoder lookup by raw code; avoids constructing ArgType on the hot path.
_NUMERIC_BY_CODE = {int(t): (t, s) for t, s in _ARG_NUMERIC.items()}
_ARG_TYPES = tuple(ArgType)
_STR, _BYTES = ArgType.STR, ArgType.BYTES


def comm_bytes(comm: str) -> bytes:
    raw = comm.encode("utf-8", "replace").split(b"\0", 1)[0][: COMM_LEN - 1]
    return raw.ljust(COMM_LEN, b"\0")


def normalize_comm(comm: str) -> str:
    """Return the name exactly as it survives a trip through the 16-byte field."""
    return comm_bytes(comm).split(b"\0", 1)[0].decode("utf-8", "replace")


def encode_event(e: EventRecord) -> bytes:
    ctx = e.context
    kind = e.kind
    try:
        if type(kind) is SyscallEnter:
            tag, payload = TAG_SYSCALL_ENTER, _U32.pack(kind.nr)
        elif type(kind) is SyscallExit:
            tag, payload = TAG_SYSCALL_EXIT, _NR_RET.pack(kind.nr, kind.ret)
        elif type(kind) is Kprobe:
            tag, payload = TAG_KPROBE, _U32.pack(kind.kprobe_id)
        elif type(kind) is UserProbe:
            tag, payload = TAG_USER_PROBE, _U64.pack(kind.address)
        else:
            raise EncodeError(f"unsupported event kind {kind!r}")
        if len(e.args) > MAX_ARGS:
            raise EncodeError(f"{len(e.args)} arguments exceeds the maximum of {MAX_ARGS}")
        out = [
            _HEAD.pack(MAGIC, ctx.timestamp_ns, ctx.pid, ctx.tid, ctx.ppid, ctx.uid,
                       comm_bytes(ctx.comm), tag),
            payload,
            _U8.pack(len(e.args)),
        ]
        for arg_type, value in e.args:
            out.append(_U8.pack(arg_type))
            numeric = _ARG_NUMERIC.get(arg_type)
            if numeric is not None:
                out.append(numeric.pack(value))
            elif arg_type == ArgType.STR:
                data = value.encode("utf-8", "replace")[:MAX_ARG_BYTES]
                out.append(_U32.pack(len(data)))
                out.append(data)
            elif arg_type == ArgType.BYTES:
                data = bytes(value[:MAX_ARG_BYTES])
                out.append(_U32.pack(len(data)))
                out.append(data)
            else:
                raise EncodeError(f"argument type {arg_type!r} cannot carry a value")
    except struct.error as exc:
        raise EncodeError(str(exc)) from None
    return b"".join(out)


_new_tuple = tuple.__new__
_KIND_CACHE_LIMIT = 1 << 16
_enter_cache: dict = {}
_exit_cache: dict = {}
_kprobe_cache: dict = {}
_uprobe_cache: dict = {}


def _interned(cache: dict, key, factory):
    kind = cache.get(key)
    if kind is None:
        kind = factory()
        if len(cache) < _KIND_CACHE_LIMIT:
            cache[key] = kind
    return kind


# Header, kind payload and argument count in one unpack, selected by the kind tag.
_FIXED_BY_TAG = {
    TAG_SYSCALL_ENTER: struct.Struct("<IQIIII16sBIB"),
    TAG_SYSCALL_EXIT: struct.Struct("<IQIIII16sBIqB"),
    TAG_KPROBE: struct.Struct("<IQIIII16sBIB"),
    TAG_USER_PROBE: struct.Struct("<IQIIII16sBQB"),
}
_comm_cache: dict = {}
# Interned kinds by tag; syscall exits are keyed by (nr, ret), the rest by their one field.
_KIND_CACHES = {TAG_SYSCALL_ENTER: _enter_cache, TAG_SYSCALL_EXIT: _exit_cache,
                TAG_KPROBE: _kprobe_cache, TAG_USER_PROBE: _uprobe_cache}


def kind_from_fields(fields: tuple):
    """The interned kind object for a tuple unpacked with one of the _FIXED_BY_TAG layouts."""
    tag = fields[7]
    if tag == TAG_SYSCALL_ENTER:
        nr = fields[8]
        return _enter_cache.get(nr) or _interned(_enter_cache, nr, lambda: SyscallEnter(nr))
    if tag == TAG_SYSCALL_EXIT:
        key = (fields[8], fields[9])
        return _exit_cache.get(key) or _interned(_exit_cache, key, lambda: SyscallExit(*key))
    if tag == TAG_KPROBE:
        kid = fields[8]
        return _kprobe_cache.get(kid) or _interned(_kprobe_cache, kid, lambda: Kprobe(kid))
    addr = fields[8]
    return _uprobe_cache.get(addr) or _interned(_uprobe_cache, addr, lambda: UserProbe(addr))


def context_from_fields(fields: tuple) -> EventContext:
    raw_comm = fields[6]
    comm = _comm_cache.get(raw_comm)
    if comm is None:
        comm = raw_comm.split(b"\0", 1)[0].decode("utf-8", "replace")
        if len(_comm_cache) < _KIND_CACHE_LIMIT:
            _comm_cache[raw_comm] = comm
    return _new_tuple(EventContext, (fields[1], fields[2], fields[3], fields[4], fields[5], comm))


def unpack_fixed(buf, offset: int = 0, end: int | None = None) -> tuple:
    """Unpack header, kind payload and argument count, validating magic, tag and length."""
    if end is None:
        end = len(buf)
    have = end - offset
    if have < 45:
        if have < 4:
            raise Truncated(4, have)
        magic = _U32.unpack_from(buf, offset)[0]
        if magic != MAGIC:
            raise BadMagic(magic)
        raise Truncated(45, have)
    fixed = _FIXED_BY_TAG.get(buf[offset + 44])
    if fixed is None or fixed.size > have:
        magic = _U32.unpack_from(buf, offset)[0]
        if magic != MAGIC:
            raise BadMagic(magic)
        if fixed is None:
            raise UnknownKindTag(buf[offset + 44])
        raise Truncated(fixed.size, have)
    fields = fixed.unpack_from(buf, offset)
    if fields[0] != MAGIC:
        raise BadMagic(fields[0])
    if fields[-1] > MAX_ARGS:
        raise DecodeError(f"argument count {fields[-1]} exceeds the maximum of {MAX_ARGS}")
    return fields


def decode_header(buf, offset: int = 0, end: int | None = None) -> tuple[EventContext, object, int, int]:
    """Decode context and kind only; return ``(context, kind, argnum, args_offset)``.

    Lets a reader drop an event before paying for its arguments.
    """
    fields = unpack_fixed(buf, offset, end)
    return (context_from_fields(fields), kind_from_fields(fields), fields[-1],
            offset + _FIXED_BY_TAG[fields[7]].size)


# Indexed by raw type code: (ArgType, unpack_from, size) for fixed-width codes, else None.
_NUMERIC_TABLE = [None] * 256
for _t, _s in _ARG_NUMERIC.items():
    _NUMERIC_TABLE[_t] = (_t, _s.unpack_from, _s.size)


def decode_args(buf, pos: int, end: int, argnum: int, msg_start: int = 0,
                _numeric=_NUMERIC_TABLE, _new=_new_tuple, _arg=Arg,
                _len=_U32.unpack_from) -> tuple[tuple, int]:
    """Decode ``argnum`` typed arguments at ``pos``; ``msg_start`` only sizes Truncated errors."""
    args = []
    append = args.append
    for _ in range(argnum):
        if pos >= end:
            raise Truncated(pos + 1 - msg_start, end - msg_start)
        code = buf[pos]
        pos += 1
        numeric = _numeric[code]
        if numeric is not None:
            nxt = pos + numeric[2]
            if nxt > end:
                raise Truncated(nxt - msg_start, end - msg_start)
            append(_new(_arg, (numeric[0], numeric[1](buf, pos)[0])))
            pos = nxt
        elif code == 6 or code == 7:
            if pos + 4 > end:
                raise Truncated(pos + 4 - msg_start, end - msg_start)
            n = _len(buf, pos)[0]
            pos += 4
            if n > MAX_ARG_BYTES:
                raise DecodeError(f"argument length {n} exceeds the cap of {MAX_ARG_BYTES}")
            nxt = pos + n
            if nxt > end:
                raise Truncated(nxt - msg_start, end - msg_start)
            if code == 6:
                append(_new(_arg, (_STR, bytes(buf[pos:nxt]).decode("utf-8", "replace"))))
            else:
                append(_new(_arg, (_BYTES, bytes(buf[pos:nxt]))))
            pos = nxt
        else:
            raise UnknownArgType(code)
    return tuple(args), pos


_FORMAT_BY_CODE = {int(t): s.format[1:] for t, s in _ARG_NUMERIC.items()}


class ArgLayout:
    """Decoder specialized for one sequence of argument type codes.

    Each run of fixed-width arguments, code bytes included, is read with a
    single struct call and the code bytes are compared on the way. Returns
    None when the message does not follow the layout, so the caller can use
    the generic path and get its precise error.
    """

    __slots__ = ("codes", "steps")

    def __init__(self, codes: Sequence[int]):
        self.codes = tuple(codes)
        steps = []
        run: list[int] = []
        for code in self.codes + (None,):
            if code in _FORMAT_BY_CODE:
                run.append(code)
                continue
            if run:
                fmt = struct.Struct("<" + "".join("B" + _FORMAT_BY_CODE[c] for c in run))
                steps.append((0, fmt, tuple(run), tuple(_ARG_TYPES[c] for c in run)))
                run = []
            if code is not None:
                steps.append((code, None, None, None))
        self.steps = tuple(steps)

    def decode(self, buf, pos: int, end: int, _new=_new_tuple, _arg=Arg, _len=_U32.unpack_from):
        args = []
        append = args.append
        for code, fmt, run_codes, run_types in self.steps:
            if fmt is not None:
                nxt = pos + fmt.size
                if nxt > end:
                    return None
                vals = fmt.unpack_from(buf, pos)
                if vals[0::2] != run_codes:
                    return None
                for t, v in zip(run_types, vals[1::2]):
                    append(_new(_arg, (t, v)))
                pos = nxt
            else:
                if pos + 5 > end or buf[pos] != code:
                    return None
                n = _len(buf, pos + 1)[0]
                pos += 5
                nxt = pos + n
                if n > MAX_ARG_BYTES or nxt > end:
                    return None
                if code == 6:
                    append(_new(_arg, (_STR, bytes(buf[pos:nxt]).decode("utf-8", "replace"))))
                else:
                    append(_new(_arg, (_BYTES, bytes(buf[pos:nxt]))))
                pos = nxt
        return tuple(args), pos


def decode_from(buf, offset: int = 0, end: int | None = None) -> tuple[EventRecord, int]:
    """Decode one message starting at ``offset``; return it with the offset just past it.

    Kind objects are immutable, so equal kinds are shared between records.
    """
    if end is None:
        end = len(buf)
    ctx, kind, argnum, pos = decode_header(buf, offset, end)
    if argnum:
        args, pos = decode_args(buf, pos, end, argnum, offset)
    else:
        args = ()
    return _new_tuple(EventRecord, (ctx, kind, args)), pos


def decode_event(b: bytes) -> EventRecord:
    record, pos = decode_from(b)
    if pos != len(b):
        raise DecodeError(f"{len(b) - pos} trailing bytes after message")
    return record


def decode_arg_types(encoding: int) -> list[ArgType]:
    """Unpack a per-byte argument type encoding, stopping at the first zero byte."""
    if not 0 <= encoding < 1 << 64:
        raise ValueError(f"encoding {encoding:#x} does not fit in 64 bits")
    types = []
    for i in range(MAX_ARGS):
        code = (encoding >> (8 * i)) & 0xFF
        if code == 0:
            break
        if code >= len(_ARG_TYPES):
            raise UnknownArgType(code)
        types.append(_ARG_TYPES[code])
    # Bytes after the terminator must still be valid codes.
    for j in range(i + 1, MAX_ARGS):
        code = (encoding >> (8 * j)) & 0xFF
        if code >= len(_ARG_TYPES):
            raise UnknownArgType(code)
    return types


def check_arity(record: EventRecord, declared: Sequence[ArgType]) -> bool:
    """True when the record's argument tags match ``declared`` position by position."""
    if type(record.kind) is SyscallExit:
        return not record.args
    return len(record.args) == len(declared) and all(
        a.type == t for a, t in zip(record.args, declared))
