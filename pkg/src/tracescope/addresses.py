"""Attach-point resolution for framework API methods and native library functions.

Inputs are a zygote64 memory map, oatdump output for each executable oat
image, and the ELF shared objects themselves. Every probe address is the
base of the file's lowest executable mapping plus an offset inside it.
"""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence

from . import elf
from .config import HookKind, HooksConfig, HookSpec
from .errors import InputError, TracescopeError
from .events import MAX_ARGS, ArgType

# ---------------------------------------------------------------- proc maps


class MalformedLine(InputError):
    def __init__(self, line_no: int, line: str):
        super().__init__(f"line {line_no}: malformed maps entry {line!r}")
        self.line_no = line_no


@dataclass(frozen=True)
class MemoryRegion:
    start: int
    end: int
    perms: str
    file_offset: int
    device: str
    inode: int
    path: str = ""

    @property
    def executable(self) -> bool:
        return self.perms[2] == "x"


_MAPS_LINE = re.compile(
    r"^(?P<start>[0-9a-fA-F]+)-(?P<end>[0-9a-fA-F]+)\s+"
    r"(?P<perms>[r-][w-][x-][ps])\s+"
    r"(?P<offset>[0-9a-fA-F]+)\s+"
    r"(?P<dev>[0-9a-fA-F]+:[0-9a-fA-F]+)\s+"
    r"(?P<inode>\d+)"
    r"(?:\s+(?P<path>.*?))?\s*$"
)


def parse_proc_maps(text: str) -> list[MemoryRegion]:
    regions = []
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        m = _MAPS_LINE.match(line)
        if m is None:
            raise MalformedLine(line_no, line)
        start, end = int(m["start"], 16), int(m["end"], 16)
        if start >= end:
            raise MalformedLine(line_no, line)
        regions.append(MemoryRegion(start, end, m["perms"], int(m["offset"], 16),
                                    m["dev"], int(m["inode"]), m["path"] or ""))
    return regions


def executable_images(regions: Iterable[MemoryRegion]) -> dict[str, int]:
    """Map each .oat/.so path with an executable mapping to its lowest executable start."""
    bases: dict[str, int] = {}
    for r in regions:
        if r.executable and r.path.endswith((".oat", ".so")):
            if r.path not in bases or r.start < bases[r.path]:
                bases[r.path] = r.start
    return bases


# ------------------------------------------------------------------ oatdump


class MalformedMethodEntry(InputError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class UnsupportedDescriptor(InputError):
    def __init__(self, text: str):
        super().__init__(f"unsupported type descriptor {text!r}")
        self.text = text


@dataclass(frozen=True)
class OatMethodRecord:
    class_name: str
    method_name: str
    signature: str
    code_offset: int
    arg_types: tuple
    line_no: int = field(default=0, compare=False)

    @property
    def compiled(self) -> bool:
        return self.code_offset > 0

    @property
    def display_name(self) -> str:
        return f"{self.class_name}.{self.method_name}"


# Method header: "<idx>: <ret> <pkg.Class.method>(<params>) (dex_method_idx=<n>)"
_METHOD_HEADER = re.compile(
    r"^\s*\d+: (?P<ret>\S+) (?P<qualified>[^\s(]+)\((?P<params>[^()]*)\) \(dex_method_idx=\d+\)\s*$")
_CODE_OFFSET = re.compile(r"^\s*code_offset: 0x(?P<offset>[0-9a-fA-F]+)\s*$")
_JAVA_TYPE = re.compile(r"^[A-Za-z_$][\w$]*(?:\.[A-Za-z_$][\w$]*)*(?:\[\])*$")

_PRIMITIVES = {
    "boolean": ArgType.INT,
    "byte": ArgType.INT,
    "char": ArgType.INT,
    "short": ArgType.INT,
    "int": ArgType.INT,
    "long": ArgType.LONG,
    # Floating point arrives as raw register bits.
    "float": ArgType.UINT,
    "double": ArgType.ULONG,
}


def java_arg_type(token: str) -> ArgType:
    if token in _PRIMITIVES:
        return _PRIMITIVES[token]
    if token != "void" and _JAVA_TYPE.match(token):
        return ArgType.ADDR
    raise UnsupportedDescriptor(token)


def parse_java_params(params: str) -> tuple:
    params = params.strip()
    if not params:
        return ()
    return tuple(java_arg_type(p.strip()) for p in params.split(","))


def parse_oatdump(text: str) -> list[OatMethodRecord]:
    """Parse method entries from oatdump output.

    Recognised per method: the header line and the first ``code_offset:``
    attribute line that follows it. Everything else is skipped.
    """
    records = []
    pending = None

    def close():
        if pending is not None:
            raise MalformedMethodEntry(pending[0], "method entry has no code_offset line")

    for line_no, line in enumerate(text.splitlines(), 1):
        if "(dex_method_idx=" in line:
            close()
            m = _METHOD_HEADER.match(line)
            if m is None:
                raise MalformedMethodEntry(line_no, f"unparseable method header {line.strip()!r}")
            qualified = m["qualified"]
            if "." not in qualified:
                raise MalformedMethodEntry(line_no, f"method name lacks a class: {qualified!r}")
            class_name, method_name = qualified.rsplit(".", 1)
            pending = (line_no, class_name, method_name, line.strip(), parse_java_params(m["params"]))
            continue
        if pending is not None:
            m = _CODE_OFFSET.match(line)
            if m is not None:
                start, class_name, method_name, signature, types = pending
                records.append(OatMethodRecord(class_name, method_name, signature,
                                               int(m["offset"], 16), types, start))
                pending = None
    close()
    return records


# ------------------------------------------------------------------ symbols


@dataclass(frozen=True)
class SymbolRecord:
    symbol_name: str
    offset: int


def read_symbol_offset(library_image: bytes, symbol_name: str) -> SymbolRecord:
    offset = elf.symbol_offset(library_image, symbol_name)
    if offset <= 0:
        raise elf.SymbolNotFound(symbol_name, "resolves to the segment start")
    return SymbolRecord(symbol_name, offset)


# -------------------------------------------------------- arg type encoding


class TooManyArgs(TracescopeError, ValueError):
    pass


def encode_arg_types(types: Sequence[ArgType]) -> int:
    """Pack argument types one byte each, argument 0 in the lowest byte."""
    if len(types) > MAX_ARGS:
        raise TooManyArgs(f"{len(types)} argument types, at most {MAX_ARGS}")
    encoding = 0
    for i, t in enumerate(types):
        code = int(ArgType(t))
        if code == 0:
            raise ValueError(f"argument {i}: 'none' would terminate the encoding early")
        encoding |= code << (8 * i)
    return encoding


# --------------------------------------------------------------- resolution


class ProbeKind(enum.Enum):
    API_CALL = "api"
    NATIVE_FUNCTION = "native"


@dataclass(frozen=True)
class ResolvedProbe:
    kind: ProbeKind
    address: int
    display_name: str
    arg_encoding: int
    target_path: str


class AddressEntry(NamedTuple):
    names: tuple
    kind: ProbeKind
    arg_encoding: int

    @property
    def display_name(self) -> str:
        # Colliding names are all reported; picking one would be a guess.
        return "|".join(self.names)


class AddressMap:
    """Read-only address -> probe metadata table shared with the probe handlers."""

    def __init__(self, entries: Mapping[int, AddressEntry] | None = None):
        self._entries = dict(entries or {})
        self.entries = MappingProxyType(self._entries)

    def get(self, address: int) -> Optional[AddressEntry]:
        return self._entries.get(address)

    def __contains__(self, address) -> bool:
        return address in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(sorted(self._entries))

    def __eq__(self, other) -> bool:
        return isinstance(other, AddressMap) and self._entries == other._entries

    def collisions(self) -> dict[int, tuple]:
        return {a: e.names for a, e in self._entries.items() if len(e.names) > 1}

    def to_document(self) -> dict:
        doc = {}
        for addr in sorted(self._entries):
            e = self._entries[addr]
            item = {"name": e.display_name, "kind": e.kind.value, "arg_encoding": f"0x{e.arg_encoding:016x}"}
            if len(e.names) > 1:
                item["candidates"] = list(e.names)
            doc[f"0x{addr:x}"] = item
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2) + "\n"

    @classmethod
    def from_document(cls, doc: Mapping) -> "AddressMap":
        entries = {}
        try:
            for key, item in doc.items():
                names = tuple(item.get("candidates") or [item["name"]])
                entries[int(key, 16)] = AddressEntry(names, ProbeKind(item["kind"]),
                                                     int(item["arg_encoding"], 16))
        except (KeyError, ValueError, TypeError, AttributeError) as exc:
            raise InputError(f"bad address map document: {exc}") from None
        return cls(entries)


class HookUnresolved(TracescopeError):
    def __init__(self, hook: HookSpec, reason: str):
        super().__init__(f"{hook.name}: {reason}")
        self.hook = hook
        self.reason = reason


class AddressCollision(TracescopeError):
    def __init__(self, address: int, name1: str, name2: str):
        super().__init__(f"0x{address:x} is shared by {name1} and {name2}")
        self.address = address
        self.names = (name1, name2)


@dataclass
class Resolution:
    probes: list
    address_map: AddressMap
    unresolved: list = field(default_factory=list)
    collisions: list = field(default_factory=list)

    def __iter__(self):
        # Allows ``probes, address_map = resolve_probes(...)``.
        return iter((self.probes, self.address_map))


SymbolReader = Callable[[str, str], SymbolRecord]


def _find_library(lib: str, images: Mapping[str, int]) -> Optional[str]:
    if "/" in lib:
        return lib if lib in images else None
    matches = sorted(p for p in images if p.rsplit("/", 1)[-1] == lib)
    return matches[0] if matches else None


def resolve_probes(config: HooksConfig, images: Mapping[str, int],
                   oat_records: Mapping[str, Sequence[OatMethodRecord]],
                   symbol_reader: SymbolReader, strict: bool = False) -> Resolution:
    """Compute uprobe addresses for every API and uprobe hook in ``config``.

    With ``strict`` the first unresolvable hook or address collision raises;
    otherwise both are collected on the returned Resolution.
    """
    probes: list[ResolvedProbe] = []
    unresolved: list[HookUnresolved] = []

    def fail(hook, reason):
        err = HookUnresolved(hook, reason)
        if strict:
            raise err
        unresolved.append(err)

    loaded_oats = [(path, recs) for path, recs in oat_records.items() if path in images]
    for hook in config.hooks:
        if hook.kind is HookKind.API:
            found = [(path, r) for path, recs in loaded_oats for r in recs
                     if r.class_name == hook.class_name and r.method_name == hook.method_name]
            if not found:
                fail(hook, "method not found in any executable oat image")
                continue
            compiled = [(path, r) for path, r in found if r.compiled]
            if not compiled:
                fail(hook, "not compiled")
                continue
            for path, r in compiled:
                probes.append(ResolvedProbe(ProbeKind.API_CALL, images[path] + r.code_offset,
                                            hook.name, encode_arg_types(r.arg_types[:MAX_ARGS]), path))
        elif hook.kind is HookKind.UPROBE:
            path = _find_library(hook.library_path, images)
            if path is None:
                fail(hook, "library not mapped executable in zygote64")
                continue
            try:
                sym = symbol_reader(path, hook.symbol_name)
            except (elf.SymbolNotFound, elf.NotAnElf, OSError) as exc:
                fail(hook, str(exc))
                continue
            probes.append(ResolvedProbe(ProbeKind.NATIVE_FUNCTION, images[path] + sym.offset,
                                        f"{hook.library_path}!{hook.symbol_name}",
                                        encode_arg_types(hook.declared_arg_types), path))

    entries: dict[int, AddressEntry] = {}
    collisions: list[AddressCollision] = []
    for p in probes:
        entry = entries.get(p.address)
        if entry is None:
            entries[p.address] = AddressEntry((p.display_name,), p.kind, p.arg_encoding)
        elif p.display_name not in entry.names:
            err = AddressCollision(p.address, entry.names[0], p.display_name)
            if strict:
                raise err
            collisions.append(err)
            entries[p.address] = entry._replace(names=entry.names + (p.display_name,))
    return Resolution(probes, AddressMap(entries), unresolved, collisions)


# ---------------------------------------------------------- device snapshot


class DeviceSnapshot:
    """Host-side copy of the zygote64 artifacts address resolution needs.

    A snapshot directory holds ``snapshot.json``::

        {"maps": "zygote64_maps.txt",
         "oatdump": {"/system/framework/arm64/boot-framework.oat": "oatdump/boot-framework.txt"},
         "libraries": {"/apex/com.android.runtime/lib64/bionic/libc.so": "lib/libc.so"}}

    File names are relative to the directory.
    """

    def __init__(self, root):
        self.root = Path(root)
        try:
            index = json.loads((self.root / "snapshot.json").read_text("utf-8"))
            self.maps_file = self.root / index["maps"]
            self.oatdump_files = {k: self.root / v for k, v in index.get("oatdump", {}).items()}
            self.library_files = {k: self.root / v for k, v in index.get("libraries", {}).items()}
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise InputError(f"bad device snapshot at {self.root}: {exc}") from None
        self._regions = None
        self._oat = None

    def regions(self) -> list[MemoryRegion]:
        if self._regions is None:
            self._regions = parse_proc_maps(self.maps_file.read_text("utf-8"))
        return self._regions

    def images(self) -> dict[str, int]:
        return executable_images(self.regions())

    def oat_records(self) -> dict[str, list[OatMethodRecord]]:
        if self._oat is None:
            self._oat = {path: parse_oatdump(f.read_text("utf-8"))
                         for path, f in self.oatdump_files.items()}
        return self._oat

    def read_symbol(self, path: str, symbol: str) -> SymbolRecord:
        try:
            f = self.library_files[path]
        except KeyError:
            raise elf.SymbolNotFound(symbol, f"no copy of {path} in the snapshot") from None
        return read_symbol_offset(f.read_bytes(), symbol)

    def resolve(self, config: HooksConfig, strict: bool = False) -> Resolution:
        return resolve_probes(config, self.images(), self.oat_records(), self.read_symbol, strict)


def shipped_snapshot_dir():
    return resources.files("tracescope.data").joinpath("device")


@lru_cache(maxsize=None)
def shipped_snapshot() -> DeviceSnapshot:
    """The bundled zygote64 snapshot used by the simulator and as a test fixture."""
    return DeviceSnapshot(Path(str(shipped_snapshot_dir())))
