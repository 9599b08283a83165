"""Minimal ELF64 little-endian reader: dynamic symbols and loadable segments.

Only what uprobe placement needs. Android arm64 libraries are ELF64 LE, so
other classes and byte orders are rejected rather than half-supported.
"""
from __future__ import annotations

import struct
from typing import NamedTuple

from .errors import InputError, TracescopeError

PAGE_SIZE = 4096

PT_LOAD = 1
PF_X = 1
SHT_DYNSYM = 11
SHN_UNDEF = 0

_EHDR = struct.Struct("<16sHHIQQQIHHHHHH")
_PHDR = struct.Struct("<IIQQQQQQ")
_SHDR = struct.Struct("<IIQQQQIIQQ")
_SYM = struct.Struct("<IBBHQQ")


class NotAnElf(InputError):
    pass


class SymbolNotFound(TracescopeError, LookupError):
    def __init__(self, name: str, reason: str = "not in the dynamic symbol table"):
        super().__init__(f"{name}: {reason}")
        self.name = name


class Segment(NamedTuple):
    type: int
    flags: int
    offset: int
    vaddr: int
    filesz: int
    memsz: int

    @property
    def executable(self) -> bool:
        return bool(self.flags & PF_X)


class Symbol(NamedTuple):
    name: str
    value: int
    size: int
    info: int
    shndx: int


def _cstr(data: bytes, start: int) -> str:
    end = data.find(b"\0", start)
    if end < 0:
        raise NotAnElf(f"unterminated string at {start:#x}")
    return data[start:end].decode("utf-8", "replace")


class ElfImage:
    def __init__(self, data: bytes):
        if len(data) < _EHDR.size or data[:4] != b"\x7fELF":
            raise NotAnElf("missing ELF magic")
        if data[4] != 2 or data[5] != 1:
            raise NotAnElf("only ELF64 little-endian images are supported")
        self.data = data
        (_, self.e_type, self.machine, _, _, phoff, shoff, _, _,
         phentsize, phnum, shentsize, shnum, _) = _EHDR.unpack_from(data)
        try:
            self.segments = [Segment(*_PHDR.unpack_from(data, phoff + i * phentsize)[:6])
                             for i in range(phnum)]
            self.sections = [_SHDR.unpack_from(data, shoff + i * shentsize) for i in range(shnum)]
        except struct.error:
            raise NotAnElf("header table runs past end of file") from None

    def dynamic_symbols(self) -> list[Symbol]:
        symbols = []
        for sh in self.sections:
            if sh[1] != SHT_DYNSYM:
                continue
            _, _, _, _, offset, size, link, _, _, entsize = sh
            if link >= len(self.sections):
                raise NotAnElf("dynsym links to a missing string table")
            str_off, str_size = self.sections[link][4], self.sections[link][5]
            strtab = self.data[str_off:str_off + str_size]
            entsize = entsize or _SYM.size
            for pos in range(offset, offset + size, entsize):
                try:
                    st_name, info, _, shndx, value, sym_size = _SYM.unpack_from(self.data, pos)
                except struct.error:
                    raise NotAnElf("dynsym runs past end of file") from None
                symbols.append(Symbol(_cstr(strtab, st_name), value, sym_size, info, shndx))
        return symbols

    def find_symbol(self, name: str) -> Symbol:
        for sym in self.dynamic_symbols():
            if sym.name == name and sym.shndx != SHN_UNDEF:
                return sym
        raise SymbolNotFound(name)

    def executable_segment_for(self, vaddr: int) -> Segment:
        for seg in self.segments:
            if seg.type == PT_LOAD and seg.executable and seg.vaddr <= vaddr < seg.vaddr + seg.memsz:
                return seg
        raise SymbolNotFound(f"{vaddr:#x}", "not inside an executable PT_LOAD segment")


def symbol_offset(data: bytes, name: str) -> int:
    """Offset of ``name`` from the start of its executable segment's mapping.

    The kernel maps a segment from the page containing p_vaddr, so that page
    boundary is where the r-x region in /proc/PID/maps begins.
    """
    image = ElfImage(data)
    sym = image.find_symbol(name)
    try:
        seg = image.executable_segment_for(sym.value)
    except SymbolNotFound:
        raise SymbolNotFound(name, "not inside an executable segment") from None
    return sym.value - (seg.vaddr & ~(PAGE_SIZE - 1))
