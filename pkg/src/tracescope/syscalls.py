"""Kernel-side name tables: arm64 syscall numbers, argument layouts, kprobe ids."""
from __future__ import annotations

from typing import Iterable

from ._arm64_syscalls import ARM64_SYSCALLS
from .events import ArgType

I, U, L, UL, A, S, B = (ArgType.INT, ArgType.UINT, ArgType.LONG, ArgType.ULONG,
                        ArgType.ADDR, ArgType.STR, ArgType.BYTES)

SYSCALL_NUMBERS = {name: nr for nr, name in ARM64_SYSCALLS.items()}

# Argument layouts captured at raw_syscalls entry. Syscalls missing here are
# still traced by name; they just carry no decoded arguments.
SYSCALL_ARGS = {
    "execve": (S, A, A),
    "execveat": (I, S, A, A, I),
    "clone": (UL, A, A, UL, A),
    "clone3": (A, UL),
    "openat": (I, S, I, U),
    "close": (I,),
    "bpf": (I, A, U),
    "perf_event_open": (A, I, I, I, UL),
    "faccessat": (I, S, I),
    "unlinkat": (I, S, I),
    "symlinkat": (S, I, S),
    "renameat": (I, S, I, S),
    "fchmod": (I, U),
    "fchmodat": (I, S, U),
    "fchown": (I, U, U),
    "fchownat": (I, S, U, U, I),
    "ptrace": (L, I, A, A),
    "setuid": (U,),
    "setgid": (U,),
    "setreuid": (U, U),
    "setregid": (U, U),
    "setresuid": (U, U, U),
    "setfsuid": (U,),
    "setfsgid": (U,),
    "kill": (I, I),
    "tkill": (I, I),
    "tgkill": (I, I, I),
    "mknodat": (I, S, U, U),
    "mount": (S, S, S, UL, A),
    "umount2": (S, I),
    "init_module": (A, UL, S),
    "finit_module": (I, S, I),
    "delete_module": (S, U),
    "connect": (I, A, I),
    "accept": (I, A, A),
    "accept4": (I, A, A, I),
    "listen": (I, I),
    "process_vm_readv": (I, A, UL, A, UL, UL),
    "process_vm_writev": (I, A, UL, A, UL, UL),
    "inotify_add_watch": (I, S, U),
    "memfd_create": (S, U),
    "getuid": (),
}

FORK_SYSCALLS = frozenset({"clone", "clone3", "fork", "vfork"})

# Stable kprobe ids. Functions outside the catalog get ids from
# FIRST_EXTRA_KPROBE_ID upward in name order (see kprobe_id_table).
KPROBE_CATALOG = {
    "sched_process_exit": 1,
    "vfs_write": 2,
    "vfs_writev": 3,
    "security_bprm_check": 4,
}
FIRST_EXTRA_KPROBE_ID = 1000

# vfs_write(v) events carry fields read from the kernel file structure.
WRITE_ARGS = (S, B, UL, UL, UL)  # path, data, offset, device, inode
KPROBE_ARGS = {
    "sched_process_exit": (),
    "vfs_write": WRITE_ARGS,
    "vfs_writev": WRITE_ARGS,
    "security_bprm_check": (S,),
}


def syscall_name(nr: int) -> str:
    return ARM64_SYSCALLS.get(nr) or f"syscall_{nr}"


def syscall_number(name: str) -> int | None:
    return SYSCALL_NUMBERS.get(name)


def kprobe_id_table(names: Iterable[str] = ()) -> dict[str, int]:
    table = dict(KPROBE_CATALOG)
    next_id = FIRST_EXTRA_KPROBE_ID
    for name in sorted(set(names) - set(KPROBE_CATALOG)):
        table[name] = next_id
        next_id += 1
    return table
