"""Event builders shared by the test modules."""
from __future__ import annotations

from tracescope.dispatch import Layer, ResolvedEvent
from tracescope.events import Arg, ArgType, EventContext, EventRecord, Kprobe, SyscallEnter, SyscallExit
from tracescope.syscalls import KPROBE_CATALOG, SYSCALL_NUMBERS


def ctx(pid=4242, uid=10050, ts=1, tid=None, comm="app") -> EventContext:
    return EventContext(ts, pid, tid or pid, 612, uid, comm)


def write_event(data: bytes, offset: int = 0, inode: int = 1, device: int = 5, path: str = "/data/f",
                c: EventContext | None = None, fn: str = "vfs_write") -> ResolvedEvent:
    args = (Arg(ArgType.STR, path), Arg(ArgType.BYTES, data), Arg(ArgType.ULONG, offset),
            Arg(ArgType.ULONG, device), Arg(ArgType.ULONG, inode))
    rec = EventRecord(c or ctx(), Kprobe(KPROBE_CATALOG[fn]), args)
    return ResolvedEvent(rec, fn, Layer.KERNEL)


def syscall_event(name: str = "openat", c: EventContext | None = None, exit_ret: int | None = None) -> ResolvedEvent:
    nr = SYSCALL_NUMBERS[name]
    kind = SyscallEnter(nr) if exit_ret is None else SyscallExit(nr, exit_ret)
    return ResolvedEvent(EventRecord(c or ctx(), kind, ()), name, Layer.SYSCALL)


def exit_event(c: EventContext) -> ResolvedEvent:
    rec = EventRecord(c, Kprobe(KPROBE_CATALOG["sched_process_exit"]), ())
    return ResolvedEvent(rec, "sched_process_exit", Layer.KERNEL)


def first_four_oracle(writes) -> bytes | None:
    """Rebuild a file's first four bytes from (offset, data) writes; None while any is unwritten."""
    header = [None] * 4
    for offset, data in writes:
        for i, b in enumerate(data):
            if offset + i < 4:
                header[offset + i] = b
    if any(b is None for b in header):
        return None
    return bytes(header)


_NUMERIC_RANGES = {
    ArgType.INT: (-(1 << 31), (1 << 31) - 1),
    ArgType.UINT: (0, (1 << 32) - 1),
    ArgType.LONG: (-(1 << 63), (1 << 63) - 1),
    ArgType.ULONG: (0, (1 << 64) - 1),
    ArgType.ADDR: (0, (1 << 64) - 1),
}
_COMM_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789._-:/é"


def random_record(rng) -> EventRecord:
    """A valid EventRecord drawn from ``rng`` (a random.Random); comm is already normalized."""
    from tracescope.events import UserProbe, normalize_comm

    c = EventContext(rng.getrandbits(64), rng.getrandbits(32), rng.getrandbits(32), rng.getrandbits(32),
                     rng.getrandbits(32), normalize_comm("".join(rng.choices(_COMM_CHARS, k=rng.randrange(17)))))
    tag = rng.randrange(4)
    if tag == 0:
        kind = SyscallEnter(rng.getrandbits(32))
    elif tag == 1:
        kind = SyscallExit(rng.getrandbits(32), rng.randrange(-(1 << 63), 1 << 63))
    elif tag == 2:
        kind = Kprobe(rng.getrandbits(32))
    else:
        kind = UserProbe(rng.getrandbits(64))
    args = []
    for _ in range(rng.randrange(9)):
        t = rng.choice([ArgType.INT, ArgType.UINT, ArgType.LONG, ArgType.ULONG, ArgType.ADDR,
                        ArgType.STR, ArgType.BYTES])
        if t is ArgType.STR:
            args.append(Arg(t, "".join(rng.choices(_COMM_CHARS, k=rng.randrange(0, 300)))))
        elif t is ArgType.BYTES:
            args.append(Arg(t, rng.randbytes(rng.choice([0, 1, rng.randrange(600), 4096]))))
        else:
            lo, hi = _NUMERIC_RANGES[t]
            args.append(Arg(t, rng.randint(lo, hi)))
    return EventRecord(c, kind, tuple(args))


def default_addrs():
    from tracescope.addresses import shipped_snapshot
    from tracescope.config import default_multilayer_config

    return shipped_snapshot().resolve(default_multilayer_config()).address_map


def run_pipeline(records, flt, *, follow=False, capture=None, replay=False, signatures=None):
    """Run records through the default pipeline the way the CLI does; return (summary, sink)."""
    import io

    from tracescope.config import default_multilayer_config
    from tracescope.dispatch import CollectingSink, EventSelection, dispatch_loop
    from tracescope.signatures import default_signatures
    from tracescope.sources import ListSource, ReplaySource, replay_bytes

    src = ReplaySource(io.BytesIO(replay_bytes(records))) if replay else ListSource(records)
    sink = CollectingSink()
    summary = dispatch_loop(src, flt, default_addrs(), default_signatures() if signatures is None else signatures,
                            [sink], capture=capture, selection=EventSelection.from_config(default_multilayer_config()),
                            follow_processes=follow)
    return summary, sink
