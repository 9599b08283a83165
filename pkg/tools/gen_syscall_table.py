"""Regenerate src/tracescope/_arm64_syscalls.py from the asm-generic kernel header.

arm64 uses the generic syscall table; the feature macros below are the ones
arch/arm64/include/uapi/asm/unistd.h defines.
"""
import re
import subprocess
import sys
from pathlib import Path

ARM64_DEFINES = [
    "__ARCH_WANT_RENAMEAT",
    "__ARCH_WANT_NEW_STAT",
    "__ARCH_WANT_SET_GET_RLIMIT",
    "__ARCH_WANT_TIME32_SYSCALLS",
    "__ARCH_WANT_SYS_CLONE3",
    "__ARCH_WANT_MEMFD_SECRET",
]


def macros(header="asm-generic/unistd.h"):
    cmd = ["gcc", "-E", "-dM", "-x", "c", "-"] + ["-D" + d for d in ARM64_DEFINES]
    out = subprocess.run(cmd, input=f"#include <{header}>\n", capture_output=True,
                         text=True, check=True).stdout
    defs = {}
    for line in out.splitlines():
        m = re.match(r"#define (__NR\w*) (.+)$", line)
        if m:
            defs[m.group(1)] = m.group(2).strip()
    return defs


def evaluate(defs, name, depth=0):
    value = defs[name]
    if depth > 8:
        raise ValueError(name)
    if re.fullmatch(r"\d+", value):
        return int(value)
    if value in defs:
        return evaluate(defs, value, depth + 1)
    raise ValueError(f"{name} = {value}")


def main(out_path):
    defs = macros()
    table = {}
    for name in defs:
        if not name.startswith("__NR_") or name in ("__NR_syscalls",):
            continue
        try:
            nr = evaluate(defs, name)
        except ValueError:
            continue
        sys_name = name[len("__NR_"):]
        if nr in table and table[nr] != sys_name:
            raise SystemExit(f"duplicate nr {nr}: {table[nr]} / {sys_name}")
        table[nr] = sys_name
    lines = [
        "# Generated by tools/gen_syscall_table.py from asm-generic/unistd.h. Do not edit.",
        "",
        "ARM64_SYSCALLS = {",
    ]
    lines += [f"    {nr}: {name!r}," for nr, name in sorted(table.items())]
    lines += ["}", ""]
    Path(out_path).write_text("\n".join(lines))
    print(f"{len(table)} syscalls -> {out_path}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/tracescope/_arm64_syscalls.py")
