"""Hooks configuration: which events to trace and which processes to watch.

The on-disk document is JSON::

    {
      "api":      [{"class": "android.util.Base64", "method": "decode"}],
      "syscalls": ["openat"],
      "kprobes":  ["vfs_write"],
      "uprobes":  [{"lib": "libc.so", "symbol": "open", "args": ["str", "int"]}],
      "filter":   {"mode": "uids", "uids": [10050]}
    }

Every key is optional. Hooks keep document order.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, NamedTuple, Optional

from .errors import InputError
from .events import MAX_ARGS, ArgType

DEFAULT_USER_APP_UID_THRESHOLD = 10000


class HookKind(enum.Enum):
    API = "api"
    SYSCALL = "syscall"
    KPROBE = "kprobe"
    UPROBE = "uprobe"


# Document key for each kind, in canonical order.
SECTION_KEYS = {
    HookKind.API: "api",
    HookKind.SYSCALL: "syscalls",
    HookKind.KPROBE: "kprobes",
    HookKind.UPROBE: "uprobes",
}
_KIND_BY_SECTION = {v: k for k, v in SECTION_KEYS.items()}

_KIND_FIELDS = {
    HookKind.API: ("class_name", "method_name"),
    HookKind.SYSCALL: ("syscall_name",),
    HookKind.KPROBE: ("kernel_function_name",),
    HookKind.UPROBE: ("library_path", "symbol_name"),
}
_NAME_FIELDS = ("class_name", "method_name", "syscall_name", "kernel_function_name",
                "library_path", "symbol_name")


class ConfigError(InputError):
    pass


class ConfigSyntaxError(ConfigError):
    pass


class UnknownKind(ConfigError):
    pass


class DuplicateHook(ConfigError):
    pass


class InvalidArgTypes(ConfigError):
    pass


class InvalidHook(ConfigError):
    pass


@dataclass(frozen=True)
class HookSpec:
    kind: HookKind
    class_name: Optional[str] = None
    method_name: Optional[str] = None
    syscall_name: Optional[str] = None
    kernel_function_name: Optional[str] = None
    library_path: Optional[str] = None
    symbol_name: Optional[str] = None
    declared_arg_types: tuple = ()

    @classmethod
    def api(cls, class_name: str, method_name: str) -> "HookSpec":
        return cls(HookKind.API, class_name=class_name, method_name=method_name)

    @classmethod
    def syscall(cls, name: str) -> "HookSpec":
        return cls(HookKind.SYSCALL, syscall_name=name)

    @classmethod
    def kprobe(cls, name: str) -> "HookSpec":
        return cls(HookKind.KPROBE, kernel_function_name=name)

    @classmethod
    def uprobe(cls, library_path: str, symbol_name: str, arg_types: Iterable = ()) -> "HookSpec":
        return cls(HookKind.UPROBE, library_path=library_path, symbol_name=symbol_name,
                   declared_arg_types=tuple(arg_types))

    @property
    def name(self) -> str:
        if self.kind is HookKind.API:
            return f"{self.class_name}.{self.method_name}"
        if self.kind is HookKind.SYSCALL:
            return self.syscall_name
        if self.kind is HookKind.KPROBE:
            return self.kernel_function_name
        return f"{self.library_path}!{self.symbol_name}"

    @property
    def key(self) -> tuple:
        """Identity used for duplicate detection. Declared argument types do not count."""
        return (self.kind,) + tuple(getattr(self, f) for f in _KIND_FIELDS[self.kind])


class FilterMode(enum.Enum):
    NONE = "none"
    ALL_USER_APPS = "all_user_apps"
    UID_LIST = "uids"
    PACKAGE_LIST = "packages"


@dataclass(frozen=True)
class FilterSpec:
    mode: FilterMode = FilterMode.NONE
    uids: frozenset = frozenset()
    packages: frozenset = frozenset()
    user_app_uid_threshold: int = DEFAULT_USER_APP_UID_THRESHOLD

    @classmethod
    def all_user_apps(cls) -> "FilterSpec":
        return cls(FilterMode.ALL_USER_APPS)

    @classmethod
    def uid_list(cls, uids: Iterable[int]) -> "FilterSpec":
        return cls(FilterMode.UID_LIST, uids=frozenset(uids))

    @classmethod
    def package_list(cls, packages: Iterable[str]) -> "FilterSpec":
        return cls(FilterMode.PACKAGE_LIST, packages=frozenset(packages))


@dataclass(frozen=True)
class HooksConfig:
    hooks: tuple = ()
    filter: FilterSpec = field(default_factory=FilterSpec)

    def of_kind(self, kind: HookKind) -> list[HookSpec]:
        return [h for h in self.hooks if h.kind is kind]

    def counts(self) -> dict[HookKind, int]:
        return {kind: len(self.of_kind(kind)) for kind in HookKind}


class Diagnostic(NamedTuple):
    index: Optional[int]
    rule: str
    message: str

    def __str__(self) -> str:
        where = "filter" if self.index is None else self.index
        return f"{self.rule}@{where}"


_ERRORS_BY_RULE = {
    "DuplicateHook": DuplicateHook,
    "InvalidArgTypes": InvalidArgTypes,
}


def validate(config: HooksConfig) -> list[Diagnostic]:
    diags = []
    seen = set()
    for i, hook in enumerate(config.hooks):
        wanted = _KIND_FIELDS[hook.kind]
        for name in _NAME_FIELDS:
            value = getattr(hook, name)
            if name in wanted:
                if not isinstance(value, str) or not value or any(c.isspace() for c in value):
                    diags.append(Diagnostic(i, "InvalidName", f"{name}={value!r}"))
            elif value is not None:
                diags.append(Diagnostic(i, "FieldMismatch", f"{name} set on a {hook.kind.value} hook"))
        types = hook.declared_arg_types
        if hook.kind is not HookKind.UPROBE and types:
            diags.append(Diagnostic(i, "InvalidArgTypes", "only uprobes declare argument types"))
        elif len(types) > MAX_ARGS:
            diags.append(Diagnostic(i, "InvalidArgTypes", f"{len(types)} types, at most {MAX_ARGS}"))
        elif any(not isinstance(t, ArgType) or t is ArgType.NONE for t in types):
            diags.append(Diagnostic(i, "InvalidArgTypes", f"bad type list {types!r}"))
        if hook.key in seen:
            diags.append(Diagnostic(i, "DuplicateHook", hook.name))
        seen.add(hook.key)
    f = config.filter
    if f.mode is FilterMode.UID_LIST and not f.uids:
        diags.append(Diagnostic(None, "EmptyFilterSet", "uid filter without uids"))
    if f.mode is FilterMode.PACKAGE_LIST and not f.packages:
        diags.append(Diagnostic(None, "EmptyFilterSet", "package filter without packages"))
    if any(not isinstance(u, int) or not 0 <= u < 1 << 32 for u in f.uids):
        diags.append(Diagnostic(None, "InvalidUid", f"uids must be u32: {sorted(f.uids, key=str)}"))
    return diags


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigSyntaxError(message)


def _parse_filter(doc) -> FilterSpec:
    _require(isinstance(doc, dict), '"filter" must be an object')
    unknown = set(doc) - {"mode", "uids", "packages"}
    _require(not unknown, f"unknown filter keys {sorted(unknown)}")
    try:
        mode = FilterMode(doc.get("mode", "none"))
    except ValueError:
        raise ConfigSyntaxError(f"unknown filter mode {doc.get('mode')!r}") from None
    uids = doc.get("uids", [])
    packages = doc.get("packages", [])
    _require(isinstance(uids, list) and all(type(u) is int for u in uids), '"uids" must be integers')
    _require(isinstance(packages, list) and all(isinstance(p, str) for p in packages),
             '"packages" must be strings')
    return FilterSpec(mode, uids=frozenset(uids), packages=frozenset(packages))


def _parse_section(kind: HookKind, items) -> list[HookSpec]:
    section = SECTION_KEYS[kind]
    _require(isinstance(items, list), f'"{section}" must be an array')
    hooks = []
    for item in items:
        if kind is HookKind.API:
            _require(isinstance(item, dict) and set(item) == {"class", "method"}
                     and all(isinstance(v, str) for v in item.values()),
                     f'"api" entries need string "class" and "method": {item!r}')
            hooks.append(HookSpec.api(item["class"], item["method"]))
        elif kind is HookKind.UPROBE:
            _require(isinstance(item, dict) and {"lib", "symbol"} <= set(item) <= {"lib", "symbol", "args"},
                     f'"uprobes" entries need "lib", "symbol" and optional "args": {item!r}')
            _require(isinstance(item["lib"], str) and isinstance(item["symbol"], str),
                     f"uprobe lib/symbol must be strings: {item!r}")
            args = item.get("args", [])
            _require(isinstance(args, list) and all(isinstance(a, str) for a in args),
                     f'"args" must be an array of type names: {item!r}')
            if len(args) > MAX_ARGS:
                raise InvalidArgTypes(f"{item['lib']}!{item['symbol']}: {len(args)} argument types, at most {MAX_ARGS}")
            try:
                types = [ArgType.from_name(a) for a in args]
            except ValueError as exc:
                raise InvalidArgTypes(f"{item['lib']}!{item['symbol']}: {exc}") from None
            hooks.append(HookSpec.uprobe(item["lib"], item["symbol"], types))
        else:
            _require(isinstance(item, str), f'"{section}" entries must be strings: {item!r}')
            hooks.append(HookSpec.syscall(item) if kind is HookKind.SYSCALL else HookSpec.kprobe(item))
    return hooks


def config_from_document(doc) -> HooksConfig:
    _require(isinstance(doc, dict), "top level must be an object")
    hooks = []
    flt = FilterSpec()
    for key, value in doc.items():
        if key == "filter":
            flt = _parse_filter(value)
        elif key in _KIND_BY_SECTION:
            hooks.extend(_parse_section(_KIND_BY_SECTION[key], value))
        else:
            raise UnknownKind(f"unknown event kind {key!r}; expected one of {sorted(_KIND_BY_SECTION)}")
    config = HooksConfig(tuple(hooks), flt)
    diags = validate(config)
    if diags:
        first = diags[0]
        raise _ERRORS_BY_RULE.get(first.rule, InvalidHook)(f"{first}: {first.message}")
    return config


def parse_hooks_config(text) -> HooksConfig:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigSyntaxError(f"not UTF-8: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_document(doc)


def load_hooks_config(path) -> HooksConfig:
    try:
        with open(path, "rb") as f:
            return parse_hooks_config(f.read())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def config_to_document(config: HooksConfig) -> dict:
    """Inverse of config_from_document. Sections appear in order of first use."""
    doc: dict = {}
    for hook in config.hooks:
        section = doc.setdefault(SECTION_KEYS[hook.kind], [])
        if hook.kind is HookKind.API:
            section.append({"class": hook.class_name, "method": hook.method_name})
        elif hook.kind is HookKind.UPROBE:
            section.append({"lib": hook.library_path, "symbol": hook.symbol_name,
                            "args": [t.label for t in hook.declared_arg_types]})
        else:
            section.append(hook.name)
    f = config.filter
    if f.mode is not FilterMode.NONE:
        flt: dict = {"mode": f.mode.value}
        if f.uids:
            flt["uids"] = sorted(f.uids)
        if f.packages:
            flt["packages"] = sorted(f.packages)
        doc["filter"] = flt
    return doc


def dump_hooks_config(config: HooksConfig) -> str:
    return json.dumps(config_to_document(config), indent=2) + "\n"


def default_config_text() -> str:
    return resources.files("tracescope.data").joinpath("default_config.json").read_text("utf-8")


@lru_cache(maxsize=None)
def default_multilayer_config() -> HooksConfig:
    """The multi-layer event set: 50 API methods, 4 native functions, 49 syscalls, 3 kernel functions."""
    return parse_hooks_config(default_config_text())
