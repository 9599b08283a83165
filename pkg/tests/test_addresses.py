import json
import shutil
import subprocess

import pytest

from tracescope import elf
from tracescope.addresses import (AddressCollision, AddressMap, DeviceSnapshot, HookUnresolved, MalformedLine,
                                  MalformedMethodEntry, OatMethodRecord, ProbeKind, TooManyArgs,
                                  UnsupportedDescriptor, encode_arg_types, executable_images, parse_oatdump,
                                  parse_proc_maps, read_symbol_offset, resolve_probes, shipped_snapshot,
                                  shipped_snapshot_dir)
from tracescope.config import HookSpec, HooksConfig, default_multilayer_config
from tracescope.events import ArgType, UnknownArgType, decode_arg_types

DEVICE = shipped_snapshot_dir()
BOOT_OAT = "/system/framework/arm64/boot.oat"
MAPS_LINE = "7000000000-7000004000 r-xp 00000000 fd:00 1234 /system/framework/arm64/boot.oat"


def _read(name: str) -> bytes:
    return DEVICE.joinpath(name).read_bytes()


class TestProcMaps:
    def test_single_line(self):
        (r,) = parse_proc_maps(MAPS_LINE)
        assert (r.start, r.end, r.perms, r.path) == (0x7000000000, 0x7000004000, "r-xp", BOOT_OAT)
        assert r.inode == 1234 and r.device == "fd:00"

    def test_empty(self):
        assert parse_proc_maps("") == []

    def test_missing_range(self):
        with pytest.raises(MalformedLine) as exc:
            parse_proc_maps("r-xp 00000000 fd:00 1234 /system/lib64/libc.so")
        assert exc.value.line_no == 1

    def test_anonymous_region_has_empty_path(self):
        (r,) = parse_proc_maps("7f00000000-7f00001000 rw-p 00000000 00:00 0")
        assert r.path == ""

    def test_path_with_spaces_and_marker(self):
        (r,) = parse_proc_maps("7f00000000-7f00001000 rw-p 00000000 00:00 0   /dev/ashmem/dalvik heap (deleted)")
        assert r.path == "/dev/ashmem/dalvik heap (deleted)"

    def test_executable_image(self):
        assert executable_images(parse_proc_maps(MAPS_LINE)) == {BOOT_OAT: 0x7000000000}

    def test_executable_mapping_wins(self):
        text = ("1000-2000 r--p 00000000 fd:00 9 /system/lib64/libx.so\n"
                "3000-4000 r-xp 00001000 fd:00 9 /system/lib64/libx.so\n")
        assert executable_images(parse_proc_maps(text)) == {"/system/lib64/libx.so": 0x3000}

    def test_ashmem_excluded(self):
        text = "1000-2000 r-xp 00000000 00:05 9 /dev/ashmem\n"
        assert executable_images(parse_proc_maps(text)) == {}

    def test_shipped_maps_parse(self):
        images = shipped_snapshot().images()
        assert BOOT_OAT.replace("/system/framework", "/apex/com.android.art/javalib") in images
        assert "/apex/com.android.runtime/lib64/bionic/libc.so" in images


OAT_LISTEN = """\
  9: void android.telephony.TelephonyManager.listen(android.telephony.PhoneStateListener, int) (dex_method_idx=20142)
    DEX CODE:
      0x0000: 0e00                     | return-void
    OatMethodOffsets (offset=0x00a1b2c4)
      code_offset: 0x0004a2c0
    OatQuickMethodHeader (offset=0x0004a2a8)
      vmap_table: (offset=0x00000000)
    QuickMethodFrameInfo
      frame_size_in_bytes: 32
  10: int android.telephony.TelephonyManager.getPhoneCount() (dex_method_idx=20150)
    DEX CODE:
      0x0000: 1210                     | const/4 v0, #+1
    OatMethodOffsets (offset=0x00a1b2cc)
      code_offset: 0x00000000
"""


class TestOatdump:
    def test_listen_entry(self):
        listen, count = parse_oatdump(OAT_LISTEN)
        assert listen.class_name == "android.telephony.TelephonyManager"
        assert listen.method_name == "listen"
        assert listen.code_offset == 0x4A2C0
        assert listen.arg_types == (ArgType.ADDR, ArgType.INT)
        assert listen.compiled

    def test_zero_offset_retained_not_compiled(self):
        count = parse_oatdump(OAT_LISTEN)[1]
        assert count.method_name == "getPhoneCount" and count.code_offset == 0
        assert not count.compiled

    def test_empty(self):
        assert parse_oatdump("") == []

    def test_missing_code_offset(self):
        with pytest.raises(MalformedMethodEntry):
            parse_oatdump(OAT_LISTEN.splitlines()[0] + "\n")

    def test_garbled_header(self):
        with pytest.raises(MalformedMethodEntry):
            parse_oatdump("  1: void broken( (dex_method_idx=3)\n      code_offset: 0x10\n")

    def test_primitive_and_array_types(self):
        text = ("  1: void a.B.m(long, double, float, boolean, byte[], java.lang.String[]) (dex_method_idx=1)\n"
                "      code_offset: 0x00000100\n")
        (r,) = parse_oatdump(text)
        assert r.arg_types == (ArgType.LONG, ArgType.ULONG, ArgType.UINT, ArgType.INT, ArgType.ADDR, ArgType.ADDR)

    def test_void_parameter_rejected(self):
        with pytest.raises(UnsupportedDescriptor):
            parse_oatdump("  1: void a.B.m(void) (dex_method_idx=1)\n      code_offset: 0x10\n")

    def test_shipped_listen_matches(self):
        recs = shipped_snapshot().oat_records()["/system/framework/arm64/boot-framework.oat"]
        (listen,) = [r for r in recs if r.method_name == "listen"]
        assert listen.code_offset == 0x4A2C0


class TestSymbols:
    def test_open_offset(self):
        assert read_symbol_offset(_read("lib/libc.so"), "open").offset == 0x1F40

    def test_missing_symbol(self):
        with pytest.raises(elf.SymbolNotFound):
            read_symbol_offset(_read("lib/libc.so"), "no_such_fn")

    def test_garbage(self):
        with pytest.raises(elf.NotAnElf):
            read_symbol_offset(b"\x00\x01\x02\x03", "open")

    def test_elf32_rejected(self):
        with pytest.raises(elf.NotAnElf):
            elf.ElfImage(b"\x7fELF\x01\x01" + bytes(80))

    @pytest.mark.skipif(shutil.which("readelf") is None, reason="binutils readelf not installed")
    @pytest.mark.parametrize("lib", ["libc.so", "libdl.so", "libbinder_ndk.so", "libcamera2ndk.so"])
    def test_dynsym_values_match_readelf(self, lib):
        path = str(DEVICE.joinpath("lib", lib))
        out = subprocess.run(["readelf", "-W", "--dyn-syms", path], capture_output=True, text=True,
                             check=True).stdout
        expected = {}
        for line in out.splitlines():
            parts = line.split()
            if len(parts) >= 8 and parts[0][:-1].isdigit() and parts[6] != "UND" and parts[7]:
                expected[parts[7]] = int(parts[1], 16)
        ours = {s.name: s.value for s in elf.ElfImage(_read(f"lib/{lib}")).dynamic_symbols()
                if s.shndx != elf.SHN_UNDEF and s.name}
        assert expected and ours == expected


class TestArgEncoding:
    def test_empty(self):
        assert encode_arg_types([]) == 0

    def test_str(self):
        assert encode_arg_types([ArgType.STR]) == 0x6

    def test_addr_int(self):
        assert encode_arg_types([ArgType.ADDR, ArgType.INT]) == 0x0105

    def test_decode(self):
        assert decode_arg_types(0) == []
        assert decode_arg_types(0x0105) == [ArgType.ADDR, ArgType.INT]

    def test_unknown_code(self):
        with pytest.raises(UnknownArgType):
            decode_arg_types(0x0900)

    def test_too_many(self):
        with pytest.raises(TooManyArgs):
            encode_arg_types([ArgType.INT] * 9)

    @pytest.mark.parametrize("types", [[ArgType.BYTES] * 8, [ArgType.ULONG, ArgType.LONG, ArgType.UINT]])
    def test_round_trip(self, types):
        assert decode_arg_types(encode_arg_types(types)) == types


def _reader(symbols):
    def read(path, name):
        try:
            return symbols[(path, name)]
        except KeyError:
            raise elf.SymbolNotFound(name) from None
    return read


def _rec(cls, method, offset, types=()):
    return OatMethodRecord(cls, method, f"{cls}.{method}()", offset, tuple(types))


class TestResolveProbes:
    images = {BOOT_OAT: 0x7000000000}

    def test_base_plus_offset(self):
        config = HooksConfig((HookSpec.api("android.telephony.TelephonyManager", "listen"),))
        oat = {BOOT_OAT: [_rec("android.telephony.TelephonyManager", "listen", 0x4A2C0,
                               [ArgType.ADDR, ArgType.INT])]}
        probes, amap = resolve_probes(config, self.images, oat, _reader({}))
        (p,) = probes
        assert p.address == 0x700004A2C0 and p.kind is ProbeKind.API_CALL and p.arg_encoding == 0x0105
        assert amap.get(0x700004A2C0).display_name == "android.telephony.TelephonyManager.listen"

    def test_not_compiled(self):
        config = HooksConfig((HookSpec.api("a.B", "m"),))
        oat = {BOOT_OAT: [_rec("a.B", "m", 0)]}
        res = resolve_probes(config, self.images, oat, _reader({}))
        assert res.probes == [] and res.unresolved[0].reason == "not compiled"
        with pytest.raises(HookUnresolved):
            resolve_probes(config, self.images, oat, _reader({}), strict=True)

    def test_collision(self):
        config = HooksConfig((HookSpec.api("a.B", "onCreate"), HookSpec.api("a.B", "onDestroy")))
        oat = {BOOT_OAT: [_rec("a.B", "onCreate", 0x100), _rec("a.B", "onDestroy", 0x100)]}
        res = resolve_probes(config, self.images, oat, _reader({}))
        assert len(res.collisions) == 1
        assert res.address_map.collisions() == {0x7000000100: ("a.B.onCreate", "a.B.onDestroy")}
        with pytest.raises(AddressCollision):
            resolve_probes(config, self.images, oat, _reader({}), strict=True)

    def test_native_by_basename(self):
        lib = "/apex/com.android.runtime/lib64/bionic/libc.so"
        config = HooksConfig((HookSpec.uprobe("libc.so", "open", [ArgType.STR, ArgType.INT]),))
        res = resolve_probes(config, {lib: 0x7100000000}, {}, _reader({(lib, "open"): read_symbol_offset(
            _read("lib/libc.so"), "open")}))
        (p,) = res.probes
        assert p.address == 0x7100001F40 and p.display_name == "libc.so!open"
        assert p.kind is ProbeKind.NATIVE_FUNCTION and p.arg_encoding == 0x0106

    def test_unmapped_library(self):
        config = HooksConfig((HookSpec.uprobe("libmissing.so", "f"),))
        res = resolve_probes(config, {}, {}, _reader({}))
        assert res.probes == [] and len(res.unresolved) == 1

    def test_oat_not_mapped_executable(self):
        config = HooksConfig((HookSpec.api("a.B", "m"),))
        res = resolve_probes(config, {}, {BOOT_OAT: [_rec("a.B", "m", 0x10)]}, _reader({}))
        assert len(res.unresolved) == 1


class TestShippedSnapshot:
    def test_default_config_resolves_cleanly(self):
        res = shipped_snapshot().resolve(default_multilayer_config())
        assert res.unresolved == [] and res.collisions == []
        assert len(res.probes) == 54

    def test_matches_oracle_table(self):
        oracle = json.loads(_read("oracle_addresses.json"))
        res = shipped_snapshot().resolve(default_multilayer_config())
        for p in res.probes:
            assert int(oracle[p.display_name], 16) == p.address, p.display_name

    def test_address_map_document_round_trip(self):
        amap = shipped_snapshot().resolve(default_multilayer_config()).address_map
        assert AddressMap.from_document(json.loads(amap.to_json())) == amap

    def test_bad_snapshot_dir(self, tmp_path):
        with pytest.raises(ValueError):
            DeviceSnapshot(tmp_path)
