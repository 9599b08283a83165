"""Write the bundled zygote64 device snapshot into src/tracescope/data/device/.

The snapshot is synthetic but format-faithful: a zygote64 /proc/PID/maps
file, oatdump excerpts for two boot images, and small AArch64 ET_DYN shared
objects whose .dynsym carries the exported functions uprobes attach to.
Regenerating overwrites the committed files; the address oracle table
(oracle_addresses.json) is computed separately by tools/oracle_addresses.sh.
"""
import json
import struct
import sys
from pathlib import Path

# ----------------------------------------------------------------- ELF

TEXT_VADDR = 0x1000
TEXT_SIZE = 0x2000
ARM64_RET = struct.pack("<I", 0xD65F03C0)


def build_shared_object(soname, symbols, imports=()):
    """Two PT_LOADs: r-- [0, 0x1000) holding headers and dynsym, r-x [0x1000, 0x3000) text."""
    dynstr = bytearray(b"\0")
    name_off = {}
    for name in [soname] + [n for n, _ in symbols] + list(imports):
        name_off[name] = len(dynstr)
        dynstr += name.encode() + b"\0"

    text_shndx = 3
    sym = struct.Struct("<IBBHQQ")
    dynsym = bytearray(sym.pack(0, 0, 0, 0, 0, 0))
    for name in imports:
        dynsym += sym.pack(name_off[name], 0x12, 0, 0, 0, 0)  # GLOBAL FUNC, undefined
    for name, value in symbols:
        assert TEXT_VADDR <= value < TEXT_VADDR + TEXT_SIZE
        dynsym += sym.pack(name_off[name], 0x12, 0, text_shndx, value, 4)

    shstrtab = b"\0.dynsym\0.dynstr\0.text\0.shstrtab\0"
    sh_name = {n: shstrtab.index(n.encode() + b"\0") for n in (".dynsym", ".dynstr", ".text", ".shstrtab")}

    ehdr_size, phdr_size, shdr_size = 64, 56, 64
    phnum = 2
    dynsym_off = ehdr_size + phnum * phdr_size
    dynstr_off = dynsym_off + len(dynsym)
    assert dynstr_off + len(dynstr) <= TEXT_VADDR
    text_off = TEXT_VADDR
    shstr_off = text_off + TEXT_SIZE
    shoff = (shstr_off + len(shstrtab) + 7) & ~7

    out = bytearray(shoff + 5 * shdr_size)
    ident = b"\x7fELF" + bytes([2, 1, 1, 0]) + bytes(8)
    struct.pack_into("<16sHHIQQQIHHHHHH", out, 0, ident, 3, 183, 1, 0, ehdr_size, shoff, 0,
                     ehdr_size, phdr_size, phnum, shdr_size, 5, 4)
    phdr = struct.Struct("<IIQQQQQQ")
    phdr.pack_into(out, ehdr_size, 1, 4, 0, 0, 0, TEXT_VADDR, TEXT_VADDR, 0x1000)
    phdr.pack_into(out, ehdr_size + phdr_size, 1, 5, text_off, TEXT_VADDR, TEXT_VADDR,
                   TEXT_SIZE, TEXT_SIZE, 0x1000)
    out[dynsym_off:dynsym_off + len(dynsym)] = dynsym
    out[dynstr_off:dynstr_off + len(dynstr)] = dynstr
    out[text_off:text_off + TEXT_SIZE] = ARM64_RET * (TEXT_SIZE // 4)
    out[shstr_off:shstr_off + len(shstrtab)] = shstrtab
    shdr = struct.Struct("<IIQQQQIIQQ")
    base = shoff + shdr_size
    shdr.pack_into(out, base, sh_name[".dynsym"], 11, 2, dynsym_off, dynsym_off, len(dynsym), 2, 1, 8, 24)
    shdr.pack_into(out, base + shdr_size, sh_name[".dynstr"], 3, 2, dynstr_off, dynstr_off, len(dynstr), 0, 0, 1, 0)
    shdr.pack_into(out, base + 2 * shdr_size, sh_name[".text"], 1, 6, TEXT_VADDR, text_off, TEXT_SIZE, 0, 0, 16, 0)
    shdr.pack_into(out, base + 3 * shdr_size, sh_name[".shstrtab"], 3, 0, 0, shstr_off, len(shstrtab), 0, 0, 1, 0)
    return bytes(out)


LIBRARIES = {
    "/apex/com.android.runtime/lib64/bionic/libc.so": (
        "libc.so", [("close", 0x1200), ("open", 0x2F40), ("read", 0x2F80), ("write", 0x2FC0)],
        ["__cxa_finalize"]),
    "/apex/com.android.runtime/lib64/bionic/libdl.so": (
        "libdl.so", [("dlopen", 0x1010), ("dlsym", 0x1050), ("dlclose", 0x1090)], []),
    "/system/lib64/libbinder_ndk.so": (
        "libbinder_ndk.so", [("AIBinder_Class_define", 0x1400), ("AIBinder_new", 0x1A20)], ["open"]),
    "/system/lib64/libcamera2ndk.so": (
        "libcamera2ndk.so", [("ACameraManager_create", 0x2000), ("ACameraManager_openCamera", 0x2C84)], []),
}

# ------------------------------------------------------------ oatdump

BOOT_OAT = "/apex/com.android.art/javalib/arm64/boot.oat"
FRAMEWORK_OAT = "/system/framework/arm64/boot-framework.oat"

# (class, [(return type, method, params, code_offset)]) per oat image.
OAT_CLASSES = {
    BOOT_OAT: ("/apex/com.android.art/javalib/core-oj.jar", [
        ("java.lang.ClassLoader", [("java.lang.Class", "loadClass", "java.lang.String, boolean", 0x00021a40)]),
        ("java.lang.Thread", [("void", "sleep", "long", 0x00025c10)]),
        ("java.lang.reflect.Method", [("java.lang.Object", "invoke", "java.lang.Object, java.lang.Object[]", 0x0002c300)]),
        ("java.lang.reflect.Proxy", [("java.lang.Object", "newProxyInstance",
                                      "java.lang.ClassLoader, java.lang.Class[], java.lang.reflect.InvocationHandler", 0x0002e9e8)]),
        ("dalvik.system.BaseDexClassLoader", [
            ("java.lang.Class", "findClass", "java.lang.String", 0x00031120),
            ("java.net.URL", "findResource", "java.lang.String", 0x000312b0),
            ("java.util.Enumeration", "findResources", "java.lang.String", 0x00031390),
            ("java.lang.String", "findLibrary", "java.lang.String", 0x00031460)]),
        ("dalvik.system.DexFile", [
            ("java.lang.Object", "openDexFile",
             "java.lang.String, java.lang.String, int, java.lang.ClassLoader, dalvik.system.DexPathList$Element[]", 0x00033a70)]),
    ]),
    FRAMEWORK_OAT: ("/system/framework/framework.jar", [
        ("android.telephony.TelephonyManager", [
            ("void", "<init>", "android.content.Context", 0x0004a100),
            ("java.lang.String", "getImei", "", 0x0004a180),
            ("java.lang.String", "getImei", "int", 0x00000000),
            ("java.lang.String", "getSubscriberId", "", 0x0004a1e0),
            ("java.lang.String", "getLine1Number", "", 0x0004a220),
            ("java.lang.String", "getNetworkOperatorName", "", 0x0004a250),
            ("java.lang.String", "getNetworkCountryIso", "", 0x0004a268),
            ("android.telephony.CellLocation", "getCellLocation", "", 0x0004a280),
            ("java.util.List", "getAllCellInfo", "", 0x0004a2a0),
            ("void", "listen", "android.telephony.PhoneStateListener, int", 0x0004a2c0)]),
        ("android.os.Debug", [("boolean", "isDebuggerConnected", "", 0x00052040)]),
        ("android.app.SharedPreferencesImpl$EditorImpl", [
            ("android.content.SharedPreferences$Editor", "putString", "java.lang.String, java.lang.String", 0x00057300),
            ("android.content.SharedPreferences$Editor", "putBoolean", "java.lang.String, boolean", 0x00057380),
            ("android.content.SharedPreferences$Editor", "putInt", "java.lang.String, int", 0x00057400),
            ("android.content.SharedPreferences$Editor", "putLong", "java.lang.String, long", 0x00057480),
            ("android.content.SharedPreferences$Editor", "putFloat", "java.lang.String, float", 0x00057500)]),
        ("android.app.ActivityThread", [("void", "handleReceiver", "android.app.ActivityThread$ReceiverData", 0x0005c8d0)]),
        ("android.app.ApplicationPackageManager", [
            ("void", "setComponentEnabledSetting", "android.content.ComponentName, int, int", 0x00061e20),
            ("java.util.List", "getInstalledPackages", "int", 0x00061f10)]),
        ("android.app.NotificationManager", [("void", "notify", "int, android.app.Notification", 0x00064a58)]),
        ("android.util.Base64", [
            ("byte[]", "decode", "java.lang.String, int", 0x00066b40),
            ("byte[]", "decode", "byte[], int", 0x00000000),
            ("byte[]", "encode", "byte[], int", 0x00066c10),
            ("java.lang.String", "encodeToString", "byte[], int", 0x00066cd0)]),
        ("android.content.ContentResolver", [
            ("android.database.Cursor", "query",
             "android.net.Uri, java.lang.String[], java.lang.String, java.lang.String[], java.lang.String", 0x0006a010),
            ("void", "registerContentObserver", "android.net.Uri, boolean, android.database.ContentObserver", 0x0006a1a8),
            ("android.net.Uri", "insert", "android.net.Uri, android.content.ContentValues", 0x0006a260),
            ("int", "delete", "android.net.Uri, java.lang.String, java.lang.String[]", 0x0006a330)]),
        ("android.accounts.AccountManager", [
            ("android.accounts.Account[]", "getAccountsByType", "java.lang.String", 0x0006e2c8),
            ("android.accounts.Account[]", "getAccounts", "", 0x0006e3a0)]),
        ("android.location.Location", [
            ("double", "getLatitude", "", 0x00071048),
            ("double", "getLongitude", "", 0x00071058)]),
        ("android.media.MediaRecorder", [("void", "start", "", 0x00073f00)]),
        ("android.app.ActivityManager", [
            ("java.util.List", "getRunningAppProcesses", "", 0x000761c0),
            ("java.util.List", "getRunningTasks", "int", 0x00076250)]),
        ("android.content.ContextWrapper", [
            ("android.content.ComponentName", "startService", "android.content.Intent", 0x00079840),
            ("void", "startActivity", "android.content.Intent", 0x00079868)]),
        ("android.view.View", [("void", "setOnClickListener", "android.view.View$OnClickListener", 0x0007e5a0)]),
        ("android.os.PowerManager", [("android.os.PowerManager$WakeLock", "newWakeLock", "int, java.lang.String", 0x00082190)]),
        ("android.view.WindowManager", [("void", "addView", "android.view.View, android.view.ViewGroup$LayoutParams", 0x00084b00)]),
        ("android.content.res.AssetManager", [
            ("java.io.InputStream", "open", "java.lang.String", 0x000872d0),
            ("android.content.res.AssetFileDescriptor", "openNonAssetFd", "java.lang.String", 0x000873f8)]),
        ("android.app.ContextImpl", [("java.lang.Object", "getSystemService", "java.lang.String", 0x0008a0c0)]),
        ("android.app.usage.UsageStatsManager", [("java.util.List", "queryUsageStats", "int, long, long", 0x0008c7a0)]),
        # Empty bodies compile to one shared stub.
        ("android.app.Service", [
            ("void", "onCreate", "", 0x0008f000),
            ("void", "onDestroy", "", 0x0008f000)]),
        ("android.net.wifi.WifiManager", [("android.net.wifi.WifiInfo", "getConnectionInfo", "", 0x00000000)]),
    ]),
}


def descriptor(class_name):
    return "L" + class_name.replace(".", "/") + ";"


def oatdump_text(oat_path, dex_location, classes):
    lines = [
        "MAGIC:",
        "oat",
        "183",
        "",
        "LOCATION:",
        oat_path,
        "",
        "CHECKSUM:",
        "0x5f3c91a2",
        "",
        "INSTRUCTION SET:",
        "Arm64",
        "",
        "OatDexFile:",
        f"location: {dex_location}",
        "checksum: 0x4a1b2c3d",
    ]
    dex_method_idx = 20112
    class_offset = 0x00089D40
    for class_idx, (class_name, methods) in enumerate(classes):
        compiled = sum(1 for m in methods if m[3])
        status = "OatClassAllCompiled" if compiled == len(methods) else "OatClassSomeCompiled"
        lines.append(f"{class_idx}: {descriptor(class_name)} (offset=0x{class_offset:08x}) "
                     f"(type_idx={2011 + class_idx}) (Initialized) ({status})")
        class_offset += 0x40
        for method_idx, (ret, name, params, code_offset) in enumerate(methods):
            dex_method_idx += 3
            lines.append(f"  {method_idx}: {ret} {class_name}.{name}({params}) (dex_method_idx={dex_method_idx})")
            lines += [
                "    DEX CODE:",
                "      0x0000: 1200                     | const/4 v0, #+0",
                "      0x0001: 0f00                     | return v0",
                f"    OatMethodOffsets (offset=0x{class_offset + 8 * method_idx:08x})",
                f"      code_offset: 0x{code_offset:08x} ",
                f"    OatQuickMethodHeader (offset=0x{max(code_offset - 0x18, 0) if code_offset else 0:08x})",
                "      vmap_table: (offset=0x00000000)",
                "    QuickMethodFrameInfo",
                "      frame_size_in_bytes: 32",
                "      core_spill_mask: 0x40000000 (r30)",
                "      fp_spill_mask: 0x00000000 ",
            ]
            if code_offset:
                lines += [
                    f"    CODE: (code_offset=0x{code_offset:08x} size=8)...",
                    f"      0x{code_offset:08x}: 52800000\tmov w0, #0x0",
                    f"      0x{code_offset + 4:08x}: d65f03c0\tret",
                ]
            else:
                lines += ["    CODE: (code_offset=0x00000000 size=0)", "      NO CODE!"]
        lines.append("")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------- maps

MAPS = """\
12c00000-2ac00000 rw-p 00000000 00:00 0                                  [anon:dalvik-main space (region space)]
6f8a1000-6fb3e000 rw-p 00000000 00:00 0                                  [anon:dalvik-/apex/com.android.art/javalib/boot.art]
6fb3e000-6fc1d000 r--p 00000000 fd:05 1441                               /apex/com.android.art/javalib/arm64/boot.oat
6fc1d000-6fc5a000 r-xp 000df000 fd:05 1441                               /apex/com.android.art/javalib/arm64/boot.oat
6fc5a000-6fc5b000 rw-p 00000000 00:00 0                                  [anon:.bss]
6fc5b000-6fc5c000 r--p 0011c000 fd:05 1441                               /apex/com.android.art/javalib/arm64/boot.oat
6fc5c000-6fc5d000 rw-p 0011d000 fd:05 1441                               /apex/com.android.art/javalib/arm64/boot.oat
70138000-70421000 r--p 00000000 fd:00 3155                               /system/framework/arm64/boot-framework.oat
70421000-704b9000 r-xp 002e9000 fd:00 3155                               /system/framework/arm64/boot-framework.oat
704b9000-704ba000 rw-p 00000000 00:00 0                                  [anon:.bss]
704ba000-704d2000 r--p 00381000 fd:00 3155                               /system/framework/arm64/boot-framework.oat
704d2000-704d3000 rw-p 00399000 fd:00 3155                               /system/framework/arm64/boot-framework.oat
7116e00000-7116e01000 r--p 00000000 fd:00 2306                           /system/lib64/libcamera2ndk.so
7116e01000-7116e03000 r-xp 00001000 fd:00 2306                           /system/lib64/libcamera2ndk.so
7116e03000-7116e04000 r--p 00003000 fd:00 2306                           /system/lib64/libcamera2ndk.so
7116e04000-7116e05000 rw-p 00004000 fd:00 2306                           /system/lib64/libcamera2ndk.so
7121c00000-7121c01000 r--p 00000000 fd:00 2291                           /system/lib64/libbinder_ndk.so
7121c01000-7121c03000 r-xp 00001000 fd:00 2291                           /system/lib64/libbinder_ndk.so
7121c03000-7121c04000 r--p 00003000 fd:00 2291                           /system/lib64/libbinder_ndk.so
7121c04000-7121c05000 rw-p 00004000 fd:00 2291                           /system/lib64/libbinder_ndk.so
7128a5f000-7128a7f000 rw-s 00000000 00:05 17408                          /dev/ashmem/dalvik-zygote space (deleted)
7128a7f000-7128a80000 rw-p 00000000 00:00 0                              [anon:linker_alloc]
7187e00000-7187e01000 r--p 00000000 07:30 61                             /apex/com.android.runtime/lib64/bionic/libc.so
7187e01000-7187e03000 r-xp 00001000 07:30 61                             /apex/com.android.runtime/lib64/bionic/libc.so
7187e03000-7187e04000 r--p 00003000 07:30 61                             /apex/com.android.runtime/lib64/bionic/libc.so
7187e04000-7187e05000 rw-p 00004000 07:30 61                             /apex/com.android.runtime/lib64/bionic/libc.so
7187e05000-7187e06000 rw-p 00000000 00:00 0                              [anon:.bss]
718e3c0000-718e3c1000 r--p 00000000 07:30 64                             /apex/com.android.runtime/lib64/bionic/libdl.so
718e3c1000-718e3c3000 r-xp 00001000 07:30 64                             /apex/com.android.runtime/lib64/bionic/libdl.so
718e3c3000-718e3c4000 r--p 00003000 07:30 64                             /apex/com.android.runtime/lib64/bionic/libdl.so
7fc3a0f000-7fc3a30000 rw-p 00000000 00:00 0                              [stack]
ffffff8000-ffffff9000 r-xp 00000000 00:00 0                              [vdso]
"""


def main(root):
    root = Path(root)
    (root / "lib").mkdir(parents=True, exist_ok=True)
    (root / "oatdump").mkdir(parents=True, exist_ok=True)
    (root / "zygote64_maps.txt").write_text(MAPS)
    index = {"maps": "zygote64_maps.txt", "oatdump": {}, "libraries": {}}
    for oat_path, (dex_location, classes) in OAT_CLASSES.items():
        name = Path(oat_path).stem + ".txt"
        (root / "oatdump" / name).write_text(oatdump_text(oat_path, dex_location, classes))
        index["oatdump"][oat_path] = f"oatdump/{name}"
    for lib_path, (soname, symbols, imports) in LIBRARIES.items():
        (root / "lib" / soname).write_bytes(build_shared_object(soname, symbols, imports))
        index["libraries"][lib_path] = f"lib/{soname}"
    (root / "snapshot.json").write_text(json.dumps(index, indent=2) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/tracescope/data/device")
