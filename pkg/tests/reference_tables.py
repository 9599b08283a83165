"""Expected multi-layer hook names, transcribed by hand for the default-config check."""

API_METHODS = [
    ("android.telephony.TelephonyManager", "getImei"),
    ("android.telephony.TelephonyManager", "getSubscriberId"),
    ("android.telephony.TelephonyManager", "getLine1Number"),
    ("android.telephony.TelephonyManager", "getNetworkOperatorName"),
    ("android.telephony.TelephonyManager", "getNetworkCountryIso"),
    ("android.telephony.TelephonyManager", "getCellLocation"),
    ("android.telephony.TelephonyManager", "getAllCellInfo"),
    ("android.telephony.TelephonyManager", "listen"),
    ("android.os.Debug", "isDebuggerConnected"),
    ("android.app.SharedPreferencesImpl$EditorImpl", "putString"),
    ("android.app.SharedPreferencesImpl$EditorImpl", "putBoolean"),
    ("android.app.SharedPreferencesImpl$EditorImpl", "putInt"),
    ("android.app.SharedPreferencesImpl$EditorImpl", "putLong"),
    ("android.app.SharedPreferencesImpl$EditorImpl", "putFloat"),
    ("android.app.ActivityThread", "handleReceiver"),
    ("dalvik.system.BaseDexClassLoader", "findClass"),
    ("dalvik.system.BaseDexClassLoader", "findResource"),
    ("dalvik.system.BaseDexClassLoader", "findResources"),
    ("dalvik.system.BaseDexClassLoader", "findLibrary"),
    ("java.lang.ClassLoader", "loadClass"),
    ("android.app.ApplicationPackageManager", "setComponentEnabledSetting"),
    ("android.app.NotificationManager", "notify"),
    ("android.util.Base64", "decode"),
    ("android.util.Base64", "encode"),
    ("android.util.Base64", "encodeToString"),
    ("android.content.ContentResolver", "query"),
    ("android.content.ContentResolver", "registerContentObserver"),
    ("android.content.ContentResolver", "insert"),
    ("android.accounts.AccountManager", "getAccountsByType"),
    ("android.accounts.AccountManager", "getAccounts"),
    ("android.location.Location", "getLatitude"),
    ("android.location.Location", "getLongitude"),
    ("android.content.ContentResolver", "delete"),
    ("android.media.MediaRecorder", "start"),
    ("android.app.ApplicationPackageManager", "getInstalledPackages"),
    ("android.app.ActivityManager", "getRunningAppProcesses"),
    ("android.app.ActivityManager", "getRunningTasks"),
    ("dalvik.system.DexFile", "openDexFile"),
    ("android.content.ContextWrapper", "startService"),
    ("android.content.ContextWrapper", "startActivity"),
    ("android.view.View", "setOnClickListener"),
    ("java.lang.reflect.Method", "invoke"),
    ("android.os.PowerManager", "newWakeLock"),
    ("android.view.WindowManager", "addView"),
    ("android.content.res.AssetManager", "open"),
    ("android.content.res.AssetManager", "openNonAssetFd"),
    ("android.app.ContextImpl", "getSystemService"),
    ("android.app.usage.UsageStatsManager", "queryUsageStats"),
    ("java.lang.Thread", "sleep"),
    ("java.lang.reflect.Proxy", "newProxyInstance"),
]

NATIVE_FUNCTIONS = [
    ("libbinder_ndk.so", "AIBinder_new"),
    ("libcamera2ndk.so", "ACameraManager_openCamera"),
    ("libc.so", "open"),
    ("libdl.so", "dlopen"),
]

KERNEL_FUNCTIONS = ["sched_process_exit", "vfs_write", "security_bprm_check"]

SYSCALLS = """
execve execveat fork vfork clone open openat stat lstat bpf perf_event_open access
faccessat unlink unlinkat symlink symlinkat chmod fchmod fchmodat chown fchown fchownat
lchown ptrace setuid setgid setreuid setregid setfsuid setfsgid kill tkill tgkill mknod
mknodat mount umount init_module finit_module delete_module connect accept accept4 listen
process_vm_readv process_vm_writev inotify_add_watch memfd_create
""".split()
