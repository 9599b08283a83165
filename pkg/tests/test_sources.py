import io
import random

import pytest

from helpers import first_four_oracle, random_record
from tracescope.addresses import shipped_snapshot
from tracescope.config import FilterMode, HookSpec, HooksConfig, default_multilayer_config
from tracescope.errors import InputError
from tracescope.events import (Arg, ArgType, EventContext, EventRecord, Kprobe, SyscallEnter, UserProbe,
                               decode_event, encode_event)
from tracescope.sources import (MAX_FRAME, REPLAY_MAGIC, SCENARIO_MAGIC, SCENARIO_NAMES, FormatError, ListSource,
                                ProbePlan, QueuedSource, ReplaySource, ReplayWriter, Scenario, SourceIoError,
                                build_scenario, check_plan, emit_probe_plan, generate_load, open_replay,
                                replay_bytes, simulate_scenario, write_load_replay, write_replay)
from tracescope.syscalls import KPROBE_CATALOG


def _records(n, seed=1):
    rng = random.Random(seed)
    return [random_record(rng) for _ in range(n)]


def _drain(src):
    out = []
    while True:
        batch = src.next_batch()
        if not batch:
            return out
        out.extend(batch)


class TestReplay:
    def test_three_events(self, tmp_path):
        recs = _records(3)
        path = tmp_path / "three.rpl"
        assert write_replay(path, recs) == 3
        with open_replay(path) as src:
            assert _drain(src) == recs
            assert src.next_batch() == []

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.rpl"
        path.write_bytes(b"")
        with open_replay(path) as src:
            assert src.next_batch() == []

    def test_header_only(self):
        assert ReplaySource(io.BytesIO(REPLAY_MAGIC)).next_batch() == []

    def test_valid_then_garbage(self, tmp_path):
        (rec,) = _records(1)
        path = tmp_path / "garbage.rpl"
        path.write_bytes(replay_bytes([rec]) + b"\x10\x00\x00\x00" + b"\xab" * 16)
        with open_replay(path) as src:
            assert src.next_batch() == [rec]
            with pytest.raises(FormatError) as exc:
                src.next_batch()
        assert exc.value.offset == len(replay_bytes([rec]))

    def test_truncated_final_frame(self):
        data = replay_bytes(_records(2))
        src = ReplaySource(io.BytesIO(data[:-3]))
        assert len(src.next_batch()) == 1
        with pytest.raises(FormatError):
            src.next_batch()

    def test_oversize_frame(self):
        src = ReplaySource(io.BytesIO(REPLAY_MAGIC + (MAX_FRAME + 1).to_bytes(4, "little")))
        with pytest.raises(FormatError):
            src.next_batch()

    def test_frame_length_disagrees(self):
        msg = encode_event(_records(1)[0])
        data = REPLAY_MAGIC + (len(msg) + 2).to_bytes(4, "little") + msg + b"\0\0"
        with pytest.raises(FormatError):
            ReplaySource(io.BytesIO(data)).next_batch()

    def test_wrong_file_magic(self):
        with pytest.raises(FormatError):
            ReplaySource(io.BytesIO(b"NOTREPLY" + b"\0" * 8))

    def test_missing_file(self, tmp_path):
        with pytest.raises(SourceIoError):
            open_replay(tmp_path / "nonexistent.rpl")
        with pytest.raises(InputError):
            open_replay(tmp_path / "nonexistent.rpl")

    def test_round_trip_across_read_boundaries(self):
        recs = _records(400, seed=5)
        src = ReplaySource(io.BytesIO(replay_bytes(recs)))
        src.read_size = 777
        assert _drain(src) == recs

    def test_batches_respect_max(self):
        src = ReplaySource(io.BytesIO(replay_bytes(_records(10))))
        assert len(src.next_batch(max_records=4)) == 4

    def test_prefilter_counts_skipped(self):
        recs = _records(200, seed=9)
        src = ReplaySource(io.BytesIO(replay_bytes(recs)))
        src.set_prefilter(lambda uid, kind: uid % 2 == 0)
        got = _drain(src)
        assert got == [r for r in recs if r.context.uid % 2 == 0]
        assert src.skipped == len(recs) - len(got)

    def test_prefiltered_frame_args_not_decoded(self):
        c = EventContext(1, 2, 2, 1, 1000, "x")
        rec = EventRecord(c, SyscallEnter(56), (Arg(ArgType.INT, 1),))
        bad = bytearray(encode_event(rec))
        bad[-5] = 9  # unknown argument type code
        good = encode_event(rec._replace(context=c._replace(uid=10050)))
        data = REPLAY_MAGIC
        for m in (bytes(bad), good):
            data += len(m).to_bytes(4, "little") + m
        src = ReplaySource(io.BytesIO(data))
        src.set_prefilter(lambda uid, kind: uid > 10000)
        assert [r.context.uid for r in src.next_batch()] == [10050] and src.skipped == 1
        with pytest.raises(FormatError):
            ReplaySource(io.BytesIO(data)).next_batch()

    def test_writer_counts(self):
        buf = io.BytesIO()
        w = ReplayWriter(buf)
        for r in _records(4):
            w.write(r)
        assert w.count == 4 and buf.getvalue().startswith(REPLAY_MAGIC)


class TestQueuedSource:
    def test_preserves_order(self):
        recs = _records(1500, seed=2)
        src = QueuedSource(ListSource(recs, batch_size=100), maxsize=2)
        try:
            assert _drain(src) == recs
        finally:
            src.close()

    def test_propagates_errors(self):
        data = replay_bytes(_records(3)) + b"\xff\xff"
        src = QueuedSource(ReplaySource(io.BytesIO(data)))
        try:
            assert len(src.next_batch()) == 3
            with pytest.raises(FormatError):
                src.next_batch()
        finally:
            src.close()

    def test_close_early(self):
        src = QueuedSource(ListSource(_records(50), batch_size=1), maxsize=1)
        src.next_batch()
        src.close()


class TestScenarios:
    def test_dex_example(self):
        path = "/data/user/0/ufD.wykyx.vlhvh/files/dex"
        trace = build_scenario(Scenario("dropper_dex", seed=0, path=path))
        writes = [(r.args[2].value, r.args[1].value) for r in trace.records
                  if r.kind == Kprobe(KPROBE_CATALOG["vfs_write"]) and r.args[0].value == path]
        assert first_four_oracle(writes) == b"dex\n"
        data = bytearray()
        for off, chunk in writes:
            data[off:off + len(chunk)] = chunk
        assert bytes(data) == trace.scenario.payload

    @pytest.mark.parametrize("name", [n for n in SCENARIO_NAMES if n in SCENARIO_MAGIC])
    def test_payload_starts_with_magic(self, name):
        s = Scenario(name, seed=3)
        assert s.payload.startswith(SCENARIO_MAGIC[name]) and len(s.payload) > 3000

    def test_privesc_uid_changes(self):
        s = Scenario("privesc", seed=4)
        recs = build_scenario(s).records
        app = [i for i, r in enumerate(recs) if r.context.pid == s.app_pid and r.context.uid == s.app_uid]
        root = [i for i, r in enumerate(recs) if r.context.pid == s.app_pid and r.context.uid == 0]
        assert app and root and min(app) < min(root)

    @pytest.mark.parametrize("name", SCENARIO_NAMES)
    def test_deterministic(self, name):
        a = replay_bytes(build_scenario(Scenario(name, seed=12)).records)
        b = replay_bytes(build_scenario(Scenario(name, seed=12)).records)
        assert a == b
        assert a != replay_bytes(build_scenario(Scenario(name, seed=13)).records)

    def test_timestamps_increase(self):
        recs = build_scenario(Scenario("dropper_elf", seed=1)).records
        ts = [r.context.timestamp_ns for r in recs]
        assert ts == sorted(ts) and len(set(ts)) == len(ts)

    def test_records_encode(self):
        for name in SCENARIO_NAMES:
            for r in build_scenario(Scenario(name)).records:
                assert decode_event(encode_event(r)) == r

    def test_unknown_scenario(self):
        with pytest.raises(InputError):
            Scenario("ransomware")

    def test_custom_payload_needs_magic(self):
        with pytest.raises(InputError):
            Scenario("dropper_elf", payload=b"MZ\x90\x00hello")

    def test_simulate_is_a_source(self):
        src = simulate_scenario(Scenario("benign", seed=1), batch_size=7)
        assert len(src.next_batch()) == 7


class TestProbePlan:
    def test_default_config(self):
        config = default_multilayer_config()
        res = shipped_snapshot().resolve(config)
        plan = emit_probe_plan(config, res.probes)
        assert plan.raw_syscall_entry and plan.raw_syscall_exit
        assert len(plan.kprobes) == 3 and len(plan.uprobes) == 54
        assert sum(u.kind == "api" for u in plan.uprobes) == 50
        assert check_plan(plan, res.address_map) == []
        assert plan.filter.mode is FilterMode.ALL_USER_APPS

    def test_only_vfs_write(self):
        plan = emit_probe_plan(HooksConfig((HookSpec.kprobe("vfs_write"),)), [])
        assert not plan.raw_syscall_entry and not plan.raw_syscall_exit
        assert plan.kprobes == ("vfs_write",) and plan.uprobes == ()
        assert dict(plan.kprobe_ids) == {"vfs_write": 2}

    def test_empty_config(self):
        assert emit_probe_plan(HooksConfig(), []) == ProbePlan()

    def test_syscall_numbers(self):
        plan = emit_probe_plan(HooksConfig((HookSpec.syscall("execve"), HookSpec.syscall("fork"))), [])
        assert dict(plan.syscalls) == {"execve": 221, "fork": None}

    def test_json_round_trip(self):
        import json
        config = default_multilayer_config()
        plan = emit_probe_plan(config, shipped_snapshot().resolve(config).probes)
        assert ProbePlan.from_document(json.loads(plan.to_json())) == plan

    def test_malformed_document(self):
        with pytest.raises(InputError):
            ProbePlan.from_document({"raw_syscalls": {}})


class TestLoadGenerator:
    def test_count_and_validity(self):
        msgs = list(generate_load(2000, seed=1))
        assert len(msgs) == 2000
        recs = [decode_event(m) for m in msgs]
        ts = [r.context.timestamp_ns for r in recs]
        assert ts == sorted(ts)
        assert {type(r.kind) for r in recs} >= {SyscallEnter, Kprobe, UserProbe}

    def test_no_header_write_forms_magic(self):
        for m in generate_load(3000, seed=2):
            r = decode_event(m)
            if type(r.kind) is Kprobe and r.args and r.args[2].value == 0:
                assert r.args[1].value[:1] == b"\x00"

    def test_deterministic(self):
        assert list(generate_load(300, seed=4)) == list(generate_load(300, seed=4))

    def test_write_load_replay(self, tmp_path):
        path = tmp_path / "load.rpl"
        assert write_load_replay(path, 1000, seed=1) == 1000
        with open_replay(path) as src:
            assert len(_drain(src)) == 1000
