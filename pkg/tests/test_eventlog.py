"""Audit log: dense seqs, durability round-trip, replay as a model oracle."""

from __future__ import annotations

import json
import threading

import pytest

from avcc import fsm
from avcc.eventlog import (
    EventLog,
    FleetReplay,
    LogEntry,
    LogKind,
    ReplayDivergence,
    StorageError,
    audit_pairing,
    normalized_lines,
    read_log,
    replay,
)
from avcc.fsm import Event, EventKind, GuardContext, Role
from avcc.protocol import TransitionReport


def walk(vehicle_id: str, steps, profile=fsm.GENERIC, start=fsm.INITIAL):
    """Apply a list of (kind, actor, ctx) and yield transition payloads."""
    state = start
    for kind, actor, ctx in steps:
        event = Event(kind, actor)
        result = fsm.apply_event(state, event, ctx, profile)
        report = TransitionReport(event=event, ctx=ctx, from_state=state, to_state=result.next, effects=result.effects)
        yield report.to_fields()
        state = result.next


ATTACHED = GuardContext(operator_attached=True)
HEALTHY_STEPS = [
    (EventKind.PREPARE_VEHICLE, Role.FIELD_OPERATOR, GuardContext()),
    (EventKind.START_SERVICE, Role.SYSTEM, GuardContext()),
    (EventKind.ACTIVATE_ADS, Role.REMOTE_OPERATOR, ATTACHED),
    (EventKind.ENGAGE_AUTOMATION, Role.REMOTE_OPERATOR, ATTACHED),
    (EventKind.END_MONITORING, Role.REMOTE_OPERATOR, GuardContext()),
    (EventKind.TRIGGER_MRM, Role.ADS, GuardContext()),
]


def healthy_log(log: EventLog, vehicle_id="v1"):
    log.append(LogKind.NOTE, {"profile": "generic", "seed": 7}, at=0)
    t = 100
    for payload in walk(vehicle_id, HEALTHY_STEPS):
        log.append(LogKind.TRANSITION, payload, at=t, vehicle_id=vehicle_id)
        t += 100
    return log


def test_append_seqs_dense_from_one():
    log = EventLog()
    assert log.append(LogKind.NOTE, {"k": 1}, at=0) == 1
    assert log.append(LogKind.NOTE, {"k": 2}, at=1) == 2
    assert [e.entry_seq for e in log.entries] == [1, 2]


def test_concurrent_appends_get_distinct_consecutive_seqs():
    log = EventLog()
    results = []

    def worker(n):
        for i in range(50):
            results.append(log.append(LogKind.NOTE, {"n": n, "i": i}, at=0))

    threads = [threading.Thread(target=worker, args=(n,)) for n in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(results) == list(range(1, 401))
    assert [e.entry_seq for e in log.entries] == list(range(1, 401))


def test_malformed_payload_is_storage_error_and_consumes_nothing():
    log = EventLog()
    with pytest.raises(StorageError):
        log.append(LogKind.NOTE, {"bad": {1, 2}}, at=0)  # sets are not JSON
    with pytest.raises(StorageError):
        log.append(LogKind.NOTE, {"bad": float("nan")}, at=0)
    assert log.append(LogKind.NOTE, {"ok": True}, at=0) == 1


def test_file_round_trip(tmp_path):
    path = tmp_path / "run.ndjson"
    with EventLog(path) as log:
        healthy_log(log)
        written = log.entries
    back = read_log(path)
    assert list(back) == list(written)
    # canonical form: sorted keys, no spaces
    first_line = path.read_text().splitlines()[0]
    assert first_line == json.dumps(json.loads(first_line), sort_keys=True, separators=(",", ":"))


def test_replay_healthy_run_reaches_recorded_state():
    log = healthy_log(EventLog())
    result = replay(log.entries)
    assert result.applied == len(HEALTHY_STEPS)
    assert result.states == {"v1": fsm.ACTIVATED_MRC}


def test_replay_is_deterministic():
    log = healthy_log(EventLog())
    assert replay(log.entries) == replay(log.entries)


def test_replay_empty_log():
    assert replay([]) == FleetReplay(states={}, applied=0)


def test_replay_respects_upto():
    log = healthy_log(EventLog())
    partial = replay(log.entries, upto=3)  # note + two transitions
    assert partial.applied == 2
    assert partial.states == {"v1": fsm.DEACTIVATED_MRC}


def test_replay_flags_corrupted_target():
    log = healthy_log(EventLog())
    entries = list(log.entries)
    bad = entries[3]
    tampered = dict(bad.payload, to_state="unmonitored_automated_driving")
    entries[3] = LogEntry(bad.entry_seq, bad.at, bad.vehicle_id, bad.kind, tampered)
    with pytest.raises(ReplayDivergence) as exc:
        replay(entries)
    assert exc.value.entry_seq == bad.entry_seq


def test_replay_flags_broken_chain():
    log = healthy_log(EventLog())
    entries = [e for e in log.entries if e.entry_seq != 3]  # drop one transition
    with pytest.raises(ReplayDivergence):
        replay(entries)


def test_replay_enforces_profile_from_header():
    ctx = GuardContext(operator_attached=True)
    event = Event(EventKind.BEGIN_ALTERNATIVE_MANEUVER, Role.REMOTE_OPERATOR, fsm.remote_driving())
    result = fsm.apply_event(fsm.ACTIVATED_MRC, event, ctx, fsm.GENERIC)
    report = TransitionReport(event=event, ctx=ctx, from_state=fsm.ACTIVATED_MRC, to_state=result.next, effects=result.effects)
    entries = [
        LogEntry(1, 0, None, LogKind.NOTE, {"profile": "german"}),
        LogEntry(2, 1, "v1", LogKind.TRANSITION, report.to_fields()),
    ]
    with pytest.raises(ReplayDivergence) as exc:
        replay(entries)
    assert exc.value.entry_seq == 2
    # the same transition is fine under the generic header
    entries[0] = LogEntry(1, 0, None, LogKind.NOTE, {"profile": "generic"})
    assert replay(entries).applied == 1


def test_replay_rejects_nonmonotone_seq():
    log = healthy_log(EventLog())
    entries = list(log.entries)
    entries.append(entries[-1])
    with pytest.raises(ReplayDivergence):
        replay(entries)


def test_audit_pairing():
    entries = [
        LogEntry(1, 0, "v1", LogKind.COMMAND, {"msg_id": 10}),
        LogEntry(2, 1, "v1", LogKind.ACK, {"ref_msg_id": 10}),
        LogEntry(3, 2, "v1", LogKind.ACK, {"ref_msg_id": 11}),
        LogEntry(4, 3, "v1", LogKind.COMMAND, {"msg_id": 12}),
    ]
    problems = audit_pairing(entries)
    assert any("unseen command 11" in p for p in problems)
    assert any("command 12 never acked" in p for p in problems)
    assert audit_pairing(entries[:2]) == []


def test_normalized_lines_zero_timestamps():
    log = healthy_log(EventLog())
    lines = normalized_lines(log.entries)
    assert all('"at":0' in line for line in lines)
    assert len(lines) == len(log.entries)
