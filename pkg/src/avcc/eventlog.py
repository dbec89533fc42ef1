"""Append-only audit log with deterministic replay.

One NDJSON line per entry, canonical JSON (sorted keys, no whitespace) so two
runs of the same scenario diff cleanly. Appends are serialized through one
writer lock and flushed to disk before returning.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from . import fsm, protocol


class LogKind(str, Enum):
    TRANSITION = "transition"
    COMMAND = "command"
    ACK = "ack"
    REQUEST = "request"
    SESSION = "session"
    TRANSCRIPT = "transcript"
    NOTE = "note"


class StorageError(Exception):
    pass


class ReplayDivergence(Exception):
    def __init__(self, entry_seq: int, reason: str):
        super().__init__(f"entry {entry_seq}: {reason}")
        self.entry_seq = entry_seq
        self.reason = reason


@dataclass(frozen=True)
class LogEntry:
    entry_seq: int
    at: int
    vehicle_id: Optional[str]
    kind: LogKind
    payload: dict

    def to_line(self) -> str:
        record = {
            "entry_seq": self.entry_seq,
            "at": self.at,
            "vehicle_id": self.vehicle_id,
            "kind": self.kind.value,
            "payload": self.payload,
        }
        try:
            return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)
        except (TypeError, ValueError) as e:
            raise StorageError(f"payload not canonicalizable: {e}") from None

    @classmethod
    def from_line(cls, line: str) -> "LogEntry":
        raw = json.loads(line)
        return cls(
            entry_seq=raw["entry_seq"],
            at=raw["at"],
            vehicle_id=raw["vehicle_id"],
            kind=LogKind(raw["kind"]),
            payload=raw["payload"],
        )


class EventLog:
    """Single-writer append log; optionally file-backed.

    Entries are retained in memory for inspection either way; with a path they
    are also written line-by-line and fsynced before append returns.
    """

    def __init__(self, path: Optional[str | Path] = None):
        self._lock = threading.Lock()
        self._entries: list[LogEntry] = []
        self._next_seq = 1
        self._path = Path(path) if path is not None else None
        self._file = open(self._path, "a", encoding="utf-8") if self._path else None

    def append(self, kind: LogKind, payload: dict, at: int, vehicle_id: Optional[str] = None) -> int:
        with self._lock:
            entry = LogEntry(entry_seq=self._next_seq, at=at, vehicle_id=vehicle_id, kind=kind, payload=payload)
            line = entry.to_line()  # canonicalize before consuming a seq
            self._next_seq += 1
            self._entries.append(entry)
            if self._file is not None:
                self._file.write(line + "\n")
                self._file.flush()
                os.fsync(self._file.fileno())
            return entry.entry_seq

    @property
    def entries(self) -> tuple[LogEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def __enter__(self) -> "EventLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_log(path: str | Path) -> list[LogEntry]:
    entries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                entries.append(LogEntry.from_line(line))
    return entries


def transition_payload(report: protocol.TransitionReport) -> dict:
    return report.to_fields()


@dataclass(frozen=True)
class FleetReplay:
    states: dict[str, fsm.VehicleState]
    applied: int


def replay(entries: Iterable[LogEntry], upto: Optional[int] = None) -> FleetReplay:
    """Re-derive per-vehicle states from Transition entries.

    Every logged transition is recomputed through the model with the logged
    event, context and profile; any disagreement with what was recorded (or
    with the tracked current state) raises ReplayDivergence at that entry.
    """
    states: dict[str, fsm.VehicleState] = {}
    profile = fsm.GENERIC
    applied = 0
    last_seq = 0
    for entry in entries:
        if upto is not None and entry.entry_seq > upto:
            break
        if entry.entry_seq <= last_seq:
            raise ReplayDivergence(entry.entry_seq, f"entry_seq not increasing after {last_seq}")
        last_seq = entry.entry_seq
        if entry.kind is LogKind.NOTE and "profile" in entry.payload:
            try:
                profile = fsm.get_profile(entry.payload["profile"])
            except fsm.UnknownProfile:
                raise ReplayDivergence(entry.entry_seq, f"unknown profile {entry.payload['profile']!r}") from None
            continue
        if entry.kind is not LogKind.TRANSITION:
            continue
        if not entry.vehicle_id:
            raise ReplayDivergence(entry.entry_seq, "transition without vehicle_id")
        try:
            report = protocol.TransitionReport.from_fields(entry.payload)
        except (protocol.EncodeError, ValueError, KeyError) as e:
            raise ReplayDivergence(entry.entry_seq, f"malformed transition payload: {e}") from None

        current = states.get(entry.vehicle_id, report.from_state)
        if current != report.from_state:
            raise ReplayDivergence(
                entry.entry_seq,
                f"{entry.vehicle_id} recorded from {report.from_state.to_wire()} but tracked {current.to_wire()}",
            )
        try:
            result = fsm.apply_event(report.from_state, report.event, report.ctx, profile)
        except fsm.TransitionError as e:
            raise ReplayDivergence(entry.entry_seq, f"model refuses logged transition: {e.code}") from None
        if result.next != report.to_state or result.effects != report.effects:
            raise ReplayDivergence(
                entry.entry_seq,
                f"model reaches {result.next.to_wire()} {[e.value for e in result.effects]}, "
                f"log records {report.to_state.to_wire()} {[e.value for e in report.effects]}",
            )
        states[entry.vehicle_id] = result.next
        applied += 1
    return FleetReplay(states=states, applied=applied)


def audit_pairing(entries: Iterable[LogEntry]) -> list[str]:
    """Ack/command pairing violations: acks must follow their command, 1:1."""
    problems = []
    commands_seen: set[int] = set()
    acked: set[int] = set()
    for entry in entries:
        if entry.kind is LogKind.COMMAND:
            msg_id = entry.payload.get("msg_id")
            if msg_id in commands_seen:
                problems.append(f"entry {entry.entry_seq}: duplicate command msg_id {msg_id}")
            commands_seen.add(msg_id)
        elif entry.kind is LogKind.ACK:
            ref = entry.payload.get("ref_msg_id")
            if ref not in commands_seen:
                problems.append(f"entry {entry.entry_seq}: ack for unseen command {ref}")
            elif ref in acked:
                problems.append(f"entry {entry.entry_seq}: second ack for command {ref}")
            acked.add(ref)
    unacked = commands_seen - acked
    for msg_id in sorted(x for x in unacked if x is not None):
        problems.append(f"command {msg_id} never acked")
    return problems


def normalized_lines(entries: Iterable[LogEntry]) -> list[str]:
    """Canonical lines with timestamps zeroed, for cross-run comparison."""
    out = []
    for entry in entries:
        stripped = LogEntry(entry.entry_seq, 0, entry.vehicle_id, entry.kind, entry.payload)
        out.append(stripped.to_line())
    return out


def behavioral_view(entries: Iterable[LogEntry]) -> list[str]:
    """Projection for cross-run diffs: drops seqs, timestamps, and message ids.

    Two runs that made the same decisions produce the same view even when one
    of them spent extra message ids on refused attempts.
    """
    out = []
    for entry in entries:
        payload = {k: v for k, v in entry.payload.items() if k not in ("msg_id", "ref_msg_id")}
        out.append(
            json.dumps(
                {"vehicle_id": entry.vehicle_id, "kind": entry.kind.value, "payload": payload},
                sort_keys=True,
                separators=(",", ":"),
            )
        )
    return out
