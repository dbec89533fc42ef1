"""Newline-delimited JSON wire protocol for vehicle and console links.

One message per line: UTF-8 JSON, `\\n` terminator, no `\\r`. Field order is
fixed (msg_id, seq, sent_at, vehicle_id, body) so traces diff cleanly. The
codec is pure; SessionValidator holds the only per-connection state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional

from .fsm import (
    ERROR_CODES,
    Effect,
    Event,
    EventKind,
    GuardContext,
    ManeuverMode,
    Role,
    TransitionError,
    TransitionResult,
    VehicleState,
)

MAX_U64 = 2**64 - 1

HEARTBEAT_PERIOD_MS = 500
HEARTBEAT_TIMEOUT_MS = 2000


class EncodeError(Exception):
    pass


class DecodeError(Exception):
    def __init__(self, position: int, reason: str):
        super().__init__(f"at {position}: {reason}")
        self.position = position
        self.reason = reason


class SeqRegression(Exception):
    pass


class DuplicateMsgId(Exception):
    pass


class LinkStatus(str, Enum):
    ALIVE = "alive"
    DEGRADED = "degraded"
    LOST = "lost"


def heartbeat_monitor(last_seen: float, now: float, timeout_ms: float = HEARTBEAT_TIMEOUT_MS) -> LinkStatus:
    """Classify link health from the age of the last message."""
    if now < last_seen:
        raise ValueError("now precedes last_seen")
    age = now - last_seen
    if age < timeout_ms / 2:
        return LinkStatus.ALIVE
    if age < timeout_ms:
        return LinkStatus.DEGRADED
    return LinkStatus.LOST


# --- body catalogue ----------------------------------------------------------


def _require(cond: bool, reason: str) -> None:
    if not cond:
        raise EncodeError(reason)


def _finite(value: float, name: str) -> None:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), f"{name} must be a number")
    _require(math.isfinite(value), f"{name} must be finite")


def _unit(value: float, name: str) -> None:
    _finite(value, name)
    _require(0.0 <= value <= 1.0, f"{name} must lie in [0, 1]")


def _signed_unit(value: float, name: str) -> None:
    _finite(value, name)
    _require(-1.0 <= value <= 1.0, f"{name} must lie in [-1, 1]")


@dataclass(frozen=True)
class Telemetry:
    state: VehicleState
    lat: float
    lon: float
    speed: float
    link_quality: float
    # optional guard visibility; older senders omit it
    trajectory_valid: Optional[bool] = None

    type = "telemetry"
    vehicle_scoped = True

    def validate(self) -> None:
        _finite(self.lat, "lat")
        _finite(self.lon, "lon")
        _finite(self.speed, "speed")
        _unit(self.link_quality, "link_quality")

    def to_fields(self) -> dict:
        fields = {
            "state": self.state.to_wire(),
            "lat": self.lat,
            "lon": self.lon,
            "speed": self.speed,
            "link_quality": self.link_quality,
        }
        if self.trajectory_valid is not None:
            fields["trajectory_valid"] = self.trajectory_valid
        return fields

    @classmethod
    def from_fields(cls, f: dict) -> "Telemetry":
        return cls(
            state=VehicleState.from_wire(_get_str(f, "state")),
            lat=_get_num(f, "lat"),
            lon=_get_num(f, "lon"),
            speed=_get_num(f, "speed"),
            link_quality=_get_num(f, "link_quality"),
            trajectory_valid=f.get("trajectory_valid") if isinstance(f.get("trajectory_valid"), bool) else None,
        )


@dataclass(frozen=True)
class InteractionRequest:
    reason: str

    type = "interaction_request"
    vehicle_scoped = True

    def validate(self) -> None:
        _require(isinstance(self.reason, str) and bool(self.reason), "reason must be a non-empty string")

    def to_fields(self) -> dict:
        return {"reason": self.reason}

    @classmethod
    def from_fields(cls, f: dict) -> "InteractionRequest":
        return cls(reason=_get_str(f, "reason"))


@dataclass(frozen=True)
class MonitoringRequest:
    origin: Role
    reason: str = ""

    type = "monitoring_request"
    vehicle_scoped = True

    def validate(self) -> None:
        _require(self.origin in (Role.ADS, Role.FLEET_MANAGER), "origin must be ads or fleet_manager")

    def to_fields(self) -> dict:
        return {"origin": self.origin.value, "reason": self.reason}

    @classmethod
    def from_fields(cls, f: dict) -> "MonitoringRequest":
        return cls(origin=_get_enum(f, "origin", Role), reason=str(f.get("reason", "")))


@dataclass(frozen=True)
class GuardOverride:
    """Partial guard context sent with a command; None fields stay agent-live."""

    trajectory_valid: Optional[bool] = None
    mrc_reason_remaining: Optional[bool] = None
    operator_attached: Optional[bool] = None
    link_quality: Optional[float] = None
    ads_functions_available: Optional[bool] = None

    FIELDS = ("trajectory_valid", "mrc_reason_remaining", "operator_attached", "link_quality", "ads_functions_available")

    def merge(self, ctx: GuardContext) -> GuardContext:
        return GuardContext(
            trajectory_valid=self.trajectory_valid if self.trajectory_valid is not None else ctx.trajectory_valid,
            mrc_reason_remaining=self.mrc_reason_remaining if self.mrc_reason_remaining is not None else ctx.mrc_reason_remaining,
            operator_attached=self.operator_attached if self.operator_attached is not None else ctx.operator_attached,
            link_quality=self.link_quality if self.link_quality is not None else ctx.link_quality,
            ads_functions_available=self.ads_functions_available if self.ads_functions_available is not None else ctx.ads_functions_available,
        )

    def to_fields(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS if getattr(self, name) is not None}

    @classmethod
    def from_fields(cls, f: dict) -> "GuardOverride":
        return cls(**{name: f[name] for name in cls.FIELDS if name in f})


def _event_to_fields(event: Event) -> dict:
    out: dict[str, Any] = {"kind": event.kind.value, "actor": event.actor.value}
    if event.mode is not None:
        out["mode"] = event.mode.to_wire()
    return out


def _event_from_fields(f: dict) -> Event:
    mode_text = f.get("mode")
    mode = ManeuverMode.from_wire(mode_text) if mode_text is not None else None
    return Event(kind=_get_enum(f, "kind", EventKind), actor=_get_enum(f, "actor", Role), mode=mode)


@dataclass(frozen=True)
class Command:
    event: Event
    ctx_override: Optional[GuardOverride] = None

    type = "command"
    vehicle_scoped = True

    def validate(self) -> None:
        if self.ctx_override is not None and self.ctx_override.link_quality is not None:
            _unit(self.ctx_override.link_quality, "ctx_override.link_quality")

    def to_fields(self) -> dict:
        out: dict[str, Any] = {"event": _event_to_fields(self.event)}
        if self.ctx_override is not None:
            out["ctx_override"] = self.ctx_override.to_fields()
        return out

    @classmethod
    def from_fields(cls, f: dict) -> "Command":
        override = GuardOverride.from_fields(f["ctx_override"]) if "ctx_override" in f else None
        return cls(event=_event_from_fields(_get_obj(f, "event")), ctx_override=override)


@dataclass(frozen=True)
class CommandAck:
    """Outcome of one command: the reached state or the refusal, never both."""

    ref_msg_id: int
    ok: bool
    next: Optional[VehicleState] = None
    effects: tuple[Effect, ...] = ()
    error: Optional[str] = None
    detail: str = ""

    type = "command_ack"
    vehicle_scoped = True

    @classmethod
    def success(cls, ref_msg_id: int, result: TransitionResult) -> "CommandAck":
        return cls(ref_msg_id=ref_msg_id, ok=True, next=result.next, effects=result.effects)

    @classmethod
    def refusal(cls, ref_msg_id: int, error: TransitionError | str, detail: str = "") -> "CommandAck":
        if isinstance(error, TransitionError):
            return cls(ref_msg_id=ref_msg_id, ok=False, error=error.code, detail=error.detail)
        return cls(ref_msg_id=ref_msg_id, ok=False, error=error, detail=detail)

    def validate(self) -> None:
        _require(isinstance(self.ref_msg_id, int) and 0 <= self.ref_msg_id <= MAX_U64, "ref_msg_id out of range")
        if self.ok:
            _require(self.next is not None and self.error is None, "ok ack carries next and no error")
        else:
            _require(self.next is None and bool(self.error), "refusal ack carries error and no next")

    def to_error(self) -> Optional[TransitionError]:
        if self.ok or self.error is None:
            return None
        cls = ERROR_CODES.get(self.error)
        if cls is None:
            return TransitionError(self.detail or self.error)
        if cls.code == "guard_failed":
            return cls(self.detail)
        return cls(self.detail)

    def to_fields(self) -> dict:
        out: dict[str, Any] = {"ref_msg_id": self.ref_msg_id, "ok": self.ok}
        if self.ok:
            out["next"] = self.next.to_wire()
            out["effects"] = [e.value for e in self.effects]
        else:
            out["error"] = self.error
            out["detail"] = self.detail
        return out

    @classmethod
    def from_fields(cls, f: dict) -> "CommandAck":
        ok = _get_bool(f, "ok")
        if ok:
            return cls(
                ref_msg_id=_get_int(f, "ref_msg_id"),
                ok=True,
                next=VehicleState.from_wire(_get_str(f, "next")),
                effects=tuple(Effect(e) for e in f.get("effects", [])),
            )
        return cls(
            ref_msg_id=_get_int(f, "ref_msg_id"),
            ok=False,
            error=_get_str(f, "error"),
            detail=str(f.get("detail", "")),
        )


@dataclass(frozen=True)
class DriveFrame:
    steering: float
    throttle: float
    brake: float
    abort: bool = False

    type = "drive_frame"
    vehicle_scoped = True

    def validate(self) -> None:
        _signed_unit(self.steering, "steering")
        _signed_unit(self.throttle, "throttle")
        _unit(self.brake, "brake")
        if self.abort:
            _require(self.steering == 0.0 and self.throttle == 0.0 and self.brake == 0.0, "abort frame must be all-zero")

    def to_fields(self) -> dict:
        return {"steering": self.steering, "throttle": self.throttle, "brake": self.brake, "abort": self.abort}

    @classmethod
    def from_fields(cls, f: dict) -> "DriveFrame":
        return cls(
            steering=_get_num(f, "steering"),
            throttle=_get_num(f, "throttle"),
            brake=_get_num(f, "brake"),
            abort=bool(f.get("abort", False)),
        )


@dataclass(frozen=True)
class ManeuverOption:
    option_id: int
    descriptor: str
    viable: bool
    requires_odd_exit: bool = False

    def to_fields(self) -> dict:
        return {
            "option_id": self.option_id,
            "descriptor": self.descriptor,
            "viable": self.viable,
            "requires_odd_exit": self.requires_odd_exit,
        }

    @classmethod
    def from_fields(cls, f: dict) -> "ManeuverOption":
        return cls(
            option_id=_get_int(f, "option_id"),
            descriptor=_get_str(f, "descriptor"),
            viable=_get_bool(f, "viable"),
            requires_odd_exit=bool(f.get("requires_odd_exit", False)),
        )


@dataclass(frozen=True)
class ClassificationQuery:
    query_id: str
    subject: str

    def to_fields(self) -> dict:
        return {"query_id": self.query_id, "subject": self.subject}

    @classmethod
    def from_fields(cls, f: dict) -> "ClassificationQuery":
        return cls(query_id=_get_str(f, "query_id"), subject=_get_str(f, "subject"))


@dataclass(frozen=True)
class ManeuverProposal:
    options: tuple[ManeuverOption, ...]
    classification_query: Optional[ClassificationQuery] = None

    type = "maneuver_proposal"
    vehicle_scoped = True

    def validate(self) -> None:
        ids = [o.option_id for o in self.options]
        _require(ids == list(range(len(ids))), "option ids must be dense from 0")

    def to_fields(self) -> dict:
        out: dict[str, Any] = {"options": [o.to_fields() for o in self.options]}
        if self.classification_query is not None:
            out["classification_query"] = self.classification_query.to_fields()
        return out

    @classmethod
    def from_fields(cls, f: dict) -> "ManeuverProposal":
        query = f.get("classification_query")
        return cls(
            options=tuple(ManeuverOption.from_fields(o) for o in _get_list(f, "options")),
            classification_query=ClassificationQuery.from_fields(query) if query is not None else None,
        )


@dataclass(frozen=True)
class ManeuverDecision:
    selected: Optional[int]  # None rejects every option
    confirm_odd_exit: bool = False

    type = "maneuver_decision"
    vehicle_scoped = True

    def validate(self) -> None:
        if self.selected is not None:
            _require(isinstance(self.selected, int) and not isinstance(self.selected, bool) and self.selected >= 0, "selected must be a nonnegative index")

    def to_fields(self) -> dict:
        return {"selected": self.selected, "confirm_odd_exit": self.confirm_odd_exit}

    @classmethod
    def from_fields(cls, f: dict) -> "ManeuverDecision":
        selected = f.get("selected")
        if selected is not None and (not isinstance(selected, int) or isinstance(selected, bool)):
            raise EncodeError("selected must be an integer or null")
        return cls(selected=selected, confirm_odd_exit=bool(f.get("confirm_odd_exit", False)))


@dataclass(frozen=True)
class ObjectClassification:
    query_id: str
    label: str

    type = "object_classification"
    vehicle_scoped = True

    def validate(self) -> None:
        _require(bool(self.label), "label must be non-empty")

    def to_fields(self) -> dict:
        return {"query_id": self.query_id, "label": self.label}

    @classmethod
    def from_fields(cls, f: dict) -> "ObjectClassification":
        return cls(query_id=_get_str(f, "query_id"), label=_get_str(f, "label"))


@dataclass(frozen=True)
class Heartbeat:
    type = "heartbeat"
    vehicle_scoped = False

    def validate(self) -> None:
        pass

    def to_fields(self) -> dict:
        return {}

    @classmethod
    def from_fields(cls, f: dict) -> "Heartbeat":
        return cls()


@dataclass(frozen=True)
class Hello:
    """Connection handshake: who is talking and in which state/profile."""

    profile: str
    state: VehicleState

    type = "hello"
    vehicle_scoped = True

    def validate(self) -> None:
        _require(bool(self.profile), "profile must be non-empty")

    def to_fields(self) -> dict:
        return {"profile": self.profile, "state": self.state.to_wire()}

    @classmethod
    def from_fields(cls, f: dict) -> "Hello":
        return cls(profile=_get_str(f, "profile"), state=VehicleState.from_wire(_get_str(f, "state")))


@dataclass(frozen=True, eq=True)
class TransitionReport:
    """A transition the vehicle applied, with everything replay needs.

    Maneuver exits attach the finished transcript so the receiver can persist
    it before acknowledging the state change.
    """

    event: Event
    ctx: GuardContext
    from_state: VehicleState
    to_state: VehicleState
    effects: tuple[Effect, ...] = ()
    transcript: Optional[dict] = None

    type = "transition_report"
    vehicle_scoped = True

    def validate(self) -> None:
        pass

    def to_fields(self) -> dict:
        out: dict[str, Any] = {
            "event": _event_to_fields(self.event),
            "ctx": {
                "trajectory_valid": self.ctx.trajectory_valid,
                "mrc_reason_remaining": self.ctx.mrc_reason_remaining,
                "operator_attached": self.ctx.operator_attached,
                "link_quality": self.ctx.link_quality,
                "ads_functions_available": self.ctx.ads_functions_available,
            },
            "from_state": self.from_state.to_wire(),
            "to_state": self.to_state.to_wire(),
            "effects": [e.value for e in self.effects],
        }
        if self.transcript is not None:
            out["transcript"] = self.transcript
        return out

    @classmethod
    def from_fields(cls, f: dict) -> "TransitionReport":
        ctx_fields = _get_obj(f, "ctx")
        return cls(
            event=_event_from_fields(_get_obj(f, "event")),
            ctx=GuardContext(
                trajectory_valid=_get_bool(ctx_fields, "trajectory_valid"),
                mrc_reason_remaining=_get_bool(ctx_fields, "mrc_reason_remaining"),
                operator_attached=_get_bool(ctx_fields, "operator_attached"),
                link_quality=_get_num(ctx_fields, "link_quality"),
                ads_functions_available=_get_bool(ctx_fields, "ads_functions_available"),
            ),
            from_state=VehicleState.from_wire(_get_str(f, "from_state")),
            to_state=VehicleState.from_wire(_get_str(f, "to_state")),
            effects=tuple(Effect(e) for e in f.get("effects", [])),
            transcript=f.get("transcript"),
        )


MessageBody = (
    Telemetry
    | InteractionRequest
    | MonitoringRequest
    | Command
    | CommandAck
    | DriveFrame
    | ManeuverProposal
    | ManeuverDecision
    | Heartbeat
    | Hello
    | ObjectClassification
    | TransitionReport
)

BODY_TYPES: dict[str, type] = {
    cls.type: cls
    for cls in (
        Telemetry,
        InteractionRequest,
        MonitoringRequest,
        Command,
        CommandAck,
        DriveFrame,
        ManeuverProposal,
        ManeuverDecision,
        Heartbeat,
        Hello,
        ObjectClassification,
        TransitionReport,
    )
}


# --- field readers shared by from_fields implementations ---------------------


def _get(f: dict, name: str) -> Any:
    if name not in f:
        raise EncodeError(f"missing field {name}")
    return f[name]


def _get_str(f: dict, name: str) -> str:
    v = _get(f, name)
    if not isinstance(v, str):
        raise EncodeError(f"{name} must be a string")
    return v


def _get_num(f: dict, name: str) -> float:
    v = _get(f, name)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise EncodeError(f"{name} must be a number")
    return v


def _get_int(f: dict, name: str) -> int:
    v = _get(f, name)
    if isinstance(v, bool) or not isinstance(v, int):
        raise EncodeError(f"{name} must be an integer")
    return v


def _get_bool(f: dict, name: str) -> bool:
    v = _get(f, name)
    if not isinstance(v, bool):
        raise EncodeError(f"{name} must be a boolean")
    return v


def _get_enum(f: dict, name: str, enum_cls: type) -> Any:
    v = _get_str(f, name)
    try:
        return enum_cls(v)
    except ValueError:
        raise EncodeError(f"{name} has unknown value {v!r}") from None


def _get_obj(f: dict, name: str) -> dict:
    v = _get(f, name)
    if not isinstance(v, dict):
        raise EncodeError(f"{name} must be an object")
    return v


def _get_list(f: dict, name: str) -> list:
    v = _get(f, name)
    if not isinstance(v, list):
        raise EncodeError(f"{name} must be an array")
    return v


# --- envelope ----------------------------------------------------------------


@dataclass(frozen=True)
class Message:
    msg_id: int
    seq: int
    sent_at: int
    vehicle_id: str
    body: MessageBody

    def validate(self) -> None:
        for name in ("msg_id", "seq", "sent_at"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v <= MAX_U64:
                raise EncodeError(f"{name} must be an unsigned 64-bit integer")
        if not isinstance(self.vehicle_id, str):
            raise EncodeError("vehicle_id must be a string")
        if self.body.vehicle_scoped and not self.vehicle_id:
            raise EncodeError(f"{self.body.type} requires a vehicle_id")
        self.body.validate()


def encode(msg: Message) -> bytes:
    """One line of UTF-8 JSON, newline-terminated, fixed field order."""
    msg.validate()
    payload = {
        "msg_id": msg.msg_id,
        "seq": msg.seq,
        "sent_at": msg.sent_at,
        "vehicle_id": msg.vehicle_id,
        "body": {"type": msg.body.type, **msg.body.to_fields()},
    }
    try:
        text = json.dumps(payload, separators=(",", ":"), allow_nan=False)
    except ValueError as e:
        raise EncodeError(str(e)) from None
    return text.encode("utf-8") + b"\n"


def decode(data: bytes | str) -> Message:
    """Inverse of encode; unknown body types rejected, unknown fields ignored."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise DecodeError(e.start, "invalid UTF-8") from None
    else:
        text = data
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise DecodeError(e.pos, f"bad JSON: {e.msg}") from None
    if not isinstance(raw, dict):
        raise DecodeError(0, "top level must be an object")

    body_raw = raw.get("body")
    if not isinstance(body_raw, dict) or "type" not in body_raw:
        raise DecodeError(0, "missing body.type")
    body_type = body_raw["type"]
    body_cls = BODY_TYPES.get(body_type)
    if body_cls is None:
        raise DecodeError(0, f"unknown body type {body_type!r}")

    try:
        body = body_cls.from_fields(body_raw)
        msg = Message(
            msg_id=_get_int(raw, "msg_id"),
            seq=_get_int(raw, "seq"),
            sent_at=_get_int(raw, "sent_at"),
            vehicle_id=_get_str(raw, "vehicle_id"),
            body=body,
        )
        msg.validate()
    except EncodeError as e:
        raise DecodeError(0, str(e)) from None
    except ValueError as e:
        raise DecodeError(0, str(e)) from None
    return msg


def decode_lines(data: bytes) -> list[Message]:
    """Decode a buffer of complete newline-terminated lines."""
    out = []
    for line in data.splitlines():
        if line.strip():
            out.append(decode(line))
    return out


class SessionValidator:
    """Per-connection ordering rules: seq strictly increases, msg_id unique."""

    def __init__(self) -> None:
        self.last_seq = 0
        self._seen_ids: set[int] = set()

    def admit(self, msg: Message) -> Message:
        if msg.seq <= self.last_seq:
            raise SeqRegression(f"seq {msg.seq} after {self.last_seq}")
        if msg.msg_id in self._seen_ids:
            raise DuplicateMsgId(f"msg_id {msg.msg_id} already seen")
        self.last_seq = msg.seq
        self._seen_ids.add(msg.msg_id)
        return msg


class MessageFactory:
    """Stamps outgoing envelopes with deterministic ids and seqs."""

    def __init__(self, vehicle_id: str = "", id_prefix: int = 0):
        self.vehicle_id = vehicle_id
        self._next = 1
        self._id_prefix = id_prefix
        self._seq = 0

    def build(self, body: MessageBody, sent_at: int, vehicle_id: Optional[str] = None) -> Message:
        self._seq += 1
        msg_id = self._id_prefix * 1_000_000 + self._next
        self._next += 1
        return Message(
            msg_id=msg_id,
            seq=self._seq,
            sent_at=sent_at,
            vehicle_id=self.vehicle_id if vehicle_id is None else vehicle_id,
            body=body,
        )
