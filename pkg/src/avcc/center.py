"""Control-center core: registry, request queue, operator sessions, audit.

Transport-agnostic: a pluggable `transport` callable carries one Message to a
vehicle. A synchronous transport (headless harness) returns the reply burst;
a networked transport returns None and the reader thread ingests replies, in
which case issue_command blocks on the pending ack. All registry mutation is
serialized through one reentrant lock; the lock is never held while waiting
on a vehicle.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from . import fsm
from .eventlog import EventLog, LogKind
from .fsm import (
    DEFAULT_LINK_THRESHOLD,
    Effect,
    Event,
    EventKind,
    GuardContext,
    LegalProfile,
    ManeuverMode,
    Role,
    StateKind,
    VehicleState,
)
from .protocol import (
    Command,
    CommandAck,
    DriveFrame,
    GuardOverride,
    Heartbeat,
    Hello,
    InteractionRequest,
    LinkStatus,
    ManeuverDecision,
    ManeuverProposal,
    Message,
    MessageFactory,
    MonitoringRequest,
    ObjectClassification,
    Telemetry,
    TransitionReport,
    heartbeat_monitor,
)

DEFAULT_TELEMETRY_GAP_S = 3.0
DEFAULT_ACK_TIMEOUT_S = 5.0


class CenterError(Exception):
    code = "center_error"


class DuplicateVehicle(CenterError):
    code = "duplicate_vehicle"


class UnknownVehicle(CenterError):
    code = "unknown_vehicle"


class VehicleBusy(CenterError):
    code = "vehicle_busy"


class OperatorBusy(CenterError):
    code = "operator_busy"


class UnknownRequest(CenterError):
    code = "unknown_request"


class NoSession(CenterError):
    code = "no_session"


class ReleaseRefusedMidManeuver(CenterError):
    code = "release_refused_mid_maneuver"


class CommandTimeout(CenterError):
    code = "command_timeout"


class RequestKind(str, Enum):
    MRM = "mrm"
    MONITORING = "monitoring"
    SERVICE_START = "service_start"

    @property
    def priority(self) -> int:
        return {"mrm": 0, "monitoring": 1, "service_start": 2}[self.value]


class RequestStatus(str, Enum):
    OPEN = "open"
    CLAIMED = "claimed"
    RESOLVED = "resolved"


@dataclass
class FleetRequest:
    request_id: str
    vehicle_id: str
    kind: RequestKind
    origin: Role
    reason: str
    created_at: float
    status: RequestStatus = RequestStatus.OPEN
    session_id: Optional[str] = None
    supersedes: Optional[str] = None

    @property
    def priority(self) -> int:
        return self.kind.priority

    def to_view(self) -> dict:
        return {
            "request_id": self.request_id,
            "vehicle_id": self.vehicle_id,
            "kind": self.kind.value,
            "origin": self.origin.value,
            "reason": self.reason,
            "priority": self.priority,
            "created_at": self.created_at,
            "status": self.status.value,
            "session_id": self.session_id,
        }


class RoleOrigin(str, Enum):
    REMOTE_OPERATOR = "remote_operator"
    FLEET_MANAGER_ELEVATED = "fleet_manager_elevated"


@dataclass
class OperatorSession:
    session_id: str
    operator_id: str
    role_origin: RoleOrigin
    vehicle_id: str
    started_at: float
    ended_at: Optional[float] = None
    request_id: Optional[str] = None

    @property
    def open(self) -> bool:
        return self.ended_at is None

    def to_view(self) -> dict:
        return {
            "session_id": self.session_id,
            "operator_id": self.operator_id,
            "role_origin": self.role_origin.value,
            "vehicle_id": self.vehicle_id,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "request_id": self.request_id,
        }


@dataclass
class VehicleRecord:
    vehicle_id: str
    profile_name: str
    last_state: VehicleState
    registered_at: float
    last_seen: float
    last_telemetry: Optional[Telemetry] = None
    pending_proposal: Optional[ManeuverProposal] = None
    needs_operator: bool = False
    auto_start_pending: bool = False
    anomaly_flags: set[str] = field(default_factory=set)
    desyncs: int = 0

    def link(self, now: float) -> LinkStatus:
        return heartbeat_monitor(self.last_seen * 1000.0, now * 1000.0)

    def to_view(self, now: float) -> dict:
        t = self.last_telemetry
        return {
            "vehicle_id": self.vehicle_id,
            "profile": self.profile_name,
            "state": self.last_state.to_wire(),
            "link": self.link(now).value,
            "link_quality": t.link_quality if t else None,
            "lat": t.lat if t else None,
            "lon": t.lon if t else None,
            "speed": t.speed if t else None,
            "needs_operator": self.needs_operator,
            "anomaly_flags": sorted(self.anomaly_flags),
            "last_seen": self.last_seen,
        }


# Transport: deliver one message to a vehicle. Returns the synchronous reply
# burst, or None when replies arrive out-of-band through ingest().
Transport = Callable[[str, Message], Optional[list[Message]]]


class ControlCenter:
    def __init__(
        self,
        profile: LegalProfile = fsm.GENERIC,
        *,
        log: Optional[EventLog] = None,
        transport: Optional[Transport] = None,
        auto_registration: bool = False,
        fm_intervention: bool = False,
        link_threshold: float = DEFAULT_LINK_THRESHOLD,
        telemetry_gap_s: float = DEFAULT_TELEMETRY_GAP_S,
        ack_timeout_s: float = DEFAULT_ACK_TIMEOUT_S,
        async_kicks: bool = False,
    ):
        self.profile = profile
        self.log = log if log is not None else EventLog()
        self.transport = transport
        self.auto_registration = auto_registration
        self.fm_intervention = fm_intervention
        self.link_threshold = link_threshold
        self.telemetry_gap_s = telemetry_gap_s
        self.ack_timeout_s = ack_timeout_s
        # over a networked transport the registration kick must not block the
        # reader that will deliver its own ack; headless keeps it inline
        self.async_kicks = async_kicks

        self._lock = threading.RLock()
        self.vehicles: dict[str, VehicleRecord] = {}
        self.requests: dict[str, FleetRequest] = {}
        self.sessions: dict[str, OperatorSession] = {}
        self._factories: dict[str, MessageFactory] = {}
        self._next_request = 1
        self._next_session = 1
        self._next_factory_prefix = 9000
        self._pending: dict[int, threading.Event] = {}
        self._acks: dict[int, CommandAck] = {}
        self._listeners: list[Callable[[Message], None]] = []
        self.desync_log: list[str] = []

    # --- ids ----------------------------------------------------------------

    def _new_request_id(self) -> str:
        rid = f"r{self._next_request:04d}"
        self._next_request += 1
        return rid

    def _new_session_id(self) -> str:
        sid = f"s{self._next_session:04d}"
        self._next_session += 1
        return sid

    def _factory_for(self, vehicle_id: str) -> MessageFactory:
        factory = self._factories.get(vehicle_id)
        if factory is None:
            factory = MessageFactory(vehicle_id=vehicle_id, id_prefix=self._next_factory_prefix)
            self._next_factory_prefix += 1
            self._factories[vehicle_id] = factory
        return factory

    def _ms(self, now: float) -> int:
        return int(round(now * 1000))

    # --- stream fan-out ---------------------------------------------------------

    def add_listener(self, listener: Callable[[Message], None]) -> None:
        with self._lock:
            self._listeners.append(listener)

    def remove_listener(self, listener: Callable[[Message], None]) -> None:
        with self._lock:
            if listener in self._listeners:
                self._listeners.remove(listener)

    def _broadcast(self, msg: Message) -> None:
        for listener in list(self._listeners):
            listener(msg)

    # --- registration and ingest ---------------------------------------------------

    def register_vehicle(self, vehicle_id: str, profile_name: str, state: VehicleState, now: float) -> VehicleRecord:
        with self._lock:
            if vehicle_id in self.vehicles:
                raise DuplicateVehicle(vehicle_id)
            record = VehicleRecord(
                vehicle_id=vehicle_id,
                profile_name=profile_name,
                last_state=state,
                registered_at=now,
                last_seen=now,
            )
            self.vehicles[vehicle_id] = record
            if profile_name != self.profile.name:
                record.anomaly_flags.add("profile_mismatch")
                self.log.append(
                    LogKind.NOTE,
                    {"profile_mismatch": {"vehicle": profile_name, "center": self.profile.name}},
                    at=self._ms(now),
                    vehicle_id=vehicle_id,
                )
        if self.auto_registration:
            # connection test skipped; the kick waits until the connect burst
            # settles so the audit log keeps wire order
            record.auto_start_pending = True
        elif state.kind in (StateKind.INITIAL, StateKind.PREPARED):
            # vehicles reconnecting mid-service have nothing to start
            self._open_request(vehicle_id, RequestKind.SERVICE_START, Role.ADS, "registration", now)
        return record

    def _open_request(
        self,
        vehicle_id: str,
        kind: RequestKind,
        origin: Role,
        reason: str,
        now: float,
        supersedes: Optional[str] = None,
    ) -> FleetRequest:
        with self._lock:
            request = FleetRequest(
                request_id=self._new_request_id(),
                vehicle_id=vehicle_id,
                kind=kind,
                origin=origin,
                reason=reason,
                created_at=now,
                supersedes=supersedes,
            )
            self.requests[request.request_id] = request
            self.log.append(LogKind.REQUEST, request.to_view(), at=self._ms(now), vehicle_id=vehicle_id)
            return request

    def ingest(self, messages: list[Message], now: float) -> None:
        for msg in messages:
            self._ingest_one(msg, now)
        self._auto_start_sweep(now)

    def _auto_start_sweep(self, now: float) -> None:
        due = []
        with self._lock:
            for record in self.vehicles.values():
                if not record.auto_start_pending:
                    continue
                if record.last_state == fsm.PREPARED:
                    record.auto_start_pending = False
                    due.append(record.vehicle_id)
                elif record.last_state != fsm.INITIAL:
                    record.auto_start_pending = False  # already past the kick point
        for vehicle_id in due:
            event = Event(EventKind.START_SERVICE, Role.SYSTEM)
            if self.async_kicks:
                threading.Thread(target=self.command_vehicle, args=(vehicle_id, event, now), daemon=True).start()
            else:
                self.command_vehicle(vehicle_id, event, now)

    def _ingest_one(self, msg: Message, now: float) -> None:
        body = msg.body
        if isinstance(body, Hello):
            self.register_vehicle(msg.vehicle_id, body.profile, body.state, now)
            self._broadcast(msg)
            return
        with self._lock:
            record = self.vehicles.get(msg.vehicle_id)
            if record is None and msg.vehicle_id:
                # traffic before hello: track it but flag the gap
                record = VehicleRecord(
                    vehicle_id=msg.vehicle_id,
                    profile_name="",
                    last_state=fsm.INITIAL,
                    registered_at=now,
                    last_seen=now,
                )
                record.anomaly_flags.add("unregistered_traffic")
                self.vehicles[msg.vehicle_id] = record
            if record is not None:
                record.last_seen = now

            if isinstance(body, Telemetry):
                record.last_telemetry = body
            elif isinstance(body, TransitionReport):
                self._ingest_report(record, body, now)
            elif isinstance(body, InteractionRequest):
                record.needs_operator = True
                self._open_request(msg.vehicle_id, RequestKind.MRM, Role.ADS, body.reason, now)
            elif isinstance(body, MonitoringRequest):
                self._open_request(msg.vehicle_id, RequestKind.MONITORING, body.origin, body.reason or "monitoring", now)
            elif isinstance(body, CommandAck):
                self._ingest_ack(record, body, now)
            elif isinstance(body, ManeuverProposal):
                record.pending_proposal = body
            elif isinstance(body, Heartbeat):
                pass
        self._broadcast(msg)

    def _ingest_report(self, record: VehicleRecord, report: TransitionReport, now: float) -> None:
        if record.last_state != report.from_state:
            record.desyncs += 1
            record.anomaly_flags.add("state_mismatch")
            self.desync_log.append(
                f"{record.vehicle_id}: report from {report.from_state.to_wire()}, center saw {record.last_state.to_wire()}"
            )
        if report.transcript is not None:
            # the finished maneuver must be on disk before its exit transition
            self.log.append(LogKind.TRANSCRIPT, report.transcript, at=self._ms(now), vehicle_id=record.vehicle_id)
            record.pending_proposal = None
        self.log.append(LogKind.TRANSITION, report.to_fields(), at=self._ms(now), vehicle_id=record.vehicle_id)
        record.last_state = report.to_state
        for effect in report.effects:
            if effect is Effect.NOTIFY_FLEET_MANAGER:
                self.log.append(
                    LogKind.NOTE,
                    {"fleet_manager_notified": record.vehicle_id, "event": report.event.kind.value},
                    at=self._ms(now),
                    vehicle_id=record.vehicle_id,
                )
            elif effect is Effect.REQUIRE_OPERATOR_ATTACH:
                record.needs_operator = True
        self._after_state_change(record, now)

    def _ingest_ack(self, record: VehicleRecord, ack: CommandAck, now: float) -> None:
        self.log.append(LogKind.ACK, ack.to_fields(), at=self._ms(now), vehicle_id=record.vehicle_id)
        self._acks[ack.ref_msg_id] = ack
        waiter = self._pending.pop(ack.ref_msg_id, None)
        if waiter is not None:
            waiter.set()
        # state is updated by the transition report that precedes the ack;
        # a success ack disagreeing with it means the mirror slipped
        if ack.ok and record.last_state != ack.next:
            record.desyncs += 1
            record.anomaly_flags.add("state_mismatch")
            self.desync_log.append(
                f"{record.vehicle_id}: ack next {ack.next.to_wire()}, center saw {record.last_state.to_wire()}"
            )

    def _after_state_change(self, record: VehicleRecord, now: float) -> None:
        session = self.session_for_vehicle(record.vehicle_id)
        if record.last_state.kind is StateKind.UNMONITORED_AUTOMATED_DRIVING and session is not None:
            # ending monitoring ends the interaction: the vehicle drives on alone
            self._close_session(session, now)
        if session is not None and record.last_state.kind in (
            StateKind.MONITORED_AUTOMATED_DRIVING,
            StateKind.ALTERNATIVE_MANEUVER_ACTIVE,
        ):
            record.needs_operator = False

    # --- queue and sessions -------------------------------------------------------

    def open_requests(self) -> list[FleetRequest]:
        with self._lock:
            pending = [r for r in self.requests.values() if r.status is RequestStatus.OPEN]
            pending.sort(key=lambda r: (r.priority, r.created_at, r.request_id))
            return pending

    def session_for_vehicle(self, vehicle_id: str) -> Optional[OperatorSession]:
        with self._lock:
            for session in self.sessions.values():
                if session.vehicle_id == vehicle_id and session.open:
                    return session
            return None

    def session_for_operator(self, operator_id: str) -> Optional[OperatorSession]:
        with self._lock:
            for session in self.sessions.values():
                if session.operator_id == operator_id and session.open:
                    return session
            return None

    def claim(
        self,
        operator_id: str,
        now: float,
        *,
        request_id: Optional[str] = None,
        vehicle_id: Optional[str] = None,
        as_role: Role = Role.REMOTE_OPERATOR,
    ) -> OperatorSession:
        """Compare-and-set claim: both exclusivity checks inside one lock hold."""
        with self._lock:
            request = None
            if request_id is not None:
                request = self.requests.get(request_id)
                if request is None or request.status is not RequestStatus.OPEN:
                    raise UnknownRequest(request_id)
                vehicle_id = request.vehicle_id
            if vehicle_id is None:
                raise UnknownVehicle("no vehicle or request named")
            if vehicle_id not in self.vehicles:
                raise UnknownVehicle(vehicle_id)
            if self.session_for_vehicle(vehicle_id) is not None:
                raise VehicleBusy(vehicle_id)
            if self.session_for_operator(operator_id) is not None:
                raise OperatorBusy(operator_id)
            session = OperatorSession(
                session_id=self._new_session_id(),
                operator_id=operator_id,
                role_origin=(
                    RoleOrigin.FLEET_MANAGER_ELEVATED if as_role is Role.FLEET_MANAGER else RoleOrigin.REMOTE_OPERATOR
                ),
                vehicle_id=vehicle_id,
                started_at=now,
                request_id=request.request_id if request else None,
            )
            self.sessions[session.session_id] = session
            if request is not None:
                request.status = RequestStatus.CLAIMED
                request.session_id = session.session_id
                self.log.append(LogKind.REQUEST, request.to_view(), at=self._ms(now), vehicle_id=vehicle_id)
            self.log.append(
                LogKind.SESSION,
                dict(session.to_view(), action="opened"),
                at=self._ms(now),
                vehicle_id=vehicle_id,
            )
            record = self.vehicles[vehicle_id]
            record.needs_operator = False
            return session

    def _close_session(self, session: OperatorSession, now: float) -> None:
        with self._lock:
            if not session.open:
                return
            session.ended_at = now
            if session.request_id is not None:
                request = self.requests.get(session.request_id)
                if request is not None and request.status is RequestStatus.CLAIMED:
                    request.status = RequestStatus.RESOLVED
                    self.log.append(LogKind.REQUEST, request.to_view(), at=self._ms(now), vehicle_id=request.vehicle_id)
            self.log.append(
                LogKind.SESSION,
                dict(session.to_view(), action="closed"),
                at=self._ms(now),
                vehicle_id=session.vehicle_id,
            )

    # --- commands ----------------------------------------------------------------------

    def _static_actor_check(self, event: Event) -> None:
        """Refuse actor/profile misuse centrally, before anything is sent."""
        mode_kind = event.mode.kind if event.mode is not None else None
        if not self.profile.permits(event.kind, mode_kind):
            raise fsm.ForbiddenByProfile(f"profile {self.profile.name} forbids {event.kind.value}")
        for row in fsm.BASE_TABLE:
            if row.event is not event.kind or (row.event is EventKind.BEGIN_ALTERNATIVE_MANEUVER and row.mode is not mode_kind):
                continue
            for arm in row.arms:
                actors = arm.actors
                if self.fm_intervention and event.kind in fsm.INTERVENTION_KINDS and Role.REMOTE_OPERATOR in actors:
                    actors = actors | {Role.FLEET_MANAGER}
                if event.actor in actors:
                    return
        raise fsm.ActorNotPermitted(f"{event.actor.value} may not issue {event.kind.value}")

    def command_vehicle(
        self,
        vehicle_id: str,
        event: Event,
        now: float,
        *,
        session_id: Optional[str] = None,
        ctx_override: Optional[GuardOverride] = None,
    ) -> CommandAck:
        """Send one command and return its ack (blocking)."""
        self._static_actor_check(event)
        with self._lock:
            if vehicle_id not in self.vehicles:
                raise UnknownVehicle(vehicle_id)
            factory = self._factory_for(vehicle_id)
            message = factory.build(Command(event=event, ctx_override=ctx_override), sent_at=self._ms(now))
            waiter = threading.Event()
            self._pending[message.msg_id] = waiter
            self.log.append(
                LogKind.COMMAND,
                {
                    "msg_id": message.msg_id,
                    "session_id": session_id,
                    "event": {
                        "kind": event.kind.value,
                        "actor": event.actor.value,
                        "mode": event.mode.to_wire() if event.mode else None,
                    },
                },
                at=self._ms(now),
                vehicle_id=vehicle_id,
            )
        self._broadcast(message)
        if self.transport is None:
            raise CommandTimeout("no transport attached")
        replies = self.transport(vehicle_id, message)
        if replies is not None:
            self.ingest(replies, now)
        else:
            if not waiter.wait(self.ack_timeout_s):
                with self._lock:
                    self._pending.pop(message.msg_id, None)
                raise CommandTimeout(f"no ack for {message.msg_id}")
        with self._lock:
            ack = self._acks.get(message.msg_id)
        if ack is None:
            raise CommandTimeout(f"no ack for {message.msg_id}")
        return ack

    def issue_command(
        self,
        session_id: str,
        kind: EventKind,
        now: float,
        *,
        mode: Optional[ManeuverMode] = None,
        ctx_override: Optional[GuardOverride] = None,
    ) -> CommandAck:
        """Session-scoped command: the operator acts as remote operator."""
        with self._lock:
            session = self.sessions.get(session_id)
            if session is None or not session.open:
                raise NoSession(session_id)
            vehicle_id = session.vehicle_id
        event = Event(kind, Role.REMOTE_OPERATOR, mode)
        override = ctx_override if ctx_override is not None else GuardOverride()
        if override.operator_attached is None:
            # an open session is what "attached" means
            override = GuardOverride(
                trajectory_valid=override.trajectory_valid,
                mrc_reason_remaining=override.mrc_reason_remaining,
                operator_attached=True,
                link_quality=override.link_quality,
                ads_functions_available=override.ads_functions_available,
            )
        if kind is EventKind.START_MONITORING and session.request_id is None:
            self.log.append(
                LogKind.NOTE,
                {"proactive_monitoring": vehicle_id, "operator": session.operator_id},
                at=self._ms(now),
                vehicle_id=vehicle_id,
            )
        return self.command_vehicle(vehicle_id, event, now, session_id=session_id, ctx_override=override)

    def forward_to_vehicle(self, session_id: str, body, now: float) -> Optional[CommandAck]:
        """Relay a console body (decision, frame, label) through a session.

        Ackable bodies block for their paired ack like a command; drive
        frames stream fire-and-forget and always return None.
        """
        ackable = not isinstance(body, DriveFrame)
        waiter = None
        with self._lock:
            session = self.sessions.get(session_id)
            if session is None or not session.open:
                raise NoSession(session_id)
            factory = self._factory_for(session.vehicle_id)
            message = factory.build(body, sent_at=self._ms(now))
            if ackable:
                # frames stream unacked; everything else is acked and must
                # enter the pairing ledger like a command
                waiter = threading.Event()
                self._pending[message.msg_id] = waiter
                self.log.append(
                    LogKind.COMMAND,
                    {"msg_id": message.msg_id, "session_id": session_id, "forward": body.type},
                    at=self._ms(now),
                    vehicle_id=session.vehicle_id,
                )
        self._broadcast(message)
        if self.transport is None:
            raise CommandTimeout("no transport attached")
        replies = self.transport(session.vehicle_id, message)
        if replies is not None:
            self.ingest(replies, now)
        if not ackable:
            return None
        if replies is None and waiter is not None and not waiter.wait(self.ack_timeout_s):
            with self._lock:
                self._pending.pop(message.msg_id, None)
            raise CommandTimeout(f"no ack for {message.msg_id}")
        with self._lock:
            self._pending.pop(message.msg_id, None)
            return self._acks.get(message.msg_id)

    def release(self, session_id: str, now: float) -> OperatorSession:
        with self._lock:
            session = self.sessions.get(session_id)
            if session is None or not session.open:
                raise NoSession(session_id)
            record = self.vehicles.get(session.vehicle_id)
            state = record.last_state if record else fsm.INITIAL
            if state.kind is StateKind.ALTERNATIVE_MANEUVER_ACTIVE:
                raise ReleaseRefusedMidManeuver(session.vehicle_id)
        if state.kind is StateKind.MONITORED_AUTOMATED_DRIVING:
            # hand the vehicle back to itself before walking away
            self.issue_command(session_id, EventKind.END_MONITORING, now)
            # the unmonitored transition closes the session on ingest
            if not session.open:
                return session
        mrc_followup = state.kind is StateKind.ACTIVATED_MRC
        self._close_session(session, now)
        if mrc_followup:
            # a parked MRC without an operator must not fall off the queue
            origin_request = self.requests.get(session.request_id) if session.request_id else None
            self._open_request(
                session.vehicle_id,
                RequestKind.MRM,
                origin_request.origin if origin_request else Role.ADS,
                origin_request.reason if origin_request else "mrc_unattended",
                now,
                supersedes=session.request_id,
            )
        return session

    # --- fleet monitoring -----------------------------------------------------------------

    def fm_scan(self, now: float) -> list[FleetRequest]:
        """Open monitoring requests for anomalous vehicles; idempotent per reason."""
        opened = []
        with self._lock:
            for record in self.vehicles.values():
                flags = set()
                if now - record.last_seen > self.telemetry_gap_s:
                    flags.add("telemetry_gap")
                if record.link(now) is not LinkStatus.ALIVE:
                    flags.add("link_degraded")
                if record.last_telemetry is not None and record.last_telemetry.state != record.last_state:
                    flags.add("state_mismatch")
                record.anomaly_flags |= flags
                for reason in sorted(flags):
                    if self._has_live_request(record.vehicle_id, reason):
                        continue
                    opened.append(
                        self._open_request(record.vehicle_id, RequestKind.MONITORING, Role.FLEET_MANAGER, reason, now)
                    )
        return opened

    def _has_live_request(self, vehicle_id: str, reason: str) -> bool:
        return any(
            r.vehicle_id == vehicle_id and r.reason == reason and r.status is not RequestStatus.RESOLVED
            for r in self.requests.values()
        )

    # --- console views -------------------------------------------------------------------------

    def fleet_view(self, now: float) -> list[dict]:
        with self._lock:
            return [self.vehicles[v].to_view(now) for v in sorted(self.vehicles)]

    def requests_view(self) -> list[dict]:
        return [r.to_view() for r in self.open_requests()]

    def affordances(self, vehicle_id: str, now: float) -> dict:
        """Event options for the console, plus profile-disabled rows with reasons."""
        with self._lock:
            record = self.vehicles.get(vehicle_id)
            if record is None:
                raise UnknownVehicle(vehicle_id)
            session = self.session_for_vehicle(vehicle_id)
            telemetry = record.last_telemetry
            ctx = GuardContext(
                operator_attached=session is not None,
                link_quality=telemetry.link_quality if telemetry else 1.0,
            )
            options = fsm.valid_events(
                record.last_state,
                ctx,
                self.profile,
                link_threshold=self.link_threshold,
                fm_intervention=self.fm_intervention,
            )
            enabled = [
                {
                    "kind": o.kind.value,
                    "mode": o.mode.value if o.mode else None,
                    "actors": sorted(r.value for r in o.actors),
                    "guard_blocked": o.guard_blocked,
                    "blocked_by": o.blocked_by,
                }
                for o in options
            ]
            disabled = []
            generic_keys = {r.key for r in fsm.GENERIC.rows()}
            for kind, mode in sorted(generic_keys - {r.key for r in self.profile.rows()}, key=str):
                if any(arm.source is record.last_state.kind for row in fsm.BASE_TABLE if row.key == (kind, mode) for arm in row.arms):
                    disabled.append(
                        {
                            "kind": kind.value,
                            "mode": mode.value if mode else None,
                            "reason": f"forbidden by profile {self.profile.name}",
                        }
                    )
            proposal = record.pending_proposal
            return {
                "vehicle_id": vehicle_id,
                "state": record.last_state.to_wire(),
                "session_id": session.session_id if session else None,
                "enabled": enabled,
                "disabled": disabled,
                # consoles reconnecting mid-maneuver must still see the open proposal
                "proposal": {"type": proposal.type, **proposal.to_fields()} if proposal else None,
            }
