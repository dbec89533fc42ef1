"""Simulated automated vehicle.

Advances along a 1-D route, mirrors its own state through the transition
model, fires scripted scenario events exactly once, and executes commanded
transitions with its live guard context. Pure message-in/message-out: the
caller (headless harness or socket shim) moves Messages and owns the clock.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

from . import fsm, maneuver
from .fsm import (
    DEFAULT_LINK_THRESHOLD,
    Effect,
    Event,
    EventKind,
    GuardContext,
    LegalProfile,
    Role,
    StateKind,
    VehicleState,
)
from .protocol import (
    Command,
    CommandAck,
    DriveFrame,
    Heartbeat,
    Hello,
    InteractionRequest,
    LinkStatus,
    ManeuverDecision,
    ManeuverOption,
    ManeuverProposal,
    Message,
    MessageFactory,
    MonitoringRequest,
    ObjectClassification,
    Telemetry,
    TransitionReport,
)

ROUTE_ORIGIN = (48.1500, 11.5500)
ROUTE_TERMINUS = (48.1600, 11.5600)

DEFAULT_TELEMETRY_PERIOD_S = 1.0
DEFAULT_HEARTBEAT_PERIOD_S = 0.5


class ScenarioError(Exception):
    pass


class DesyncError(Exception):
    """A peer's view of this vehicle contradicts the local mirror."""


class ScheduledKind(str, Enum):
    ADS_MRM = "ads_mrm"
    ADS_MONITORING_REQUEST = "ads_monitoring_request"
    ODD_EXIT = "odd_exit"
    LINK_QUALITY_CHANGE = "link_quality_change"
    TRAJECTORY_BLOCKED = "trajectory_blocked"
    ADS_FUNCTION_OUTAGE = "ads_function_outage"


@dataclass(frozen=True)
class ScheduledEvent:
    kind: ScheduledKind
    at: Optional[float] = None
    at_position: Optional[float] = None
    reason: str = ""
    value: Optional[float] = None
    duration_s: Optional[float] = None


# states a vehicle may legally hold with no operator session open
SESSIONLESS_STATES = (
    StateKind.INITIAL,
    StateKind.PREPARED,
    StateKind.DEACTIVATED_MRC,
    StateKind.ACTIVATED_MRC,
    StateKind.UNMONITORED_AUTOMATED_DRIVING,
)


@dataclass(frozen=True)
class Scenario:
    vehicle_id: str
    route_length: float
    cruise_speed: float
    initial_state: str = "initial"
    events: tuple[ScheduledEvent, ...] = ()
    maneuver_options: tuple[ManeuverOption, ...] = ()
    classification_subject: str = ""
    classification_map: Optional[dict] = None
    clearance_distance_m: float = maneuver.DEFAULT_CLEARANCE_DISTANCE_M
    drive_v_max: float = maneuver.DEFAULT_DRIVE_V_MAX
    decision_timeout_s: float = maneuver.DEFAULT_DECISION_TIMEOUT_S

    @property
    def labels(self) -> dict:
        return self.classification_map or {}


def load_scenario(source: str | Path | dict) -> Scenario:
    """Parse and validate a scenario JSON document or pre-parsed dict."""
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ScenarioError(f"cannot load scenario: {e}") from None
    else:
        raw = source
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object")
    try:
        vehicle_id = raw["vehicle_id"]
        route_length = float(raw["route_length"])
        cruise_speed = float(raw["cruise_speed"])
    except KeyError as e:
        raise ScenarioError(f"scenario missing {e.args[0]}") from None
    if not vehicle_id or not isinstance(vehicle_id, str):
        raise ScenarioError("vehicle_id must be a non-empty string")
    if route_length < 0 or cruise_speed < 0:
        raise ScenarioError("route_length and cruise_speed must be nonnegative")
    initial_state = str(raw.get("initial_state", "initial"))
    try:
        if StateKind(initial_state) not in SESSIONLESS_STATES:
            raise ValueError
    except ValueError:
        raise ScenarioError(f"initial_state {initial_state!r} needs an operator session") from None

    events = []
    for i, item in enumerate(raw.get("events", [])):
        try:
            kind = ScheduledKind(item["kind"])
        except (KeyError, ValueError):
            raise ScenarioError(f"event {i}: unknown kind {item.get('kind')!r}") from None
        at = item.get("at")
        at_position = item.get("at_position")
        if (at is None) == (at_position is None):
            raise ScenarioError(f"event {i}: exactly one of at/at_position required")
        value = item.get("value")
        if kind is ScheduledKind.LINK_QUALITY_CHANGE:
            if value is None or not 0.0 <= value <= 1.0:
                raise ScenarioError(f"event {i}: link quality value must lie in [0, 1]")
        duration = item.get("duration_s")
        if kind in (ScheduledKind.TRAJECTORY_BLOCKED, ScheduledKind.ADS_FUNCTION_OUTAGE) and duration is None:
            raise ScenarioError(f"event {i}: {kind.value} requires duration_s")
        events.append(
            ScheduledEvent(
                kind=kind,
                at=None if at is None else float(at),
                at_position=None if at_position is None else float(at_position),
                reason=str(item.get("reason", "")),
                value=None if value is None else float(value),
                duration_s=None if duration is None else float(duration),
            )
        )
    timed = [e.at for e in events if e.at is not None]
    placed = [e.at_position for e in events if e.at_position is not None]
    if timed != sorted(timed) or placed != sorted(placed):
        raise ScenarioError("events must be sorted by trigger time/position")

    options = []
    for i, item in enumerate(raw.get("maneuver_options", [])):
        try:
            options.append(
                ManeuverOption(
                    option_id=i,
                    descriptor=str(item["descriptor"]),
                    viable=bool(item.get("viable", False)),
                    requires_odd_exit=bool(item.get("requires_odd_exit", False)),
                )
            )
        except KeyError:
            raise ScenarioError(f"maneuver option {i}: descriptor required") from None

    return Scenario(
        vehicle_id=vehicle_id,
        route_length=route_length,
        cruise_speed=cruise_speed,
        initial_state=initial_state,
        events=tuple(events),
        maneuver_options=tuple(options),
        classification_subject=str(raw.get("classification_subject", "")),
        classification_map={str(k): bool(v) for k, v in raw.get("classification_map", {}).items()} or None,
        clearance_distance_m=float(raw.get("clearance_distance_m", maneuver.DEFAULT_CLEARANCE_DISTANCE_M)),
        drive_v_max=float(raw.get("drive_v_max", maneuver.DEFAULT_DRIVE_V_MAX)),
        decision_timeout_s=float(raw.get("decision_timeout_s", maneuver.DEFAULT_DECISION_TIMEOUT_S)),
    )


class VehicleAgent:
    """One simulated AV, single-threaded over its own state."""

    def __init__(
        self,
        scenario: Scenario,
        profile: LegalProfile = fsm.GENERIC,
        *,
        fm_intervention: bool = False,
        link_threshold: float = DEFAULT_LINK_THRESHOLD,
        telemetry_period_s: float = DEFAULT_TELEMETRY_PERIOD_S,
        heartbeat_period_s: float = DEFAULT_HEARTBEAT_PERIOD_S,
        auto_field_operator: bool = True,
        id_prefix: int = 1,
    ):
        self.scenario = scenario
        self.profile = profile
        self.fm_intervention = fm_intervention
        self.link_threshold = link_threshold
        self.telemetry_period_s = telemetry_period_s
        self.heartbeat_period_s = heartbeat_period_s
        self.auto_field_operator = auto_field_operator

        self.state: VehicleState = VehicleState.from_wire(scenario.initial_state)
        self.position = 0.0
        self.link_quality = 1.0
        self.odd_exit_active = False
        self.session: Optional[maneuver.ManeuverSession] = None
        self.transitions_applied = 0
        self.mrms_triggered = 0
        self.skipped_events: list[str] = []

        self._factory = MessageFactory(vehicle_id=scenario.vehicle_id, id_prefix=id_prefix)
        self._fired = [False] * len(scenario.events)
        self._blocked_until: Optional[float] = None
        self._outage_until: Optional[float] = None
        self._now = 0.0
        self._last_telemetry: Optional[float] = None
        self._last_heartbeat: Optional[float] = None

    # --- context ---------------------------------------------------------

    def guard_context(self, operator_attached: bool = False) -> GuardContext:
        blocked = self._blocked_until is not None and self._now < self._blocked_until
        outage = self._outage_until is not None and self._now < self._outage_until
        return GuardContext(
            trajectory_valid=not blocked,
            mrc_reason_remaining=blocked or outage,
            operator_attached=operator_attached,
            link_quality=self.link_quality,
            ads_functions_available=not outage,
        )

    def link_status(self) -> LinkStatus:
        # scenario-driven loss: a dead radio shows up as zero quality
        return LinkStatus.LOST if self.link_quality == 0.0 else LinkStatus.ALIVE

    def _ms(self) -> int:
        return int(round(self._now * 1000))

    def _telemetry(self) -> Message:
        frac = 0.0 if self.scenario.route_length <= 0 else min(1.0, self.position / self.scenario.route_length)
        lat = ROUTE_ORIGIN[0] + (ROUTE_TERMINUS[0] - ROUTE_ORIGIN[0]) * frac
        lon = ROUTE_ORIGIN[1] + (ROUTE_TERMINUS[1] - ROUTE_ORIGIN[1]) * frac
        speed = self.scenario.cruise_speed if self._is_cruising() and self.position < self.scenario.route_length else 0.0
        self._last_telemetry = self._now
        return self._factory.build(
            Telemetry(
                state=self.state,
                lat=lat,
                lon=lon,
                speed=speed,
                link_quality=self.link_quality,
                trajectory_valid=self.guard_context().trajectory_valid,
            ),
            sent_at=self._ms(),
        )

    def _is_cruising(self) -> bool:
        return self.state.kind in (
            StateKind.MONITORED_AUTOMATED_DRIVING,
            StateKind.UNMONITORED_AUTOMATED_DRIVING,
        )

    # --- local transitions --------------------------------------------------

    def _apply_local(
        self, event: Event, ctx: GuardContext, transcript: Optional[dict] = None
    ) -> tuple[fsm.TransitionResult, list[Message]]:
        result = fsm.apply_event(
            self.state,
            event,
            ctx,
            self.profile,
            link_threshold=self.link_threshold,
            fm_intervention=self.fm_intervention,
        )
        report = TransitionReport(
            event=event,
            ctx=ctx,
            from_state=self.state,
            to_state=result.next,
            effects=result.effects,
            transcript=transcript,
        )
        self.state = result.next
        self.transitions_applied += 1
        out = [self._factory.build(report, sent_at=self._ms()), self._telemetry()]
        return result, out

    def _finish_maneuver(self, outcome: maneuver.ManeuverOutcome) -> list[Message]:
        session = self.session
        self.session = None
        event = Event(outcome.event_kind, Role.SYSTEM)
        _, out = self._apply_local(event, self.guard_context(), transcript=session.to_payload())
        return out

    # --- lifecycle -------------------------------------------------------------

    def start(self, now: float = 0.0) -> list[Message]:
        """Connect-time burst: handshake, field-side preparation, first telemetry."""
        self._now = now
        out = [self._factory.build(Hello(profile=self.profile.name, state=self.state), sent_at=self._ms())]
        if self.state == fsm.INITIAL:
            _, msgs = self._apply_local(Event(EventKind.PREPARE_VEHICLE, Role.FIELD_OPERATOR), self.guard_context())
            out.extend(msgs)
        return out

    def step(self, now: float) -> list[Message]:
        """Advance to simulated time `now`: motion, scripted events, timers."""
        dt = max(0.0, now - self._now)
        self._now = now
        out: list[Message] = []

        if self._is_cruising():
            self.position = min(self.scenario.route_length, self.position + self.scenario.cruise_speed * dt)

        for i, scheduled in enumerate(self.scenario.events):
            if self._fired[i]:
                continue
            due_time = scheduled.at is not None and now >= scheduled.at
            # tolerance keeps accumulated float fuzz from slipping a marker by a tick
            due_place = scheduled.at_position is not None and self.position >= scheduled.at_position - 1e-9
            if not (due_time or due_place):
                continue
            self._fired[i] = True
            out.extend(self._fire(scheduled))

        if self.session is not None:
            timeout = self.session.check_timeout(now)
            if timeout is not None:
                out.extend(self._finish_maneuver(timeout))

        if self._last_heartbeat is None or now - self._last_heartbeat >= self.heartbeat_period_s:
            self._last_heartbeat = now
            out.append(self._factory.build(Heartbeat(), sent_at=self._ms()))
        if self._last_telemetry is None or now - self._last_telemetry >= self.telemetry_period_s:
            out.append(self._telemetry())
        return out

    def _fire(self, scheduled: ScheduledEvent) -> list[Message]:
        kind = scheduled.kind
        if kind is ScheduledKind.LINK_QUALITY_CHANGE:
            self.link_quality = float(scheduled.value)
            out = []
            if self.link_quality == 0.0 and self.session is not None and self.session.is_driving:
                outcome = self.session.link_lost(self._now)
                if outcome is not None:
                    out.extend(self._finish_maneuver(outcome))
            return out
        if kind is ScheduledKind.ODD_EXIT:
            self.odd_exit_active = True
            return []
        if kind is ScheduledKind.TRAJECTORY_BLOCKED:
            self._blocked_until = self._now + float(scheduled.duration_s)
            return []
        if kind is ScheduledKind.ADS_FUNCTION_OUTAGE:
            self._outage_until = self._now + float(scheduled.duration_s)
            return []
        if kind is ScheduledKind.ADS_MONITORING_REQUEST:
            return [
                self._factory.build(
                    MonitoringRequest(origin=Role.ADS, reason=scheduled.reason or "monitoring_requested"),
                    sent_at=self._ms(),
                )
            ]
        if kind is ScheduledKind.ADS_MRM:
            if not self._is_cruising():
                self.skipped_events.append(f"ads_mrm at state {self.state.to_wire()}")
                return []
            self.mrms_triggered += 1
            result, out = self._apply_local(Event(EventKind.TRIGGER_MRM, Role.ADS), self.guard_context())
            if Effect.EMIT_INTERACTION_REQUEST in result.effects:
                out.append(
                    self._factory.build(
                        InteractionRequest(reason=scheduled.reason or "mrm_triggered"),
                        sent_at=self._ms(),
                    )
                )
            return out
        raise ScenarioError(f"unhandled scheduled kind {kind}")  # pragma: no cover

    # --- inbound messages ----------------------------------------------------------

    def handle_message(self, msg: Message, now: float) -> list[Message]:
        self._now = max(self._now, now)
        body = msg.body
        if isinstance(body, Command):
            return self.execute_command(body, msg.msg_id)
        if isinstance(body, ManeuverDecision):
            return self._handle_decision(body, msg.msg_id)
        if isinstance(body, DriveFrame):
            return self._handle_frame(body, msg.msg_id)
        if isinstance(body, ObjectClassification):
            return self._handle_classification(body, msg.msg_id)
        if isinstance(body, Heartbeat):
            return []
        return []  # telemetry/acks from peers are not addressed to an agent

    def execute_command(self, cmd: Command, ref_msg_id: int) -> list[Message]:
        ctx = self.guard_context()
        if cmd.ctx_override is not None:
            ctx = cmd.ctx_override.merge(ctx)
            if cmd.ctx_override.link_quality is not None:
                # the radio is measured here, not asserted remotely
                ctx = GuardContext(
                    trajectory_valid=ctx.trajectory_valid,
                    mrc_reason_remaining=ctx.mrc_reason_remaining,
                    operator_attached=ctx.operator_attached,
                    link_quality=self.link_quality,
                    ads_functions_available=ctx.ads_functions_available,
                )
        try:
            result, out = self._apply_local(cmd.event, ctx)
        except fsm.TransitionError as e:
            return [self._factory.build(CommandAck.refusal(ref_msg_id, e), sent_at=self._ms())]

        out.append(self._factory.build(CommandAck.success(ref_msg_id, result), sent_at=self._ms()))

        if cmd.event.kind is EventKind.BEGIN_ALTERNATIVE_MANEUVER:
            out.extend(self._begin_maneuver(cmd.event))
        if cmd.event.kind is EventKind.END_SERVICE and self.auto_field_operator:
            # scripted field operator wraps up immediately after service ends
            _, msgs = self._apply_local(Event(EventKind.END_DRIVING_OPERATION, Role.FIELD_OPERATOR), self.guard_context())
            out.extend(msgs)
        return out

    def _begin_maneuver(self, event: Event) -> list[Message]:
        options = ()
        if event.mode.kind is fsm.ManeuverModeKind.REMOTE_ASSISTANCE:
            options = maneuver.propose(self.scenario.maneuver_options, self.odd_exit_active)
        self.session = maneuver.ManeuverSession(
            self.scenario.vehicle_id,
            event.mode,
            started_at=self._now,
            options=options,
            profile=self.profile,
            classification_subject=self.scenario.classification_subject,
            clearance_distance=self.scenario.clearance_distance_m,
            v_max=self.scenario.drive_v_max,
            decision_timeout_s=self.scenario.decision_timeout_s,
        )
        out = []
        if not self.session.is_driving:
            out.append(
                self._factory.build(
                    ManeuverProposal(options=self.session.options, classification_query=self.session.pending_query),
                    sent_at=self._ms(),
                )
            )
        immediate = self.session.initial_outcome(self._now)
        if immediate is not None:
            out.extend(self._finish_maneuver(immediate))
        return out

    def _refusal(self, ref_msg_id: int, code: str, detail: str) -> list[Message]:
        return [self._factory.build(CommandAck.refusal(ref_msg_id, code, detail), sent_at=self._ms())]

    def _handle_decision(self, decision: ManeuverDecision, ref_msg_id: int) -> list[Message]:
        if self.session is None:
            return self._refusal(ref_msg_id, "stale_decision", "no maneuver in progress")
        try:
            outcome = self.session.decide(decision, self._now)
        except maneuver.StaleDecision as e:
            return self._refusal(ref_msg_id, "stale_decision", str(e))
        except maneuver.UnknownOption as e:
            return self._refusal(ref_msg_id, "unknown_option", str(e))
        except maneuver.OddConfirmRequired as e:
            return self._refusal(ref_msg_id, "odd_confirm_required", str(e))
        except maneuver.ProtocolViolation as e:
            return self._refusal(ref_msg_id, "protocol_violation", str(e))
        out = []
        if outcome is not None:
            out.extend(self._finish_maneuver(outcome))
        ack_state = self.state
        out.append(
            self._factory.build(
                CommandAck.success(ref_msg_id, fsm.TransitionResult(next=ack_state)), sent_at=self._ms()
            )
        )
        return out

    def _handle_frame(self, frame: DriveFrame, ref_msg_id: int) -> list[Message]:
        if self.session is None or not self.session.is_driving:
            return self._refusal(ref_msg_id, "protocol_violation", "drive frame outside remote driving")
        session = self.session
        before = session.distance
        try:
            outcome = session.feed_frame(frame, self.link_status(), self._now)
        except maneuver.ProtocolViolation as e:
            return self._refusal(ref_msg_id, "protocol_violation", str(e))
        self.position = min(self.scenario.route_length, self.position + session.distance - before)
        if outcome is not None:
            return self._finish_maneuver(outcome)
        return []

    def _handle_classification(self, body: ObjectClassification, ref_msg_id: int) -> list[Message]:
        if self.session is None:
            return self._refusal(ref_msg_id, "no_pending_query", "no maneuver in progress")
        try:
            self.session.classify(body.label, self.scenario.labels, self._now)
        except maneuver.NoPendingQuery as e:
            return self._refusal(ref_msg_id, "no_pending_query", str(e))
        # re-propose even when nothing changed so peers see the query consumed
        return [
            self._factory.build(CommandAck.success(ref_msg_id, fsm.TransitionResult(next=self.state)), sent_at=self._ms()),
            self._factory.build(
                ManeuverProposal(options=self.session.options, classification_query=None),
                sent_at=self._ms(),
            ),
        ]

    def verify_peer_view(self, peer_state: VehicleState) -> None:
        if peer_state != self.state:
            raise DesyncError(f"peer sees {peer_state.to_wire()}, agent at {self.state.to_wire()}")

    def summary(self) -> dict:
        return {
            "vehicle_id": self.scenario.vehicle_id,
            "final_state": self.state.to_wire(),
            "position": round(self.position, 6),
            "transitions": self.transitions_applied,
            "mrms_triggered": self.mrms_triggered,
            "skipped_events": list(self.skipped_events),
        }
