"""Deterministic vehicle-state model for remote-operator support.

Pure functions over immutable values: states, events, guards, transition
application and legal-profile gating. No I/O; callers serialize event
application per vehicle.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Optional

DEFAULT_LINK_THRESHOLD = 0.5


class StateKind(str, Enum):
    INITIAL = "initial"
    PREPARED = "prepared"
    DEACTIVATED_MRC = "deactivated_mrc"
    ACTIVATED_MRC = "activated_mrc"
    MONITORED_AUTOMATED_DRIVING = "monitored_automated_driving"
    UNMONITORED_AUTOMATED_DRIVING = "unmonitored_automated_driving"
    ALTERNATIVE_MANEUVER_ACTIVE = "alternative_maneuver_active"


class ManeuverModeKind(str, Enum):
    REMOTE_ASSISTANCE = "remote_assistance"
    REMOTE_DRIVING = "remote_driving"


class AssistanceKind(str, Enum):
    MANEUVER_CLEARANCE = "maneuver_clearance"
    MANEUVER_PROPOSAL = "maneuver_proposal"
    OBJECT_CLASSIFICATION = "object_classification"


class Role(str, Enum):
    REMOTE_OPERATOR = "remote_operator"
    FLEET_MANAGER = "fleet_manager"
    FIELD_OPERATOR = "field_operator"
    ADS = "ads"
    SYSTEM = "system"


class EventKind(str, Enum):
    PREPARE_VEHICLE = "prepare_vehicle"
    END_DRIVING_OPERATION = "end_driving_operation"
    START_SERVICE = "start_service"
    END_SERVICE = "end_service"
    ACTIVATE_ADS = "activate_ads"
    DEACTIVATE_ADS = "deactivate_ads"
    ENGAGE_AUTOMATION = "engage_automation"
    START_MONITORING = "start_monitoring"
    END_MONITORING = "end_monitoring"
    TRIGGER_MRM = "trigger_mrm"
    BEGIN_ALTERNATIVE_MANEUVER = "begin_alternative_maneuver"
    MANEUVER_SUCCEEDED = "maneuver_succeeded"
    MANEUVER_FAILED = "maneuver_failed"
    INTERACTION_REQUEST = "interaction_request"


class Effect(str, Enum):
    EMIT_INTERACTION_REQUEST = "emit_interaction_request"
    NOTIFY_FLEET_MANAGER = "notify_fleet_manager"
    REQUIRE_OPERATOR_ATTACH = "require_operator_attach"


# Remote-intervention kinds; a fleet manager may issue these only when the
# deployment explicitly enables FM intervention.
INTERVENTION_KINDS = frozenset(
    {
        EventKind.ACTIVATE_ADS,
        EventKind.DEACTIVATE_ADS,
        EventKind.ENGAGE_AUTOMATION,
        EventKind.TRIGGER_MRM,
    }
)


@dataclass(frozen=True)
class ManeuverMode:
    """Alternative-maneuver entry mode: assistance (with a kind) or driving."""

    kind: ManeuverModeKind
    assistance: Optional[AssistanceKind] = None

    def __post_init__(self) -> None:
        if self.kind is ManeuverModeKind.REMOTE_ASSISTANCE and self.assistance is None:
            raise ValueError("remote assistance requires an assistance kind")
        if self.kind is ManeuverModeKind.REMOTE_DRIVING and self.assistance is not None:
            raise ValueError("remote driving carries no assistance kind")

    def to_wire(self) -> str:
        if self.kind is ManeuverModeKind.REMOTE_DRIVING:
            return self.kind.value
        return f"{self.kind.value}/{self.assistance.value}"

    @classmethod
    def from_wire(cls, text: str) -> "ManeuverMode":
        parts = text.split("/")
        if parts[0] == ManeuverModeKind.REMOTE_DRIVING.value and len(parts) == 1:
            return cls(ManeuverModeKind.REMOTE_DRIVING)
        if parts[0] == ManeuverModeKind.REMOTE_ASSISTANCE.value and len(parts) == 2:
            return cls(ManeuverModeKind.REMOTE_ASSISTANCE, AssistanceKind(parts[1]))
        raise ValueError(f"unknown maneuver mode: {text!r}")


def assistance(kind: AssistanceKind = AssistanceKind.MANEUVER_CLEARANCE) -> ManeuverMode:
    return ManeuverMode(ManeuverModeKind.REMOTE_ASSISTANCE, kind)


def remote_driving() -> ManeuverMode:
    return ManeuverMode(ManeuverModeKind.REMOTE_DRIVING)


@dataclass(frozen=True)
class VehicleState:
    """One of the seven state variants; mode set iff the vehicle is mid-maneuver."""

    kind: StateKind
    mode: Optional[ManeuverMode] = None

    def __post_init__(self) -> None:
        in_maneuver = self.kind is StateKind.ALTERNATIVE_MANEUVER_ACTIVE
        if in_maneuver and self.mode is None:
            raise ValueError("alternative_maneuver_active requires a maneuver mode")
        if not in_maneuver and self.mode is not None:
            raise ValueError(f"{self.kind.value} carries no maneuver mode")

    def to_wire(self) -> str:
        if self.mode is None:
            return self.kind.value
        return f"{self.kind.value}/{self.mode.to_wire()}"

    @classmethod
    def from_wire(cls, text: str) -> "VehicleState":
        head, sep, rest = text.partition("/")
        kind = StateKind(head)
        if not sep:
            return cls(kind)
        return cls(kind, ManeuverMode.from_wire(rest))


INITIAL = VehicleState(StateKind.INITIAL)
PREPARED = VehicleState(StateKind.PREPARED)
DEACTIVATED_MRC = VehicleState(StateKind.DEACTIVATED_MRC)
ACTIVATED_MRC = VehicleState(StateKind.ACTIVATED_MRC)
MONITORED = VehicleState(StateKind.MONITORED_AUTOMATED_DRIVING)
UNMONITORED = VehicleState(StateKind.UNMONITORED_AUTOMATED_DRIVING)


@dataclass(frozen=True)
class Event:
    """An actor-attributed trigger; mode set only for begin_alternative_maneuver."""

    kind: EventKind
    actor: Role
    mode: Optional[ManeuverMode] = None

    def __post_init__(self) -> None:
        needs_mode = self.kind is EventKind.BEGIN_ALTERNATIVE_MANEUVER
        if needs_mode and self.mode is None:
            raise ValueError("begin_alternative_maneuver requires a mode")
        if not needs_mode and self.mode is not None:
            raise ValueError(f"{self.kind.value} carries no mode")


@dataclass(frozen=True)
class GuardContext:
    trajectory_valid: bool = True
    mrc_reason_remaining: bool = False
    operator_attached: bool = False
    link_quality: float = 1.0
    ads_functions_available: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.link_quality <= 1.0:
            raise ValueError("link_quality must lie in [0, 1]")


@dataclass(frozen=True)
class TransitionResult:
    next: VehicleState
    effects: tuple[Effect, ...] = ()


class TransitionError(Exception):
    """Base for all refusals of apply_event."""

    code = "transition_error"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.code)
        self.detail = detail


class InvalidTransition(TransitionError):
    code = "invalid_transition"


class ActorNotPermitted(TransitionError):
    code = "actor_not_permitted"


class ForbiddenByProfile(TransitionError):
    code = "forbidden_by_profile"


class GuardFailed(TransitionError):
    """Carries the name of the first guard predicate that failed."""

    code = "guard_failed"

    def __init__(self, predicate: str):
        super().__init__(predicate)
        self.predicate = predicate


ERROR_CODES = {
    cls.code: cls
    for cls in (TransitionError, InvalidTransition, ActorNotPermitted, ForbiddenByProfile, GuardFailed)
}


# --- transition table -------------------------------------------------------
#
# One row per (event kind, maneuver mode) task; this is the granularity legal
# profiles gate on and the unit the exported listing counts. The trigger_mrm
# row has two arms because its actor set and effects depend on whether the
# vehicle was being monitored when the MRM fired.

@dataclass(frozen=True)
class Arm:
    source: StateKind
    actors: frozenset[Role]
    target: StateKind
    guards: tuple[str, ...] = ()
    effects: tuple[Effect, ...] = ()


@dataclass(frozen=True)
class TransitionRow:
    event: EventKind
    mode: Optional[ManeuverModeKind]
    arms: tuple[Arm, ...]

    @property
    def key(self) -> tuple[EventKind, Optional[ManeuverModeKind]]:
        return (self.event, self.mode)


def _row(event: EventKind, *arms: Arm, mode: Optional[ManeuverModeKind] = None) -> TransitionRow:
    return TransitionRow(event=event, mode=mode, arms=tuple(arms))


_RO = frozenset({Role.REMOTE_OPERATOR})
_FO = frozenset({Role.FIELD_OPERATOR})
_SYS = frozenset({Role.SYSTEM})

BASE_TABLE: tuple[TransitionRow, ...] = (
    _row(
        EventKind.PREPARE_VEHICLE,
        Arm(StateKind.INITIAL, _FO, StateKind.PREPARED),
    ),
    _row(
        EventKind.START_SERVICE,
        Arm(StateKind.PREPARED, frozenset({Role.REMOTE_OPERATOR, Role.SYSTEM}), StateKind.DEACTIVATED_MRC),
    ),
    _row(
        EventKind.ACTIVATE_ADS,
        Arm(StateKind.DEACTIVATED_MRC, _RO, StateKind.ACTIVATED_MRC, guards=("operator_attached",)),
    ),
    _row(
        EventKind.ENGAGE_AUTOMATION,
        Arm(
            StateKind.ACTIVATED_MRC,
            _RO,
            StateKind.MONITORED_AUTOMATED_DRIVING,
            guards=("trajectory_valid", "mrc_reason_remaining"),
        ),
    ),
    _row(
        EventKind.END_MONITORING,
        Arm(StateKind.MONITORED_AUTOMATED_DRIVING, _RO, StateKind.UNMONITORED_AUTOMATED_DRIVING),
    ),
    _row(
        EventKind.START_MONITORING,
        Arm(StateKind.UNMONITORED_AUTOMATED_DRIVING, _RO, StateKind.MONITORED_AUTOMATED_DRIVING),
    ),
    _row(
        EventKind.TRIGGER_MRM,
        Arm(
            StateKind.MONITORED_AUTOMATED_DRIVING,
            frozenset({Role.REMOTE_OPERATOR, Role.ADS}),
            StateKind.ACTIVATED_MRC,
        ),
        Arm(
            StateKind.UNMONITORED_AUTOMATED_DRIVING,
            frozenset({Role.ADS}),
            StateKind.ACTIVATED_MRC,
            effects=(Effect.EMIT_INTERACTION_REQUEST, Effect.REQUIRE_OPERATOR_ATTACH),
        ),
    ),
    _row(
        EventKind.BEGIN_ALTERNATIVE_MANEUVER,
        Arm(StateKind.ACTIVATED_MRC, _RO, StateKind.ALTERNATIVE_MANEUVER_ACTIVE),
        mode=ManeuverModeKind.REMOTE_ASSISTANCE,
    ),
    _row(
        EventKind.BEGIN_ALTERNATIVE_MANEUVER,
        Arm(StateKind.ACTIVATED_MRC, _RO, StateKind.ALTERNATIVE_MANEUVER_ACTIVE, guards=("link_quality",)),
        mode=ManeuverModeKind.REMOTE_DRIVING,
    ),
    _row(
        EventKind.MANEUVER_SUCCEEDED,
        Arm(StateKind.ALTERNATIVE_MANEUVER_ACTIVE, _SYS, StateKind.MONITORED_AUTOMATED_DRIVING),
    ),
    _row(
        EventKind.MANEUVER_FAILED,
        Arm(StateKind.ALTERNATIVE_MANEUVER_ACTIVE, _SYS, StateKind.ACTIVATED_MRC),
    ),
    _row(
        EventKind.DEACTIVATE_ADS,
        Arm(StateKind.ACTIVATED_MRC, _RO, StateKind.DEACTIVATED_MRC),
    ),
    _row(
        EventKind.END_SERVICE,
        Arm(StateKind.DEACTIVATED_MRC, _RO, StateKind.DEACTIVATED_MRC, effects=(Effect.NOTIFY_FLEET_MANAGER,)),
    ),
    _row(
        EventKind.END_DRIVING_OPERATION,
        Arm(StateKind.DEACTIVATED_MRC, _FO, StateKind.INITIAL),
    ),
)


@dataclass(frozen=True)
class LegalProfile:
    """Named overlay that forbids (event kind, maneuver mode) pairs.

    Profiles only remove transitions; every row not named in `forbidden` is
    identical to the base table.
    """

    name: str
    forbidden: frozenset[tuple[EventKind, Optional[ManeuverModeKind]]] = frozenset()

    def permits(self, event: EventKind, mode: Optional[ManeuverModeKind]) -> bool:
        return (event, mode) not in self.forbidden

    def rows(self) -> tuple[TransitionRow, ...]:
        return tuple(r for r in BASE_TABLE if self.permits(r.event, r.mode))


GENERIC = LegalProfile(name="generic")
GERMAN = LegalProfile(
    name="german",
    forbidden=frozenset({(EventKind.BEGIN_ALTERNATIVE_MANEUVER, ManeuverModeKind.REMOTE_DRIVING)}),
)

PROFILES: dict[str, LegalProfile] = {"generic": GENERIC, "german": GERMAN}


class UnknownProfile(Exception):
    pass


def get_profile(name: str) -> LegalProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise UnknownProfile(name) from None


def _find_arm(state: VehicleState, kind: EventKind, mode: Optional[ManeuverModeKind]) -> Optional[Arm]:
    for row in BASE_TABLE:
        if row.event is not kind:
            continue
        if row.event is EventKind.BEGIN_ALTERNATIVE_MANEUVER and row.mode is not mode:
            continue
        for arm in row.arms:
            if arm.source is state.kind:
                return arm
    return None


def _check_guards(arm: Arm, ctx: GuardContext, link_threshold: float) -> Optional[str]:
    """Name of the first failing guard predicate, or None."""
    for predicate in arm.guards:
        if predicate == "operator_attached" and not ctx.operator_attached:
            return predicate
        if predicate == "trajectory_valid" and not ctx.trajectory_valid:
            return predicate
        if predicate == "mrc_reason_remaining" and ctx.mrc_reason_remaining:
            return predicate
        if predicate == "link_quality" and ctx.link_quality < link_threshold:
            return predicate
    return None


def apply_event(
    state: VehicleState,
    event: Event,
    ctx: GuardContext,
    profile: LegalProfile,
    *,
    link_threshold: float = DEFAULT_LINK_THRESHOLD,
    fm_intervention: bool = False,
) -> TransitionResult:
    """Apply one event to one vehicle state.

    Checks, in order: a table arm exists for (state, event kind, mode), the
    actor is permitted on that arm, the profile permits the row, and every
    guard predicate holds. Raises the matching TransitionError otherwise.

    `fm_intervention` additionally admits the fleet manager wherever the
    remote operator may issue an intervention event; off by default.
    """
    mode_kind = event.mode.kind if event.mode is not None else None
    arm = _find_arm(state, event.kind, mode_kind)
    if arm is None:
        raise InvalidTransition(f"{state.to_wire()} has no transition for {event.kind.value}")

    actors = arm.actors
    if fm_intervention and event.kind in INTERVENTION_KINDS and Role.REMOTE_OPERATOR in actors:
        actors = actors | {Role.FLEET_MANAGER}
    if event.actor not in actors:
        raise ActorNotPermitted(f"{event.actor.value} may not issue {event.kind.value} from {state.kind.value}")

    if not profile.permits(event.kind, mode_kind):
        raise ForbiddenByProfile(f"profile {profile.name} forbids {event.kind.value}" + (f"({mode_kind.value})" if mode_kind else ""))

    failed = _check_guards(arm, ctx, link_threshold)
    if failed is not None:
        raise GuardFailed(failed)

    if arm.target is StateKind.ALTERNATIVE_MANEUVER_ACTIVE:
        next_state = VehicleState(arm.target, event.mode)
    else:
        next_state = VehicleState(arm.target)
    return TransitionResult(next=next_state, effects=arm.effects)


@dataclass(frozen=True)
class EventOption:
    """One offered event from valid_events, with the actors allowed to send it."""

    kind: EventKind
    mode: Optional[ManeuverModeKind]
    actors: frozenset[Role]
    guard_blocked: bool = False
    blocked_by: Optional[str] = None


def valid_events(
    state: VehicleState,
    ctx: GuardContext,
    profile: LegalProfile,
    *,
    link_threshold: float = DEFAULT_LINK_THRESHOLD,
    fm_intervention: bool = False,
) -> tuple[EventOption, ...]:
    """Events the current state admits under the profile.

    Guard-failing rows are included and flagged guard_blocked; rows the
    profile forbids or that no table arm covers are absent entirely.
    """
    options: list[EventOption] = []
    for row in BASE_TABLE:
        if not profile.permits(row.event, row.mode):
            continue
        for arm in row.arms:
            if arm.source is not state.kind:
                continue
            actors = arm.actors
            if fm_intervention and row.event in INTERVENTION_KINDS and Role.REMOTE_OPERATOR in actors:
                actors = actors | {Role.FLEET_MANAGER}
            blocked = _check_guards(arm, ctx, link_threshold)
            options.append(
                EventOption(
                    kind=row.event,
                    mode=row.mode,
                    actors=actors,
                    guard_blocked=blocked is not None,
                    blocked_by=blocked,
                )
            )
    options.sort(key=lambda o: (o.kind.value, o.mode.value if o.mode else ""))
    return tuple(options)


def reachable_states(start: "VehicleState | StateKind", profile: LegalProfile) -> frozenset[StateKind]:
    """Fixed point of breadth-first expansion assuming all guards satisfiable.

    Actor constraints are ignored; profile-forbidden rows are not expanded.
    """
    origin = start.kind if isinstance(start, VehicleState) else start
    seen: set[StateKind] = {origin}
    frontier = deque([origin])
    while frontier:
        current = frontier.popleft()
        for row in BASE_TABLE:
            if not profile.permits(row.event, row.mode):
                continue
            for arm in row.arms:
                if arm.source is current and arm.target not in seen:
                    seen.add(arm.target)
                    frontier.append(arm.target)
    return frozenset(seen)


@dataclass(frozen=True)
class ProfileDiff:
    removed: frozenset[tuple[EventKind, Optional[ManeuverModeKind]]]
    added: frozenset[tuple[EventKind, Optional[ManeuverModeKind]]]


def profile_diff(a: LegalProfile, b: LegalProfile) -> ProfileDiff:
    """Rows permitted by `a` but not `b` (removed) and vice versa (added)."""
    rows_a = {r.key for r in a.rows()}
    rows_b = {r.key for r in b.rows()}
    return ProfileDiff(removed=frozenset(rows_a - rows_b), added=frozenset(rows_b - rows_a))


def export_table(profile: LegalProfile) -> str:
    """Deterministic sorted listing, one line per permitted table row.

    Columns: state | event | actor | guard | next | effects. Rows with more
    than one arm join the per-arm values with ';' column-wise.
    """
    lines = []
    for row in profile.rows():
        event_name = row.event.value if row.mode is None else f"{row.event.value}({row.mode.value})"
        states = ";".join(a.source.value for a in row.arms)
        actors = ";".join(",".join(sorted(r.value for r in a.actors)) for a in row.arms)
        guards = ";".join("&".join(a.guards) if a.guards else "-" for a in row.arms)
        targets = ";".join(a.target.value for a in row.arms)
        effects = ";".join("+".join(e.value for e in a.effects) if a.effects else "-" for a in row.arms)
        lines.append(" | ".join((states, event_name, actors, guards, targets, effects)))
    lines.sort()
    return "\n".join(lines) + "\n"
