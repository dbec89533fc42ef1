"""Alternative-maneuver workflows shared by center and agent.

Covers the three assistance shapes (clearance, proposal selection, object
classification) and remote-driving stream supervision with simplified
longitudinal kinematics. One live session per vehicle; the caller serializes
decisions and frames with the vehicle's event queue.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Optional, Sequence

from .fsm import (
    AssistanceKind,
    ForbiddenByProfile,
    LegalProfile,
    ManeuverMode,
    ManeuverModeKind,
    EventKind,
)
from .protocol import ClassificationQuery, DriveFrame, LinkStatus, ManeuverDecision, ManeuverOption

DEFAULT_CLEARANCE_DISTANCE_M = 20.0
DEFAULT_DRIVE_V_MAX = 4.0
DEFAULT_DRIVE_DT = 0.1
DEFAULT_DECISION_TIMEOUT_S = 30.0


class StaleDecision(Exception):
    pass


class UnknownOption(Exception):
    pass


class OddConfirmRequired(Exception):
    """Selected option exits the design domain; decision must confirm that."""


class NoPendingQuery(Exception):
    pass


class ProtocolViolation(Exception):
    pass


class OutcomeKind(str, Enum):
    SUCCEEDED = "succeeded"
    FAILED = "failed"


@dataclass(frozen=True)
class ManeuverOutcome:
    kind: OutcomeKind
    reason: str = ""

    @property
    def event_kind(self) -> EventKind:
        if self.kind is OutcomeKind.SUCCEEDED:
            return EventKind.MANEUVER_SUCCEEDED
        return EventKind.MANEUVER_FAILED


def succeeded() -> ManeuverOutcome:
    return ManeuverOutcome(OutcomeKind.SUCCEEDED)


def failed(reason: str) -> ManeuverOutcome:
    return ManeuverOutcome(OutcomeKind.FAILED, reason)


def propose(options: Sequence[ManeuverOption], odd_exit_active: bool = False) -> tuple[ManeuverOption, ...]:
    """Deterministic proposal from scenario options, ids renumbered dense.

    An active design-domain exit taints every viable option: executing any of
    them leaves the ODD, so each demands explicit confirmation later.
    """
    out = []
    for i, option in enumerate(options):
        requires = option.requires_odd_exit or (odd_exit_active and option.viable)
        out.append(replace(option, option_id=i, requires_odd_exit=requires))
    return tuple(out)


class ManeuverSession:
    """Bookkeeping for one alternative maneuver from begin to outcome."""

    def __init__(
        self,
        vehicle_id: str,
        mode: ManeuverMode,
        started_at: float,
        options: Sequence[ManeuverOption] = (),
        *,
        profile: Optional[LegalProfile] = None,
        classification_subject: str = "",
        clearance_distance: float = DEFAULT_CLEARANCE_DISTANCE_M,
        v_max: float = DEFAULT_DRIVE_V_MAX,
        dt: float = DEFAULT_DRIVE_DT,
        decision_timeout_s: float = DEFAULT_DECISION_TIMEOUT_S,
    ):
        if profile is not None and not profile.permits(EventKind.BEGIN_ALTERNATIVE_MANEUVER, mode.kind):
            raise ForbiddenByProfile(f"profile {profile.name} forbids {mode.to_wire()}")
        self.vehicle_id = vehicle_id
        self.mode = mode
        self.started_at = started_at
        self.ended_at: Optional[float] = None
        self.outcome: Optional[ManeuverOutcome] = None
        self.decisions: list[dict] = []
        self.frames_received = 0
        # distance integrates in whole micrometers; accumulating floats would
        # drift below the documented frame-count oracle
        self._distance_um = 0
        self.clearance_distance = clearance_distance
        self.v_max = v_max
        self.dt = dt
        self.decision_timeout_s = decision_timeout_s
        self._options: dict[int, ManeuverOption] = {o.option_id: o for o in options}
        self.pending_query: Optional[ClassificationQuery] = None
        if mode.assistance is AssistanceKind.OBJECT_CLASSIFICATION and classification_subject:
            self.pending_query = ClassificationQuery(query_id=f"{vehicle_id}-q1", subject=classification_subject)

    # --- shared ---------------------------------------------------------

    @property
    def is_driving(self) -> bool:
        return self.mode.kind is ManeuverModeKind.REMOTE_DRIVING

    @property
    def options(self) -> tuple[ManeuverOption, ...]:
        return tuple(self._options[k] for k in sorted(self._options))

    def initial_outcome(self, now: float) -> Optional[ManeuverOutcome]:
        """Assistance with nothing to offer fails on the spot."""
        if not self.is_driving and not self._options:
            return self._finish(failed("no_options"), now)
        return None

    def _finish(self, outcome: ManeuverOutcome, now: float) -> ManeuverOutcome:
        if self.outcome is not None:
            raise ProtocolViolation("outcome already set")
        self.outcome = outcome
        self.ended_at = now
        return outcome

    def check_timeout(self, now: float) -> Optional[ManeuverOutcome]:
        if self.outcome is None and not self.is_driving and now - self.started_at >= self.decision_timeout_s:
            return self._finish(failed("decision_timeout"), now)
        return None

    # --- assistance -------------------------------------------------------

    def decide(self, decision: ManeuverDecision, now: float) -> Optional[ManeuverOutcome]:
        if self.is_driving:
            raise ProtocolViolation("decision during remote driving")
        if self.outcome is not None or not self._options:
            raise StaleDecision("no live proposal")
        if decision.selected is None:
            self.decisions.append({"selected": None, "confirm_odd_exit": decision.confirm_odd_exit})
            return self._finish(failed("rejected"), now)
        option = self._options.get(decision.selected)
        if option is None:
            raise UnknownOption(f"option {decision.selected} not proposed")
        if option.requires_odd_exit and not decision.confirm_odd_exit:
            raise OddConfirmRequired(f"option {option.option_id} exits the design domain")
        self.decisions.append({"selected": decision.selected, "confirm_odd_exit": decision.confirm_odd_exit})
        if option.viable:
            return self._finish(succeeded(), now)
        return self._finish(failed("option_not_viable"), now)

    def classify(self, label: str, drivable_labels: Mapping[str, bool], now: float) -> bool:
        """Record a classification answer; returns whether options changed."""
        if self.pending_query is None or self.outcome is not None:
            raise NoPendingQuery("no classification pending")
        query = self.pending_query
        self.pending_query = None
        drivable = bool(drivable_labels.get(label, False))
        self.decisions.append({"classified": label, "query_id": query.query_id, "drivable": drivable})
        if not drivable:
            return False
        blocked = [i for i in sorted(self._options) if not self._options[i].viable]
        if not blocked:
            return False
        first = blocked[0]  # the option held back by the unknown object
        self._options[first] = replace(self._options[first], viable=True)
        return True

    # --- remote driving ------------------------------------------------------

    @property
    def distance(self) -> float:
        return self._distance_um / 1_000_000

    def feed_frame(self, frame: DriveFrame, link: LinkStatus, now: float) -> Optional[ManeuverOutcome]:
        if self.outcome is not None:
            raise ProtocolViolation("frame after outcome")
        if not self.is_driving:
            raise ProtocolViolation("drive frame during assistance")
        self.frames_received += 1
        if frame.abort:
            return self._finish(failed("aborted"), now)
        if link is LinkStatus.LOST:
            return self._finish(failed("link_lost"), now)
        self._distance_um += round(max(0.0, frame.throttle - frame.brake) * self.v_max * self.dt * 1_000_000)
        if self._distance_um >= round(self.clearance_distance * 1_000_000):
            return self._finish(succeeded(), now)
        return None

    def link_lost(self, now: float) -> Optional[ManeuverOutcome]:
        """Session-layer link loss with no frame in flight."""
        if self.outcome is not None or not self.is_driving:
            return None
        return self._finish(failed("link_lost"), now)

    # --- persistence ------------------------------------------------------------

    def to_payload(self) -> dict:
        return {
            "vehicle_id": self.vehicle_id,
            "mode": self.mode.to_wire(),
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "outcome": None if self.outcome is None else {"kind": self.outcome.kind.value, "reason": self.outcome.reason},
            "decisions": list(self.decisions),
            "frames_received": self.frames_received,
            "distance_um": self._distance_um,
        }


def supervise_drive(
    frames: Sequence[DriveFrame],
    links: Sequence[LinkStatus],
    *,
    clearance_distance: float = DEFAULT_CLEARANCE_DISTANCE_M,
    v_max: float = DEFAULT_DRIVE_V_MAX,
    dt: float = DEFAULT_DRIVE_DT,
) -> ManeuverOutcome:
    """Run a whole frame stream to its outcome (batch form of feed_frame)."""
    from .fsm import remote_driving

    session = ManeuverSession(
        "batch",
        remote_driving(),
        started_at=0.0,
        clearance_distance=clearance_distance,
        v_max=v_max,
        dt=dt,
    )
    for i, frame in enumerate(frames):
        link = links[i] if i < len(links) else LinkStatus.ALIVE
        outcome = session.feed_frame(frame, link, now=i * dt)
        if outcome is not None:
            return outcome
    return failed("stream_ended")
