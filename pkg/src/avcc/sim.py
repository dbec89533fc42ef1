"""Headless end-to-end harness: center + agents + scripted operators.

One process, one stepped clock, zero network. Operators are deterministic
policy machines acting once per tick; every run with the same inputs yields
byte-identical logs after timestamp normalization (and before it, since the
clock is simulated).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from . import fsm
from .agent import Scenario, VehicleAgent, load_scenario
from .center import CenterError, ControlCenter, RequestKind, RequestStatus
from .eventlog import EventLog, LogKind, ReplayDivergence, audit_pairing, replay
from .fsm import AssistanceKind, EventKind, LegalProfile, ManeuverMode, ManeuverModeKind, StateKind
from .protocol import DriveFrame, ManeuverDecision, ObjectClassification

DEFAULT_TICK_S = 0.1
DEFAULT_FM_SCAN_PERIOD_S = 1.0

POLICY_NAMES = ("auto_resolve", "assist_only", "ignore")

ASSIST_MODE = ManeuverMode(ManeuverModeKind.REMOTE_ASSISTANCE, AssistanceKind.MANEUVER_PROPOSAL)
DRIVE_MODE = ManeuverMode(ManeuverModeKind.REMOTE_DRIVING)


class PolicyError(Exception):
    pass


@dataclass(frozen=True)
class OperatorPolicy:
    name: str = "auto_resolve"
    claim_delay_s: float = 0.0
    prefer_mode: Optional[ManeuverModeKind] = None
    fallback: bool = True
    max_attempts: int = 2

    def __post_init__(self) -> None:
        if self.name not in POLICY_NAMES:
            raise PolicyError(f"unknown policy {self.name!r}")
        if self.name == "assist_only" and self.prefer_mode is ManeuverModeKind.REMOTE_DRIVING:
            raise PolicyError("assist_only never selects remote driving")

    @property
    def preferred(self) -> ManeuverModeKind:
        if self.name == "assist_only":
            return ManeuverModeKind.REMOTE_ASSISTANCE
        return self.prefer_mode or ManeuverModeKind.REMOTE_ASSISTANCE


class ScriptedOperator:
    """Deterministic stand-in for a human remote operator."""

    def __init__(self, operator_id: str, policy: OperatorPolicy, sim: "Simulation"):
        self.operator_id = operator_id
        self.policy = policy
        self.sim = sim
        self.memo: dict[str, dict] = {}

    def act(self) -> None:
        if self.policy.name == "ignore":
            return
        center = self.sim.center
        session = center.session_for_operator(self.operator_id)
        if session is None:
            session = self._claim_next()
            if session is None:
                return
        memo = self.memo.setdefault(session.session_id, {"attempts": 0, "kind": None, "winddown": False})
        record = center.vehicles.get(session.vehicle_id)
        if record is None:
            return
        try:
            self._drive_session(session, memo, record)
        except CenterError:
            pass  # raced with an auto-close; next tick re-reads the world

    def _claim_next(self):
        center = self.sim.center
        for request in center.open_requests():
            if self.sim.now - request.created_at < self.policy.claim_delay_s:
                continue
            try:
                session = center.claim(self.operator_id, self.sim.now, request_id=request.request_id)
            except CenterError:
                continue
            self.memo[session.session_id] = {"attempts": 0, "kind": request.kind, "winddown": False}
            return session
        return None

    def _drive_session(self, session, memo: dict, record) -> None:
        center = self.sim.center
        sid = session.session_id
        kind = record.last_state.kind
        try:
            if kind is StateKind.PREPARED:
                center.issue_command(sid, EventKind.START_SERVICE, self.sim.now)
            elif kind is StateKind.DEACTIVATED_MRC:
                if memo["winddown"]:
                    center.issue_command(sid, EventKind.END_SERVICE, self.sim.now)
                else:
                    center.issue_command(sid, EventKind.ACTIVATE_ADS, self.sim.now)
            elif kind is StateKind.ACTIVATED_MRC:
                if memo["kind"] is RequestKind.MRM or memo.get("engage_blocked"):
                    if memo["attempts"] < self.policy.max_attempts:
                        self._begin_maneuver(sid, memo)
                    else:
                        # give up: park the vehicle and call it a day
                        memo["winddown"] = True
                        center.issue_command(sid, EventKind.DEACTIVATE_ADS, self.sim.now)
                else:
                    ack = center.issue_command(sid, EventKind.ENGAGE_AUTOMATION, self.sim.now)
                    if not ack.ok:
                        # a lingering MRC reason blocks re-engagement; treat as an MRM
                        memo["engage_blocked"] = True
            elif kind is StateKind.UNMONITORED_AUTOMATED_DRIVING:
                center.issue_command(sid, EventKind.START_MONITORING, self.sim.now)
            elif kind is StateKind.MONITORED_AUTOMATED_DRIVING:
                center.issue_command(sid, EventKind.END_MONITORING, self.sim.now)
            elif kind is StateKind.ALTERNATIVE_MANEUVER_ACTIVE:
                self._work_maneuver(sid, record)
            elif kind is StateKind.INITIAL:
                center.release(sid, self.sim.now)
        except fsm.TransitionError:
            pass  # refusal is acked and audited; retry next tick

    def _begin_maneuver(self, sid: str, memo: dict) -> None:
        center = self.sim.center
        memo["attempts"] += 1
        mode = DRIVE_MODE if self.policy.preferred is ManeuverModeKind.REMOTE_DRIVING else ASSIST_MODE
        try:
            ack = center.issue_command(sid, EventKind.BEGIN_ALTERNATIVE_MANEUVER, self.sim.now, mode=mode)
        except fsm.ForbiddenByProfile:
            self.sim.profile_refusals += 1
            if not self.policy.fallback:
                self.sim.center.log.append(
                    LogKind.NOTE,
                    {"error": "forbidden_by_profile", "mode": mode.to_wire(), "operator": self.operator_id},
                    at=int(self.sim.now * 1000),
                    vehicle_id=center.sessions[sid].vehicle_id,
                )
                memo["attempts"] = self.policy.max_attempts
                return
            ack = center.issue_command(sid, EventKind.BEGIN_ALTERNATIVE_MANEUVER, self.sim.now, mode=ASSIST_MODE)
            return
        if not ack.ok and mode is DRIVE_MODE and self.policy.fallback:
            # admission refused (commonly link quality); assistance instead
            center.issue_command(sid, EventKind.BEGIN_ALTERNATIVE_MANEUVER, self.sim.now, mode=ASSIST_MODE)

    def _work_maneuver(self, sid: str, record) -> None:
        center = self.sim.center
        state_mode = record.last_state.mode
        if state_mode is not None and state_mode.kind is ManeuverModeKind.REMOTE_DRIVING:
            center.forward_to_vehicle(sid, DriveFrame(steering=0.0, throttle=1.0, brake=0.0), self.sim.now)
            return
        proposal = record.pending_proposal
        if proposal is None:
            return  # decision timeout will close it out
        if proposal.classification_query is not None:
            label = self.sim.drivable_label(record.vehicle_id)
            if label is not None:
                center.forward_to_vehicle(
                    sid,
                    ObjectClassification(query_id=proposal.classification_query.query_id, label=label),
                    self.sim.now,
                )
                return
        viable = [o for o in proposal.options if o.viable]
        if viable:
            decision = ManeuverDecision(selected=viable[0].option_id, confirm_odd_exit=viable[0].requires_odd_exit)
        else:
            decision = ManeuverDecision(selected=None)
        center.forward_to_vehicle(sid, decision, self.sim.now)


@dataclass
class SimResult:
    exit_code: int
    summary: dict
    violations: list[str]
    log: EventLog


class Simulation:
    def __init__(
        self,
        scenarios: list[Scenario | dict | str | Path],
        profile: LegalProfile = fsm.GENERIC,
        policy: OperatorPolicy = OperatorPolicy(),
        *,
        seed: int = 0,
        operators: Optional[int] = None,
        tick: float = DEFAULT_TICK_S,
        log_path: Optional[Path] = None,
        fm_scan_period_s: float = DEFAULT_FM_SCAN_PERIOD_S,
        require_resolution: bool = False,
        fm_intervention: bool = False,
        auto_registration: bool = False,
        link_threshold: float = fsm.DEFAULT_LINK_THRESHOLD,
    ):
        self.profile = profile
        self.policy = policy
        self.seed = seed
        self.tick = tick
        self.require_resolution = require_resolution
        self.now = 0.0
        self.ticks = 0
        self.violations: list[str] = []
        self.profile_refusals = 0
        self.fm_scan_period_s = fm_scan_period_s
        self._last_scan = 0.0

        self.log = EventLog(log_path)
        self.log.append(
            LogKind.NOTE,
            {"profile": profile.name, "seed": seed, "policy": policy.name, "tick": tick},
            at=0,
        )
        self.center = ControlCenter(
            profile,
            log=self.log,
            transport=self._deliver,
            fm_intervention=fm_intervention,
            auto_registration=auto_registration,
            link_threshold=link_threshold,
        )
        self.agents: dict[str, VehicleAgent] = {}
        for i, source in enumerate(scenarios):
            scenario = source if isinstance(source, Scenario) else load_scenario(source)
            agent = VehicleAgent(
                scenario,
                profile,
                fm_intervention=fm_intervention,
                link_threshold=link_threshold,
                id_prefix=i + 1,
            )
            self.agents[scenario.vehicle_id] = agent
        count = operators if operators is not None else max(1, len(self.agents))
        self.operators = [ScriptedOperator(f"op{i + 1}", policy, self) for i in range(count)]

    # --- plumbing ----------------------------------------------------------

    def _deliver(self, vehicle_id: str, message):
        return self.agents[vehicle_id].handle_message(message, self.now)

    def drivable_label(self, vehicle_id: str) -> Optional[str]:
        labels = self.agents[vehicle_id].scenario.labels
        for label in sorted(labels):
            if labels[label]:
                return label
        return next(iter(sorted(labels)), None)

    def connect_all(self) -> None:
        for vehicle_id in sorted(self.agents):
            self.center.ingest(self.agents[vehicle_id].start(self.now), self.now)
        self._check_invariants()

    # --- stepping --------------------------------------------------------------

    def step(self) -> None:
        self.now = round(self.now + self.tick, 9)
        self.ticks += 1
        for vehicle_id in sorted(self.agents):
            self.center.ingest(self.agents[vehicle_id].step(self.now), self.now)
        if self.now - self._last_scan >= self.fm_scan_period_s:
            self._last_scan = self.now
            self.center.fm_scan(self.now)
        for operator in self.operators:
            operator.act()
        self._check_invariants()

    def run(self, duration_s: float) -> SimResult:
        self.connect_all()
        while self.now < duration_s - self.tick / 2:
            self.step()
        return self.finish()

    def run_until(self, predicate: Callable[[], bool], timeout_s: float, label: str) -> None:
        deadline = self.now + timeout_s
        while not predicate():
            if self.now >= deadline:
                self._violate(f"timeout waiting for {label}")
                return
            self.step()

    # --- invariant monitors ---------------------------------------------------------

    def _violate(self, name: str) -> None:
        if name not in self.violations:
            self.violations.append(name)

    def _check_invariants(self) -> None:
        center = self.center
        by_vehicle: dict[str, int] = {}
        by_operator: dict[str, int] = {}
        for session in center.sessions.values():
            if not session.open:
                continue
            by_vehicle[session.vehicle_id] = by_vehicle.get(session.vehicle_id, 0) + 1
            by_operator[session.operator_id] = by_operator.get(session.operator_id, 0) + 1
        if any(n > 1 for n in by_vehicle.values()):
            self._violate("session_exclusivity_vehicle")
        if any(n > 1 for n in by_operator.values()):
            self._violate("session_exclusivity_operator")
        for vehicle_id, agent in self.agents.items():
            record = center.vehicles.get(vehicle_id)
            if record is None:
                continue
            if record.last_state != agent.state:
                self._violate("state_mirror_divergence")
            kind = record.last_state.kind
            has_session = by_vehicle.get(vehicle_id, 0) > 0
            if kind in (StateKind.MONITORED_AUTOMATED_DRIVING, StateKind.ALTERNATIVE_MANEUVER_ACTIVE) and not has_session:
                self._violate("attended_state_without_session")
            if kind is StateKind.UNMONITORED_AUTOMATED_DRIVING and has_session:
                self._violate("unmonitored_with_session")
        if center.desync_log:
            self._violate("center_desync")

    def _post_run_checks(self) -> None:
        entries = self.log.entries
        if audit_pairing(entries):
            self._violate("command_ack_pairing")
        for entry in entries:
            if entry.kind is not LogKind.TRANSITION:
                continue
            event_kind = entry.payload["event"]["kind"]
            if event_kind in ("trigger_mrm", "maneuver_failed") and not entry.payload["to_state"].startswith(
                "activated_mrc"
            ):
                self._violate("failure_must_land_in_mrc")
        try:
            replay(entries)
        except ReplayDivergence:
            self._violate("replay_divergence")
        if self.require_resolution and self._unresolved_requests():
            self._violate("unresolved_requests")

    def _unresolved_requests(self) -> int:
        return sum(1 for r in self.center.requests.values() if r.status is not RequestStatus.RESOLVED)

    # --- reporting ---------------------------------------------------------------

    def finish(self) -> SimResult:
        self._post_run_checks()
        resolved_mrms = self._resolved_mrms()
        vehicles = {}
        for vehicle_id in sorted(self.agents):
            agent = self.agents[vehicle_id]
            open_requests = sum(
                1
                for r in self.center.requests.values()
                if r.vehicle_id == vehicle_id and r.status is not RequestStatus.RESOLVED
            )
            vehicles[vehicle_id] = {
                "transitions": agent.transitions_applied,
                "mrms_triggered": agent.mrms_triggered,
                "mrms_resolved": resolved_mrms.get(vehicle_id, 0),
                "final_state": agent.state.to_wire(),
                "position": round(agent.position, 6),
                "skipped_events": list(agent.skipped_events),
                "unresolved_requests": open_requests,
            }
        statuses = [r.status for r in self.center.requests.values()]
        summary = {
            "profile": self.profile.name,
            "policy": self.policy.name,
            "seed": self.seed,
            "ticks": self.ticks,
            "duration_s": round(self.now, 6),
            "vehicles": vehicles,
            "requests": {
                "open": statuses.count(RequestStatus.OPEN),
                "claimed": statuses.count(RequestStatus.CLAIMED),
                "resolved": statuses.count(RequestStatus.RESOLVED),
            },
            "profile_refusals": self.profile_refusals,
            "violations": list(self.violations),
        }
        exit_code = 0 if not self.violations else 1
        summary["exit_code"] = exit_code
        self.log.close()
        return SimResult(exit_code=exit_code, summary=summary, violations=list(self.violations), log=self.log)

    def _resolved_mrms(self) -> dict[str, int]:
        reopened = {r.supersedes for r in self.center.requests.values() if r.supersedes}
        counts: dict[str, int] = {}
        for request in self.center.requests.values():
            if (
                request.kind is RequestKind.MRM
                and request.status is RequestStatus.RESOLVED
                and request.request_id not in reopened
            ):
                counts[request.vehicle_id] = counts.get(request.vehicle_id, 0) + 1
        return counts


def run_sim(
    scenarios: list,
    profile: LegalProfile = fsm.GENERIC,
    policy: OperatorPolicy = OperatorPolicy(),
    *,
    seed: int = 0,
    duration_s: float = 60.0,
    **kw,
) -> SimResult:
    sim = Simulation(scenarios, profile, policy, seed=seed, **kw)
    return sim.run(duration_s)


# --- the reference walkthrough ----------------------------------------------------------

WALKTHROUGH_SCENARIO = {
    "vehicle_id": "walker",
    "route_length": 400.0,
    "cruise_speed": 10.0,
    "events": [
        {"kind": "ads_mrm", "at": 3.0, "reason": "obstacle_blocking_lane"},
        {"kind": "ads_mrm", "at": 8.0, "reason": "journey_complete"},
    ],
    "maneuver_options": [
        {"descriptor": "hold position", "viable": False},
        {"descriptor": "bypass obstacle", "viable": True},
    ],
}


def run_walkthrough(profile: LegalProfile = fsm.GENERIC, log_path: Optional[Path] = None) -> SimResult:
    """Scripted full service day: start through MRM, assistance, and shutdown."""
    sim = Simulation(
        [dict(WALKTHROUGH_SCENARIO)],
        profile,
        OperatorPolicy("ignore"),
        log_path=log_path,
        operators=0,
    )
    center = sim.center
    sim.connect_all()
    vid = WALKTHROUGH_SCENARIO["vehicle_id"]
    record = center.vehicles[vid]

    def expect(ack, state_kind):
        if not ack.ok or record.last_state.kind is not state_kind:
            sim._violate(f"walkthrough expected {state_kind.value}, got {record.last_state.to_wire()}")

    start_request = next(r for r in center.open_requests() if r.kind is RequestKind.SERVICE_START)
    s1 = center.claim("ro1", sim.now, request_id=start_request.request_id)
    expect(center.issue_command(s1.session_id, EventKind.START_SERVICE, sim.now), StateKind.DEACTIVATED_MRC)
    expect(center.issue_command(s1.session_id, EventKind.ACTIVATE_ADS, sim.now), StateKind.ACTIVATED_MRC)
    expect(center.issue_command(s1.session_id, EventKind.ENGAGE_AUTOMATION, sim.now), StateKind.MONITORED_AUTOMATED_DRIVING)
    expect(center.issue_command(s1.session_id, EventKind.END_MONITORING, sim.now), StateKind.UNMONITORED_AUTOMATED_DRIVING)

    sim.run_until(lambda: record.last_state.kind is StateKind.ACTIVATED_MRC, 6.0, "scripted mrm")
    mrm = next((r for r in center.open_requests() if r.kind is RequestKind.MRM), None)
    if mrm is None:
        sim._violate("walkthrough missing interaction request")
        return sim.finish()
    s2 = center.claim("ro1", sim.now, request_id=mrm.request_id)
    ack = center.issue_command(s2.session_id, EventKind.BEGIN_ALTERNATIVE_MANEUVER, sim.now, mode=ASSIST_MODE)
    if not ack.ok:
        sim._violate(f"walkthrough maneuver refused: {ack.error}")
        return sim.finish()
    proposal = record.pending_proposal
    viable = [o for o in proposal.options if o.viable]
    center.forward_to_vehicle(
        s2.session_id,
        ManeuverDecision(selected=viable[0].option_id, confirm_odd_exit=viable[0].requires_odd_exit),
        sim.now,
    )
    if record.last_state.kind is not StateKind.MONITORED_AUTOMATED_DRIVING:
        sim._violate("walkthrough assistance did not resume monitored driving")
    expect(center.issue_command(s2.session_id, EventKind.END_MONITORING, sim.now), StateKind.UNMONITORED_AUTOMATED_DRIVING)

    sim.run_until(lambda: record.last_state.kind is StateKind.ACTIVATED_MRC, 8.0, "journey-complete mrm")
    final = next((r for r in center.open_requests() if r.kind is RequestKind.MRM), None)
    if final is None:
        sim._violate("walkthrough missing final interaction request")
        return sim.finish()
    s3 = center.claim("ro1", sim.now, request_id=final.request_id)
    expect(center.issue_command(s3.session_id, EventKind.DEACTIVATE_ADS, sim.now), StateKind.DEACTIVATED_MRC)
    expect(center.issue_command(s3.session_id, EventKind.END_SERVICE, sim.now), StateKind.INITIAL)
    center.release(s3.session_id, sim.now)
    sim.step()
    return sim.finish()


# --- randomized scenario generation (seeded) ------------------------------------------------


def generate_scenario(rng: random.Random, vehicle_id: str) -> dict:
    """One plausible service day with randomized trouble, loader-valid."""
    route_length = rng.choice([120.0, 200.0, 320.0])
    cruise = rng.choice([5.0, 8.0, 10.0])
    initial = rng.choice(["prepared", "unmonitored_automated_driving"])
    events = []
    t = 0.0
    for _ in range(rng.randint(1, 3)):
        t = round(t + rng.uniform(1.0, 6.0), 1)
        roll = rng.random()
        if roll < 0.45:
            events.append({"kind": "ads_mrm", "at": t, "reason": rng.choice(["sensor_fault", "blocked_lane", "planner_giveup"])})
        elif roll < 0.6:
            events.append({"kind": "ads_monitoring_request", "at": t, "reason": "oddity"})
        elif roll < 0.75:
            events.append({"kind": "link_quality_change", "at": t, "value": round(rng.choice([0.2, 0.4, 0.9]), 2)})
        elif roll < 0.9:
            events.append({"kind": "trajectory_blocked", "at": t, "duration_s": round(rng.uniform(0.5, 3.0), 1)})
        else:
            events.append({"kind": "odd_exit", "at": t})
    option_count = rng.randint(0, 3)
    options = [
        {
            "descriptor": f"option {i}",
            "viable": rng.random() < 0.6,
            "requires_odd_exit": rng.random() < 0.2,
        }
        for i in range(option_count)
    ]
    return {
        "vehicle_id": vehicle_id,
        "route_length": route_length,
        "cruise_speed": cruise,
        "initial_state": initial,
        "events": events,
        "maneuver_options": options,
    }
