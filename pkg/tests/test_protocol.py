"""Wire codec laws, session ordering rules, link health classification."""

from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avcc import protocol
from avcc.fsm import (
    ACTIVATED_MRC,
    MONITORED,
    PREPARED,
    AssistanceKind,
    Effect,
    Event,
    EventKind,
    GuardContext,
    GuardFailed,
    Role,
    StateKind,
    TransitionResult,
    VehicleState,
    assistance,
    remote_driving,
)
from avcc.protocol import (
    ClassificationQuery,
    Command,
    CommandAck,
    DecodeError,
    DriveFrame,
    DuplicateMsgId,
    EncodeError,
    GuardOverride,
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
    SeqRegression,
    SessionValidator,
    Telemetry,
    TransitionReport,
    decode,
    decode_lines,
    encode,
    heartbeat_monitor,
)


def msg(body, msg_id=1, seq=1, sent_at=0, vehicle_id="v1") -> Message:
    return Message(msg_id=msg_id, seq=seq, sent_at=sent_at, vehicle_id=vehicle_id, body=body)


# --- pinned encodings ---------------------------------------------------------


def test_heartbeat_exact_bytes():
    line = encode(msg(Heartbeat()))
    assert line == b'{"msg_id":1,"seq":1,"sent_at":0,"vehicle_id":"v1","body":{"type":"heartbeat"}}\n'


def test_telemetry_naming():
    body = Telemetry(state=MONITORED, lat=0.0, lon=0.0, speed=3.5, link_quality=0.9)
    raw = encode(msg(body))
    assert b'"type":"telemetry"' in raw
    assert b'"state":"monitored_automated_driving"' in raw
    assert raw.endswith(b"\n") and raw.count(b"\n") == 1
    assert b"\r" not in raw


def test_maneuver_state_naming():
    state = VehicleState(StateKind.ALTERNATIVE_MANEUVER_ACTIVE, assistance(AssistanceKind.OBJECT_CLASSIFICATION))
    raw = encode(msg(Telemetry(state=state, lat=1.0, lon=2.0, speed=0.0, link_quality=1.0)))
    assert b'"alternative_maneuver_active/remote_assistance/object_classification"' in raw


# --- encode validation ----------------------------------------------------------


def test_drive_frame_range_checks():
    with pytest.raises(EncodeError):
        encode(msg(DriveFrame(steering=2.0, throttle=0.0, brake=0.0)))
    with pytest.raises(EncodeError):
        encode(msg(DriveFrame(steering=0.0, throttle=0.0, brake=-0.5)))
    encode(msg(DriveFrame(steering=-1.0, throttle=1.0, brake=0.0)))  # extremes pass


def test_abort_frame_must_be_all_zero():
    with pytest.raises(EncodeError):
        encode(msg(DriveFrame(steering=0.0, throttle=0.4, brake=0.0, abort=True)))
    encode(msg(DriveFrame(steering=0.0, throttle=0.0, brake=0.0, abort=True)))


def test_nan_and_inf_rejected():
    for bad in (math.nan, math.inf, -math.inf):
        with pytest.raises(EncodeError):
            encode(msg(Telemetry(state=PREPARED, lat=bad, lon=0.0, speed=0.0, link_quality=1.0)))


def test_envelope_range_checks():
    with pytest.raises(EncodeError):
        encode(msg(Heartbeat(), msg_id=-1))
    with pytest.raises(EncodeError):
        encode(msg(Heartbeat(), seq=2**64))
    encode(msg(Heartbeat(), msg_id=2**64 - 1))


def test_vehicle_scoped_bodies_need_vehicle_id():
    with pytest.raises(EncodeError):
        encode(msg(InteractionRequest(reason="mrm"), vehicle_id=""))
    encode(msg(Heartbeat(), vehicle_id=""))  # heartbeat is connection-scoped


def test_ack_shape_enforced():
    with pytest.raises(EncodeError):
        encode(msg(CommandAck(ref_msg_id=1, ok=True)))  # ok without next
    with pytest.raises(EncodeError):
        encode(msg(CommandAck(ref_msg_id=1, ok=False)))  # refusal without error


def test_proposal_ids_must_be_dense():
    opts = (ManeuverOption(0, "pass_left", True), ManeuverOption(2, "wait", False))
    with pytest.raises(EncodeError):
        encode(msg(ManeuverProposal(options=opts)))


# --- decode behavior --------------------------------------------------------------


def test_unknown_body_type_rejected():
    line = b'{"msg_id":1,"seq":1,"sent_at":0,"vehicle_id":"v1","body":{"type":"warp_drive"}}\n'
    with pytest.raises(DecodeError):
        decode(line)


def test_extra_fields_ignored():
    line = b'{"msg_id":1,"seq":1,"sent_at":0,"vehicle_id":"v1","future":"x","body":{"type":"heartbeat","pad":9}}\n'
    assert decode(line) == msg(Heartbeat())


def test_bad_json_reports_position():
    with pytest.raises(DecodeError) as exc:
        decode(b'{"msg_id":1,')
    assert exc.value.position > 0


def test_decode_validates_ranges():
    line = b'{"msg_id":-1,"seq":1,"sent_at":0,"vehicle_id":"v1","body":{"type":"heartbeat"}}\n'
    with pytest.raises(DecodeError):
        decode(line)
    bad_state = b'{"msg_id":1,"seq":1,"sent_at":0,"vehicle_id":"v1","body":{"type":"hello","profile":"generic","state":"hovering"}}\n'
    with pytest.raises(DecodeError):
        decode(bad_state)


def test_decode_rejects_invalid_utf8():
    with pytest.raises(DecodeError):
        decode(b'\xff\xfe{"msg_id":1}')


def test_decode_lines_splits_buffer():
    buffer = encode(msg(Heartbeat(), seq=1)) + encode(msg(Heartbeat(), msg_id=2, seq=2))
    out = decode_lines(buffer)
    assert [m.seq for m in out] == [1, 2]


# --- round-trip property ------------------------------------------------------------

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
signed_unit = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)
u64 = st.integers(min_value=0, max_value=2**64 - 1)
name_text = st.text(min_size=1, max_size=20)

states = st.sampled_from(
    [
        VehicleState(StateKind.INITIAL),
        PREPARED,
        ACTIVATED_MRC,
        MONITORED,
        VehicleState(StateKind.ALTERNATIVE_MANEUVER_ACTIVE, remote_driving()),
        VehicleState(StateKind.ALTERNATIVE_MANEUVER_ACTIVE, assistance(AssistanceKind.MANEUVER_PROPOSAL)),
    ]
)

events = st.builds(
    lambda kind, actor: Event(kind, actor),
    st.sampled_from([k for k in EventKind if k is not EventKind.BEGIN_ALTERNATIVE_MANEUVER]),
    st.sampled_from(list(Role)),
) | st.builds(
    lambda actor, mode: Event(EventKind.BEGIN_ALTERNATIVE_MANEUVER, actor, mode),
    st.sampled_from(list(Role)),
    st.sampled_from([remote_driving(), assistance(AssistanceKind.MANEUVER_CLEARANCE)]),
)

overrides = st.builds(
    GuardOverride,
    trajectory_valid=st.none() | st.booleans(),
    mrc_reason_remaining=st.none() | st.booleans(),
    operator_attached=st.none() | st.booleans(),
    link_quality=st.none() | unit,
    ads_functions_available=st.none() | st.booleans(),
)

options = st.lists(
    st.builds(
        lambda i, d, v, o: (d, v, o),
        st.integers(),
        st.sampled_from(["pass_left", "pass_right", "wait", "creep"]),
        st.booleans(),
        st.booleans(),
    ),
    max_size=4,
).map(lambda items: tuple(ManeuverOption(i, d, v, o) for i, (d, v, o) in enumerate(items)))

bodies = st.one_of(
    st.builds(
        Telemetry,
        state=states,
        lat=finite,
        lon=finite,
        speed=finite,
        link_quality=unit,
        trajectory_valid=st.none() | st.booleans(),
    ),
    st.builds(InteractionRequest, reason=name_text),
    st.builds(MonitoringRequest, origin=st.sampled_from([Role.ADS, Role.FLEET_MANAGER]), reason=st.text(max_size=10)),
    st.builds(Command, event=events, ctx_override=st.none() | overrides),
    st.builds(
        CommandAck.success,
        u64,
        st.builds(TransitionResult, states, st.tuples() | st.tuples(st.sampled_from(list(Effect)))),
    ),
    st.builds(CommandAck.refusal, u64, st.sampled_from(["invalid_transition", "guard_failed", "no_session"]), st.text(max_size=10)),
    st.builds(DriveFrame, steering=signed_unit, throttle=signed_unit, brake=unit, abort=st.just(False)),
    st.builds(
        ManeuverProposal,
        options=options,
        classification_query=st.none() | st.builds(ClassificationQuery, query_id=name_text, subject=name_text),
    ),
    st.builds(ManeuverDecision, selected=st.none() | st.integers(min_value=0, max_value=10), confirm_odd_exit=st.booleans()),
    st.just(Heartbeat()),
    st.builds(Hello, profile=st.sampled_from(["generic", "german"]), state=states),
    st.builds(ObjectClassification, query_id=name_text, label=name_text),
    st.builds(
        TransitionReport,
        event=events,
        ctx=st.builds(
            GuardContext,
            trajectory_valid=st.booleans(),
            mrc_reason_remaining=st.booleans(),
            operator_attached=st.booleans(),
            link_quality=unit,
            ads_functions_available=st.booleans(),
        ),
        from_state=states,
        to_state=states,
        effects=st.tuples() | st.tuples(st.sampled_from(list(Effect))),
    ),
)

messages = st.builds(
    Message,
    msg_id=u64,
    seq=u64,
    sent_at=u64,
    vehicle_id=name_text,
    body=bodies,
)


@settings(max_examples=400)
@given(messages)
def test_round_trip_identity(message):
    assert decode(encode(message)) == message


@given(messages)
def test_encode_is_single_clean_line(message):
    raw = encode(message)
    assert raw.endswith(b"\n")
    assert b"\n" not in raw[:-1]
    assert b"\r" not in raw
    raw.decode("utf-8")


# --- session ordering ---------------------------------------------------------------


def test_seq_regression_rejected():
    validator = SessionValidator()
    validator.admit(msg(Heartbeat(), msg_id=1, seq=5))
    with pytest.raises(SeqRegression):
        validator.admit(msg(Heartbeat(), msg_id=2, seq=4))


def test_seq_must_strictly_increase():
    validator = SessionValidator()
    validator.admit(msg(Heartbeat(), msg_id=1, seq=1))
    with pytest.raises(SeqRegression):
        validator.admit(msg(Heartbeat(), msg_id=2, seq=1))


def test_duplicate_msg_id_rejected():
    validator = SessionValidator()
    validator.admit(msg(Heartbeat(), msg_id=7, seq=1))
    with pytest.raises(DuplicateMsgId):
        validator.admit(msg(Heartbeat(), msg_id=7, seq=2))


@given(st.lists(st.integers(min_value=1, max_value=50), min_size=1, max_size=20, unique=True))
def test_validator_accepts_any_strictly_increasing_run(seqs):
    validator = SessionValidator()
    for i, s in enumerate(sorted(seqs)):
        validator.admit(msg(Heartbeat(), msg_id=i + 1, seq=s))
    assert validator.last_seq == max(seqs)


# --- heartbeat classification ----------------------------------------------------------


def test_heartbeat_monitor_bands():
    assert heartbeat_monitor(0, 100, 1000) is LinkStatus.ALIVE
    assert heartbeat_monitor(0, 700, 1000) is LinkStatus.DEGRADED
    assert heartbeat_monitor(0, 1500, 1000) is LinkStatus.LOST


def test_heartbeat_monitor_boundaries():
    assert heartbeat_monitor(0, 499, 1000) is LinkStatus.ALIVE
    assert heartbeat_monitor(0, 500, 1000) is LinkStatus.DEGRADED
    assert heartbeat_monitor(0, 1000, 1000) is LinkStatus.LOST
    assert heartbeat_monitor(5, 5, 1000) is LinkStatus.ALIVE


def test_heartbeat_monitor_rejects_time_travel():
    with pytest.raises(ValueError):
        heartbeat_monitor(10, 5, 1000)


def test_default_timing_constants():
    assert protocol.HEARTBEAT_PERIOD_MS == 500
    assert protocol.HEARTBEAT_TIMEOUT_MS == 2000
    assert heartbeat_monitor(0, 1999) is LinkStatus.DEGRADED
    assert heartbeat_monitor(0, 2000) is LinkStatus.LOST


# --- ack helpers --------------------------------------------------------------------


def test_refusal_ack_restores_error():
    ack = CommandAck.refusal(3, GuardFailed("link_quality"))
    back = decode(encode(msg(ack))).body
    err = back.to_error()
    assert isinstance(err, GuardFailed)
    assert err.predicate == "link_quality"


def test_success_ack_has_no_error():
    ack = CommandAck.success(9, TransitionResult(next=MONITORED))
    assert ack.to_error() is None
    assert decode(encode(msg(ack))).body.next == MONITORED


def test_guard_override_merge():
    base = GuardContext()
    merged = GuardOverride(operator_attached=True, link_quality=0.4).merge(base)
    assert merged.operator_attached and merged.link_quality == 0.4
    assert merged.trajectory_valid == base.trajectory_valid
    assert GuardOverride().merge(base) == base


def test_message_factory_stamps_monotone_ids():
    factory = MessageFactory(vehicle_id="v1", id_prefix=3)
    a = factory.build(Heartbeat(), sent_at=0)
    b = factory.build(Heartbeat(), sent_at=1)
    assert (a.seq, b.seq) == (1, 2)
    assert a.msg_id != b.msg_id
    validator = SessionValidator()
    validator.admit(a)
    validator.admit(b)
