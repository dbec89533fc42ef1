// NDJSON message framing shared with the vehicle wire: one JSON object per
// line, envelope fields in fixed order, body discriminated by `type`.

export type Role =
  | "remote_operator"
  | "fleet_manager"
  | "field_operator"
  | "ads"
  | "system";

export interface WireEvent {
  kind: string;
  actor: Role;
  mode?: string;
}

export interface CommandBody {
  type: "command";
  event: WireEvent;
  ctx_override?: Record<string, unknown>;
}

export interface CommandAckBody {
  type: "command_ack";
  ref_msg_id: number;
  ok: boolean;
  next?: string;
  effects?: string[];
  error?: string;
  detail?: string;
}

export interface TelemetryBody {
  type: "telemetry";
  state: string;
  lat: number;
  lon: number;
  speed: number;
  link_quality: number;
  trajectory_valid?: boolean;
}

export interface TransitionReportBody {
  type: "transition_report";
  event: WireEvent;
  ctx: Record<string, unknown>;
  from_state: string;
  to_state: string;
  effects: string[];
  transcript?: Record<string, unknown>;
}

export interface InteractionRequestBody {
  type: "interaction_request";
  reason: string;
}

export interface MonitoringRequestBody {
  type: "monitoring_request";
  origin: Role;
  reason: string;
}

export interface ManeuverOptionView {
  option_id: number;
  descriptor: string;
  viable: boolean;
  requires_odd_exit: boolean;
}

export interface ManeuverProposalBody {
  type: "maneuver_proposal";
  options: ManeuverOptionView[];
  classification_query?: { query_id: string; subject: string };
}

export interface ManeuverDecisionBody {
  type: "maneuver_decision";
  selected: number | null;
  confirm_odd_exit: boolean;
}

export interface ObjectClassificationBody {
  type: "object_classification";
  query_id: string;
  label: string;
}

export interface DriveFrameBody {
  type: "drive_frame";
  steering: number;
  throttle: number;
  brake: number;
  abort: boolean;
}

export interface HeartbeatBody {
  type: "heartbeat";
}

export interface HelloBody {
  type: "hello";
  profile: string;
  state: string;
}

export type Body =
  | CommandBody
  | CommandAckBody
  | TelemetryBody
  | TransitionReportBody
  | InteractionRequestBody
  | MonitoringRequestBody
  | ManeuverProposalBody
  | ManeuverDecisionBody
  | ObjectClassificationBody
  | DriveFrameBody
  | HeartbeatBody
  | HelloBody;

export interface Envelope {
  msg_id: number;
  seq: number;
  sent_at: number;
  vehicle_id: string;
  body: Body;
}

export class WireError extends Error {}

export function encodeMessage(msg: Envelope): string {
  // insertion order gives the canonical msg_id, seq, sent_at, vehicle_id, body layout
  return JSON.stringify({
    msg_id: msg.msg_id,
    seq: msg.seq,
    sent_at: msg.sent_at,
    vehicle_id: msg.vehicle_id,
    body: msg.body,
  });
}

function requireNumber(raw: Record<string, unknown>, name: string): number {
  const value = raw[name];
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new WireError(`${name} must be a finite number`);
  }
  return value;
}

function requireString(raw: Record<string, unknown>, name: string): string {
  const value = raw[name];
  if (typeof value !== "string") {
    throw new WireError(`${name} must be a string`);
  }
  return value;
}

const BODY_TYPES = new Set([
  "command",
  "command_ack",
  "telemetry",
  "transition_report",
  "interaction_request",
  "monitoring_request",
  "maneuver_proposal",
  "maneuver_decision",
  "object_classification",
  "drive_frame",
  "heartbeat",
  "hello",
]);

export function decodeMessage(line: string): Envelope {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    throw new WireError(`bad JSON: ${err instanceof Error ? err.message : String(err)}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new WireError("top level must be an object");
  }
  const obj = raw as Record<string, unknown>;
  const body = obj["body"];
  if (typeof body !== "object" || body === null) {
    throw new WireError("missing body");
  }
  const bodyType = (body as Record<string, unknown>)["type"];
  if (typeof bodyType !== "string" || !BODY_TYPES.has(bodyType)) {
    throw new WireError(`unknown body type ${String(bodyType)}`);
  }
  return {
    msg_id: requireNumber(obj, "msg_id"),
    seq: requireNumber(obj, "seq"),
    sent_at: requireNumber(obj, "sent_at"),
    vehicle_id: requireString(obj, "vehicle_id"),
    body: body as Body,
  };
}

/** Stamps outgoing envelopes: msg_id = prefix * 1e6 + n, seq strictly increasing. */
export class MessageFactory {
  private next = 1;
  private seq = 0;

  constructor(private idPrefix: number) {}

  build(vehicleId: string, body: Body, sentAt: number = Date.now()): Envelope {
    this.seq += 1;
    const msgId = this.idPrefix * 1_000_000 + this.next;
    this.next += 1;
    return {
      msg_id: msgId,
      seq: this.seq,
      sent_at: Math.trunc(sentAt),
      vehicle_id: vehicleId,
      body,
    };
  }
}
