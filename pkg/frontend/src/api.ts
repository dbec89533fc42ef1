// Thin fetch client for the control-center HTTP surface.

export interface VehicleView {
  vehicle_id: string;
  profile: string;
  state: string;
  link: "alive" | "degraded" | "lost";
  link_quality: number | null;
  lat: number | null;
  lon: number | null;
  speed: number | null;
  needs_operator: boolean;
  anomaly_flags: string[];
  last_seen: number;
}

export interface FleetSnapshot {
  profile: string;
  vehicles: VehicleView[];
}

export interface RequestView {
  request_id: string;
  vehicle_id: string;
  kind: string;
  origin: string;
  reason: string;
  priority: number;
  created_at: number;
  status: string;
  session_id: string | null;
}

export interface SessionView {
  session_id: string;
  operator_id: string;
  role_origin: string;
  vehicle_id: string;
  started_at: number;
  ended_at: number | null;
  request_id: string | null;
}

export interface AffordanceOption {
  kind: string;
  mode: string | null;
  actors: string[];
  guard_blocked: boolean;
  blocked_by: string | null;
}

export interface DisabledAffordance {
  kind: string;
  mode: string | null;
  reason: string;
}

export interface AffordancePayload {
  vehicle_id: string;
  state: string;
  session_id: string | null;
  enabled: AffordanceOption[];
  disabled: DisabledAffordance[];
  /** open maneuver proposal, if the vehicle is waiting on a decision */
  proposal: import("./wire.js").ManeuverProposalBody | null;
}

export interface AckView {
  ref_msg_id: number;
  ok: boolean;
  next?: string;
  effects?: string[];
  error?: string;
  detail?: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

export class CenterClient {
  constructor(private base = "") {}

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.base + path, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const data = await response.json().catch(() => ({}));
    if (!response.ok) {
      const record = data as { error?: string; detail?: string };
      throw new ApiError(response.status, record.error ?? "http_error", record.detail ?? response.statusText);
    }
    return data as T;
  }

  fleet(): Promise<FleetSnapshot> {
    return this.call("GET", "/fleet");
  }

  async requests(): Promise<RequestView[]> {
    const data = await this.call<{ requests: RequestView[] }>("GET", "/requests");
    return data.requests;
  }

  claimRequest(requestId: string, operatorId: string, asRole = "remote_operator"): Promise<SessionView> {
    return this.call("POST", `/requests/${requestId}/claim`, { operator_id: operatorId, as_role: asRole });
  }

  claimVehicle(vehicleId: string, operatorId: string): Promise<SessionView> {
    return this.call("POST", `/vehicles/${vehicleId}/claim`, { operator_id: operatorId });
  }

  command(sessionId: string, kind: string, mode?: string | null): Promise<AckView> {
    return this.call("POST", `/sessions/${sessionId}/command`, { kind, mode: mode ?? null });
  }

  forward(sessionId: string, body: Record<string, unknown>): Promise<{ ack: AckView | null }> {
    return this.call("POST", `/sessions/${sessionId}/forward`, { body });
  }

  release(sessionId: string): Promise<SessionView> {
    return this.call("POST", `/sessions/${sessionId}/release`);
  }

  affordances(vehicleId: string): Promise<AffordancePayload> {
    return this.call("GET", `/vehicles/${vehicleId}/affordances`);
  }
}
