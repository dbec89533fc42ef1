// View model assembly: everything rendered derives from server payloads, so
// the console can never disagree with the center about what is allowed.

import type {
  AffordancePayload,
  FleetSnapshot,
  RequestView,
  SessionView,
  VehicleView,
} from "./api.js";
import type { ManeuverProposalBody } from "./wire.js";

export type ConsoleRole = "fleet_manager" | "remote_operator";

export interface ConsoleViewModel {
  role: ConsoleRole;
  fleet: FleetSnapshot | null;
  requests: RequestView[];
  session: SessionView | null;
  vehicle: VehicleView | null;
  affordances: AffordancePayload | null;
  proposal: ManeuverProposalBody | null;
}

export interface Control {
  id: string;
  label: string;
  kind: string;
  mode: string | null;
  enabled: boolean;
  /** set when the control is shown but cannot fire (guard or profile) */
  reason?: string;
}

export interface ControlSet {
  /** no session: the only affordance is claiming the vehicle */
  claimOnly: boolean;
  controls: Control[];
}

const EVENT_LABELS: Record<string, string> = {
  prepare_vehicle: "Prepare Vehicle",
  start_service: "Start Service",
  activate_ads: "Activate ADS",
  engage_automation: "Engage Automation",
  start_monitoring: "Start Monitoring",
  end_monitoring: "End Monitoring",
  trigger_mrm: "Trigger Minimal-Risk Maneuver",
  begin_alternative_maneuver: "Alternative Maneuver",
  maneuver_succeeded: "Mark Maneuver Succeeded",
  maneuver_failed: "Mark Maneuver Failed",
  deactivate_ads: "Deactivate ADS",
  end_service: "End Service",
  end_driving_operation: "End Driving Operation",
};

const MODE_LABELS: Record<string, string> = {
  remote_assistance: "Remote Assistance",
  remote_driving: "Remote Driving",
};

export function controlId(kind: string, mode: string | null): string {
  return mode === null ? kind : `${kind}(${mode})`;
}

export function controlLabel(kind: string, mode: string | null): string {
  const base = EVENT_LABELS[kind] ?? kind;
  if (mode === null) {
    return base;
  }
  return `${base} (${MODE_LABELS[mode] ?? mode})`;
}

/**
 * Map the server's affordance payload onto controls. Every enabled row
 * becomes an active button; guard-blocked and profile-forbidden rows stay
 * visible but inert, each carrying its reason for the tooltip.
 */
export function renderAffordances(
  view: Pick<ConsoleViewModel, "session" | "affordances">,
): ControlSet {
  if (view.session === null || view.affordances === null) {
    return { claimOnly: true, controls: [] };
  }
  const controls: Control[] = [];
  for (const option of view.affordances.enabled) {
    controls.push({
      id: controlId(option.kind, option.mode),
      label: controlLabel(option.kind, option.mode),
      kind: option.kind,
      mode: option.mode,
      enabled: !option.guard_blocked,
      ...(option.guard_blocked ? { reason: `blocked by guard: ${option.blocked_by ?? "unknown"}` } : {}),
    });
  }
  for (const option of view.affordances.disabled) {
    controls.push({
      id: controlId(option.kind, option.mode),
      label: controlLabel(option.kind, option.mode),
      kind: option.kind,
      mode: option.mode,
      enabled: false,
      reason: option.reason,
    });
  }
  controls.sort((a, b) => (a.id < b.id ? -1 : a.id > b.id ? 1 : 0));
  return { claimOnly: false, controls };
}

export function enabledControlIds(set: ControlSet): string[] {
  return set.controls.filter((c) => c.enabled).map((c) => c.id);
}

export type LinkIndicator = "alive" | "degraded" | "lost";

/** Same bands as the server's heartbeat monitor: half timeout, full timeout. */
export function classifyLink(lastSeenMs: number, nowMs: number, timeoutMs = 2000): LinkIndicator {
  const age = Math.max(0, nowMs - lastSeenMs);
  if (age < timeoutMs / 2) {
    return "alive";
  }
  if (age < timeoutMs) {
    return "degraded";
  }
  return "lost";
}

// vehicles interpolate telemetry coordinates along this fixed segment
const ROUTE_ORIGIN_LAT = 48.15;
const ROUTE_TERMINUS_LAT = 48.16;

/** Recover the 1-D route fraction from telemetry latitude for the progress strip. */
export function routeProgress(lat: number | null): number {
  if (lat === null || !Number.isFinite(lat)) {
    return 0;
  }
  const frac = (lat - ROUTE_ORIGIN_LAT) / (ROUTE_TERMINUS_LAT - ROUTE_ORIGIN_LAT);
  return Math.min(1, Math.max(0, frac));
}
