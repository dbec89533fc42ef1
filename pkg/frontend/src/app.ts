// Console controller: the state the panels render and the actions their
// buttons invoke. Keeping this free of DOM lets the same claim/approve/
// release paths run under test against a live center.

import { ApiError, CenterClient, type AckView, type SessionView } from "./api.js";
import { DriveInputLoop } from "./drive.js";
import type { StreamClient } from "./stream.js";
import {
  classifyLink,
  renderAffordances,
  type ConsoleRole,
  type ConsoleViewModel,
  type ControlSet,
  type LinkIndicator,
} from "./viewmodel.js";
import type { Envelope, ManeuverProposalBody, TelemetryBody } from "./wire.js";

export interface Banner {
  tone: "info" | "warning" | "error";
  text: string;
}

export class ConsoleApp {
  view: ConsoleViewModel = {
    role: "fleet_manager",
    fleet: null,
    requests: [],
    session: null,
    vehicle: null,
    affordances: null,
    proposal: null,
  };
  banner: Banner | null = null;
  drive: DriveInputLoop;
  private lastVehicleSeenMs = 0;
  private renderHooks: Array<() => void> = [];

  constructor(
    private client: CenterClient,
    private stream: StreamClient | null,
    public operatorId: string,
    private now: () => number = Date.now,
  ) {
    this.drive = new DriveInputLoop({
      send: (frame) => {
        const vehicleId = this.view.session?.vehicle_id;
        if (vehicleId && this.stream) {
          this.stream.sendBody(vehicleId, frame);
        }
      },
      onWarning: () => this.setBanner("warning", "link degraded — drive frames may lag"),
      onLost: () => this.setBanner("error", "link lost — remote driving stopped"),
    });
    stream?.onMessage((msg) => this.handleStream(msg));
    stream?.onError((err) => this.setBanner("error", `${err.error}: ${err.detail}`));
  }

  onRender(hook: () => void): void {
    this.renderHooks.push(hook);
  }

  private notify(): void {
    for (const hook of this.renderHooks) {
      hook();
    }
  }

  setBanner(tone: Banner["tone"], text: string): void {
    this.banner = { tone, text };
    this.notify();
  }

  clearBanner(): void {
    this.banner = null;
    this.notify();
  }

  setRole(role: ConsoleRole): void {
    this.view.role = role;
    this.notify();
  }

  /** snapshot reconciliation: poll-driven, stream events only trigger it sooner */
  async refresh(): Promise<void> {
    const [fleet, requests] = await Promise.all([this.client.fleet(), this.client.requests()]);
    this.view.fleet = fleet;
    this.view.requests = requests;
    const session = this.view.session;
    if (session) {
      this.view.vehicle = fleet.vehicles.find((v) => v.vehicle_id === session.vehicle_id) ?? null;
      try {
        this.view.affordances = await this.client.affordances(session.vehicle_id);
        this.view.proposal = this.view.affordances.proposal;
      } catch (err) {
        if (!(err instanceof ApiError)) {
          throw err;
        }
        this.view.affordances = null;
      }
      // a session the server already closed (auto-close on unmonitored) is stale
      if (this.view.affordances && this.view.affordances.session_id !== session.session_id) {
        this.endSessionView();
      }
    }
    this.notify();
  }

  controls(): ControlSet {
    return renderAffordances(this.view);
  }

  linkIndicator(): LinkIndicator {
    if (this.view.vehicle === null) {
      return "lost";
    }
    if (this.lastVehicleSeenMs > 0) {
      return classifyLink(this.lastVehicleSeenMs, this.now());
    }
    return this.view.vehicle.link;
  }

  async claimRequest(requestId: string): Promise<SessionView> {
    const session = await this.client.claimRequest(requestId, this.operatorId);
    this.beginSessionView(session);
    await this.refresh();
    return session;
  }

  async claimVehicle(vehicleId: string): Promise<SessionView> {
    const session = await this.client.claimVehicle(vehicleId, this.operatorId);
    this.beginSessionView(session);
    await this.refresh();
    return session;
  }

  private beginSessionView(session: SessionView): void {
    this.view.session = session;
    this.view.role = "remote_operator"; // claiming elevates in place
    this.view.proposal = null;
    this.clearBanner();
  }

  private endSessionView(): void {
    this.drive.stop();
    this.view.session = null;
    this.view.vehicle = null;
    this.view.affordances = null;
    this.view.proposal = null;
    this.lastVehicleSeenMs = 0;
  }

  /** Issue a state-change command; only controls the server listed can call this. */
  async command(kind: string, mode: string | null = null): Promise<AckView> {
    const session = this.requireSession();
    const enabled = this.controls().controls.some(
      (c) => c.enabled && c.kind === kind && c.mode === mode,
    );
    if (!enabled) {
      throw new Error(`control ${kind}${mode ? `(${mode})` : ""} is not currently enabled`);
    }
    // affordances name the mode family; the wire wants a concrete mode, and
    // this console's assistance workflow is proposal-based
    const wireMode = mode === "remote_assistance" ? "remote_assistance/maneuver_proposal" : mode;
    const ack = await this.client.command(session.session_id, kind, wireMode);
    if (!ack.ok) {
      this.setBanner("warning", `refused: ${ack.error} ${ack.detail ?? ""}`.trim());
    }
    await this.refresh();
    return ack;
  }

  async approveOption(optionId: number, confirmOddExit: boolean): Promise<AckView | null> {
    const session = this.requireSession();
    const result = await this.client.forward(session.session_id, {
      type: "maneuver_decision",
      selected: optionId,
      confirm_odd_exit: confirmOddExit,
    });
    await this.refresh();
    return result.ack;
  }

  async rejectProposal(): Promise<AckView | null> {
    const session = this.requireSession();
    const result = await this.client.forward(session.session_id, {
      type: "maneuver_decision",
      selected: null,
      confirm_odd_exit: false,
    });
    await this.refresh();
    return result.ack;
  }

  async answerClassification(queryId: string, label: string): Promise<AckView | null> {
    const session = this.requireSession();
    const result = await this.client.forward(session.session_id, {
      type: "object_classification",
      query_id: queryId,
      label,
    });
    await this.refresh();
    return result.ack;
  }

  async release(): Promise<void> {
    const session = this.requireSession();
    await this.client.release(session.session_id);
    this.endSessionView();
    await this.refresh();
  }

  startDriving(): void {
    this.drive.setLink(this.linkIndicator());
    this.drive.start();
  }

  stopDriving(): void {
    this.drive.stop();
  }

  private requireSession(): SessionView {
    if (this.view.session === null) {
      throw new Error("no active session");
    }
    return this.view.session;
  }

  private handleStream(msg: Envelope): void {
    const session = this.view.session;
    const mine = session !== null && msg.vehicle_id === session.vehicle_id;
    switch (msg.body.type) {
      case "telemetry": {
        if (mine) {
          this.lastVehicleSeenMs = this.now();
          const telemetry = msg.body as TelemetryBody;
          if (this.view.vehicle) {
            this.view.vehicle = {
              ...this.view.vehicle,
              state: telemetry.state,
              lat: telemetry.lat,
              lon: telemetry.lon,
              speed: telemetry.speed,
              link_quality: telemetry.link_quality,
            };
          }
          this.drive.setLink(this.linkIndicator());
          this.notify();
        }
        break;
      }
      case "maneuver_proposal": {
        if (mine) {
          this.view.proposal = msg.body as ManeuverProposalBody;
          this.notify();
        }
        break;
      }
      case "transition_report": {
        if (mine) {
          void this.refresh();
        }
        break;
      }
      case "interaction_request":
      case "monitoring_request": {
        void this.refresh();
        break;
      }
      default:
        break;
    }
  }
}
