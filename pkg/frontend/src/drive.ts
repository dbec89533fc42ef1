// Remote-driving input loop: the held control state streams out at a fixed
// cadence whether or not the operator is touching anything — a silent link
// is indistinguishable from a dropped one, so zero frames are still intent.

import type { LinkIndicator } from "./viewmodel.js";
import type { DriveFrameBody } from "./wire.js";

export interface DriveHooks {
  send(frame: DriveFrameBody): void;
  onWarning?(status: LinkIndicator): void;
  onLost?(): void;
}

export interface DriveInput {
  steering: number;
  throttle: number;
  brake: number;
}

function clamp(value: number, low: number, high: number): number {
  if (!Number.isFinite(value)) {
    return 0;
  }
  return Math.min(high, Math.max(low, value));
}

export const DRIVE_FRAME_INTERVAL_MS = 100;

export class DriveInputLoop {
  private input: DriveInput = { steering: 0, throttle: 0, brake: 0 };
  private timer: ReturnType<typeof setInterval> | null = null;
  private link: LinkIndicator = "alive";
  private warned = false;

  constructor(
    private hooks: DriveHooks,
    private intervalMs: number = DRIVE_FRAME_INTERVAL_MS,
  ) {}

  get running(): boolean {
    return this.timer !== null;
  }

  get current(): DriveInput {
    return { ...this.input };
  }

  setInput(partial: Partial<DriveInput>): void {
    if (partial.steering !== undefined) {
      this.input.steering = clamp(partial.steering, -1, 1);
    }
    if (partial.throttle !== undefined) {
      this.input.throttle = clamp(partial.throttle, -1, 1);
    }
    if (partial.brake !== undefined) {
      this.input.brake = clamp(partial.brake, 0, 1);
    }
  }

  setLink(status: LinkIndicator): void {
    this.link = status;
    if (status === "lost") {
      if (this.running) {
        this.stop();
        this.hooks.onLost?.();
      }
      return;
    }
    if (status === "degraded") {
      if (!this.warned) {
        this.warned = true;
        this.hooks.onWarning?.(status);
      }
    } else {
      this.warned = false;
    }
  }

  start(): void {
    if (this.timer !== null || this.link === "lost") {
      return;
    }
    this.timer = setInterval(() => this.tick(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  private tick(): void {
    this.hooks.send({
      type: "drive_frame",
      steering: this.input.steering,
      throttle: this.input.throttle,
      brake: this.input.brake,
      abort: false,
    });
  }
}
