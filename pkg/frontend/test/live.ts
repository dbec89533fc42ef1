// Helpers for tests that exercise a real center process over its public
// surface: spawn `avcc serve`, wait for readiness, connect stub vehicles.

import { type ChildProcess, spawn } from "node:child_process";
import net from "node:net";
import path from "node:path";
import { fileURLToPath } from "node:url";

import { MessageFactory, encodeMessage, type Body } from "../src/wire.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));
export const REPO_ROOT = path.resolve(HERE, "..", "..");

export async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = net.createServer();
    server.once("error", reject);
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address === null || typeof address === "string") {
        reject(new Error("no port assigned"));
        return;
      }
      server.close(() => resolve(address.port));
    });
  });
}

export interface LiveCenter {
  httpBase: string;
  vehiclePort: number;
  proc: ChildProcess;
  stop(): Promise<void>;
}

export async function startCenter(
  profile: "generic" | "german",
  options: { logPath?: string } = {},
): Promise<LiveCenter> {
  const httpPort = await freePort();
  const vehiclePort = await freePort();
  const args = [
    "-m",
    "avcc.cli",
    "serve",
    "--profile",
    profile,
    "--http-port",
    String(httpPort),
    "--vehicle-port",
    String(vehiclePort),
  ];
  if (options.logPath) {
    args.push("--log", options.logPath);
  }
  const proc = spawn("python3", args, { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] });
  const stderr: string[] = [];
  proc.stderr?.on("data", (chunk) => stderr.push(String(chunk)));

  const httpBase = `http://127.0.0.1:${httpPort}`;
  const deadline = Date.now() + 20_000;
  for (;;) {
    if (proc.exitCode !== null) {
      throw new Error(`center exited early: ${stderr.join("")}`);
    }
    try {
      const response = await fetch(`${httpBase}/fleet`);
      if (response.ok) {
        break;
      }
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      proc.kill();
      throw new Error(`center did not come up: ${stderr.join("")}`);
    }
    await sleep(100);
  }

  return {
    httpBase,
    vehiclePort,
    proc,
    stop: () =>
      new Promise<void>((resolve) => {
        proc.once("exit", () => resolve());
        proc.kill("SIGTERM");
        setTimeout(() => {
          if (proc.exitCode === null) {
            proc.kill("SIGKILL");
          }
        }, 2000).unref();
      }),
  };
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export async function pollUntil<T>(
  probe: () => Promise<T | null>,
  label: string,
  timeoutMs = 15_000,
): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const value = await probe();
    if (value !== null) {
      return value;
    }
    if (Date.now() > deadline) {
      throw new Error(`timed out waiting for ${label}`);
    }
    await sleep(100);
  }
}

/** Registers a vehicle by saying hello in a given state; the socket stays
 * open so the center keeps a command path to it. */
export class StubVehicle {
  private socket: net.Socket | null = null;
  private factory: MessageFactory;

  constructor(
    public vehicleId: string,
    idPrefix: number,
  ) {
    this.factory = new MessageFactory(idPrefix);
  }

  connect(port: number): Promise<void> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host: "127.0.0.1", port }, () => {
        this.socket = socket;
        resolve();
      });
      socket.once("error", reject);
    });
  }

  send(body: Body): void {
    if (this.socket === null) {
      throw new Error("not connected");
    }
    this.socket.write(encodeMessage(this.factory.build(this.vehicleId, body)) + "\n");
  }

  hello(profile: string, state: string): void {
    this.send({ type: "hello", profile, state });
  }

  close(): void {
    this.socket?.destroy();
    this.socket = null;
  }
}
