// End-to-end operator arc against real processes: a scripted vehicle raises
// an MRM, the console claims the request, approves the proposed maneuver
// (confirming the design-domain exit), and releases. The center's event log
// must then replay without divergence.

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import fs from "node:fs";
import os from "node:os";
import path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ConsoleApp } from "../src/app.js";
import { CenterClient } from "../src/api.js";
import { REPO_ROOT, pollUntil, sleep, startCenter, type LiveCenter } from "./live.js";

const SCENARIO = {
  vehicle_id: "smoke-1",
  route_length: 400.0,
  cruise_speed: 10.0,
  initial_state: "unmonitored_automated_driving",
  events: [{ kind: "ads_mrm", at: 1.0, reason: "construction_zone" }],
  maneuver_options: [
    { descriptor: "hold position until cleared", viable: false },
    { descriptor: "detour via service road", viable: true, requires_odd_exit: true },
  ],
  decision_timeout_s: 120.0,
};

describe("operator smoke arc", () => {
  let workDir: string;
  let logPath: string;
  let center: LiveCenter;
  let agent: ChildProcess;
  let app: ConsoleApp;

  beforeAll(async () => {
    workDir = fs.mkdtempSync(path.join(os.tmpdir(), "console-smoke-"));
    logPath = path.join(workDir, "center.ndjson");
    const scenarioPath = path.join(workDir, "scenario.json");
    fs.writeFileSync(scenarioPath, JSON.stringify(SCENARIO, null, 2));

    center = await startCenter("generic", { logPath });
    agent = spawn(
      "python3",
      [
        "-m",
        "avcc.cli",
        "agent",
        "--scenario",
        scenarioPath,
        "--port",
        String(center.vehiclePort),
        "--tick",
        "0.05",
      ],
      { cwd: REPO_ROOT, stdio: ["ignore", "ignore", "pipe"] },
    );
    app = new ConsoleApp(new CenterClient(center.httpBase), null, "smoke-operator");
  });

  afterAll(async () => {
    agent.kill("SIGTERM");
    await Promise.race([new Promise((resolve) => agent.once("exit", resolve)), sleep(3000)]);
    await center.stop();
    fs.rmSync(workDir, { recursive: true, force: true });
  });

  it("claim, approve with odd-exit confirmation, release, clean replay", async () => {
    // the scripted failure surfaces as a claimable MRM request
    const request = await pollUntil(async () => {
      await app.refresh();
      return app.view.requests.find((r) => r.kind === "mrm" && r.status === "open") ?? null;
    }, "open MRM request");
    expect(request.vehicle_id).toBe("smoke-1");

    const session = await app.claimRequest(request.request_id);
    expect(session.vehicle_id).toBe("smoke-1");
    expect(app.view.vehicle?.state).toBe("activated_mrc");

    // the parked vehicle offers the assistance maneuver control
    const beginAck = await app.command("begin_alternative_maneuver", "remote_assistance");
    expect(beginAck.ok).toBe(true);

    const proposal = await pollUntil(async () => {
      await app.refresh();
      return app.view.proposal;
    }, "maneuver proposal");
    const viable = proposal.options.find((o) => o.viable);
    expect(viable).toBeDefined();
    expect(viable?.requires_odd_exit).toBe(true);

    // approving without the confirmation must be refused, not executed
    const unconfirmed = await app.approveOption(viable!.option_id, false);
    expect(unconfirmed?.ok).toBe(false);
    expect(unconfirmed?.error).toBe("odd_confirm_required");
    expect(app.view.vehicle?.state).toBe("alternative_maneuver_active/remote_assistance/maneuver_proposal");

    const confirmed = await app.approveOption(viable!.option_id, true);
    expect(confirmed?.ok).toBe(true);

    await pollUntil(async () => {
      await app.refresh();
      return app.view.vehicle?.state === "monitored_automated_driving" ? true : null;
    }, "vehicle back under monitoring");

    // release hands the vehicle back to itself and ends the session
    await app.release();
    expect(app.view.session).toBeNull();

    const replay = spawnSync("python3", ["-m", "avcc.cli", "replay", logPath], {
      cwd: REPO_ROOT,
      encoding: "utf-8",
    });
    expect(replay.stderr).toBe("");
    expect(replay.status).toBe(0);
    const result = JSON.parse(replay.stdout) as { applied: number; states: Record<string, string> };
    expect(result.states["smoke-1"]).toBe("unmonitored_automated_driving");
    expect(result.applied).toBe(4); // mrm, begin maneuver, succeed, end monitoring
  });
});
