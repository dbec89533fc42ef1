// DOM rendering. Everything is re-rendered from the view model on change;
// the handlers delegate to ConsoleApp so no state lives in the DOM.

import type { ConsoleApp } from "./app.js";
import type { RequestView, VehicleView } from "./api.js";
import { routeProgress, type Control } from "./viewmodel.js";

function esc(text: unknown): string {
  return String(text)
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

function linkDot(link: string): string {
  return `<span class="dot dot-${esc(link)}" title="link ${esc(link)}"></span>`;
}

function vehicleRow(vehicle: VehicleView): string {
  const flags = vehicle.anomaly_flags.length
    ? vehicle.anomaly_flags.map((f) => `<span class="flag">${esc(f)}</span>`).join(" ")
    : "—";
  const progress = Math.round(routeProgress(vehicle.lat) * 100);
  return `<tr data-vehicle="${esc(vehicle.vehicle_id)}">
    <td>${esc(vehicle.vehicle_id)}</td>
    <td><code>${esc(vehicle.state)}</code></td>
    <td>${linkDot(vehicle.link)}</td>
    <td>${vehicle.speed === null ? "—" : esc(vehicle.speed.toFixed(1))} m/s</td>
    <td><div class="strip"><div class="strip-fill" style="width:${progress}%"></div></div></td>
    <td>${vehicle.needs_operator ? '<span class="needs">needs operator</span>' : ""} ${flags}</td>
    <td><button class="js-claim-vehicle" data-vehicle="${esc(vehicle.vehicle_id)}">Claim</button></td>
  </tr>`;
}

function requestCard(request: RequestView): string {
  const open = request.status === "open";
  return `<div class="card request ${open ? "" : "request-taken"}">
    <div class="card-head">
      <strong>${esc(request.kind)}</strong>
      <span>${esc(request.vehicle_id)}</span>
      <span class="muted">prio ${esc(request.priority)}</span>
    </div>
    <div>${esc(request.reason)}</div>
    <div class="muted">from ${esc(request.origin)} · ${esc(request.status)}</div>
    ${open ? `<button class="js-claim-request" data-request="${esc(request.request_id)}">Claim</button>` : ""}
  </div>`;
}

function controlButton(control: Control): string {
  const tooltip = control.reason ? ` title="${esc(control.reason)}"` : "";
  return `<button class="js-command" data-kind="${esc(control.kind)}" data-mode="${control.mode === null ? "" : esc(control.mode)}"
    ${control.enabled ? "" : "disabled"}${tooltip}>${esc(control.label)}</button>`;
}

function fleetBoard(app: ConsoleApp): string {
  const fleet = app.view.fleet;
  const rows = fleet ? fleet.vehicles.map(vehicleRow).join("") : "";
  const requests = app.view.requests.map(requestCard).join("") || '<div class="muted">queue empty</div>';
  return `
    <section class="panel">
      <h2>Fleet ${fleet ? `<span class="muted">(${esc(fleet.profile)} profile)</span>` : ""}</h2>
      <table class="fleet">
        <thead><tr><th>vehicle</th><th>state</th><th>link</th><th>speed</th><th>route</th><th>attention</th><th></th></tr></thead>
        <tbody>${rows}</tbody>
      </table>
    </section>
    <section class="panel">
      <h2>Requests</h2>
      <div class="requests">${requests}</div>
    </section>`;
}

function proposalCard(app: ConsoleApp): string {
  const proposal = app.view.proposal;
  if (!proposal) {
    return "";
  }
  const options = proposal.options
    .map((option) => {
      const exitNote = option.requires_odd_exit ? '<span class="flag">leaves design domain</span>' : "";
      const approve = option.viable
        ? `<button class="js-approve" data-option="${option.option_id}" data-odd="${option.requires_odd_exit}">Approve</button>`
        : '<span class="muted">not viable</span>';
      return `<li>${esc(option.descriptor)} ${exitNote} ${approve}</li>`;
    })
    .join("");
  const query = proposal.classification_query
    ? `<div class="query">
         <span>Classify <strong>${esc(proposal.classification_query.subject)}</strong>:</span>
         <input class="js-label" placeholder="label" />
         <button class="js-classify" data-query="${esc(proposal.classification_query.query_id)}">Send</button>
       </div>`
    : "";
  return `<section class="panel proposal">
    <h2>Maneuver proposal</h2>
    ${query}
    <ul>${options}</ul>
    <button class="js-reject">Reject all</button>
  </section>`;
}

function drivePad(app: ConsoleApp): string {
  const state = app.view.vehicle?.state ?? "";
  if (!state.startsWith("alternative_maneuver_active/remote_driving")) {
    return "";
  }
  const input = app.drive.current;
  return `<section class="panel drive">
    <h2>Remote driving</h2>
    <div class="muted">WASD / arrows steer and drive; space brakes; frames stream at 10 Hz.</div>
    <div>throttle ${input.throttle.toFixed(1)} · steering ${input.steering.toFixed(1)} · brake ${input.brake.toFixed(1)}</div>
    <button class="js-drive-toggle">${app.drive.running ? "Stop sending" : "Start sending"}</button>
  </section>`;
}

function workspace(app: ConsoleApp): string {
  const session = app.view.session;
  if (!session) {
    return `<section class="panel"><h2>Remote operator</h2>
      <div class="muted">No session. Claim a request or a vehicle from the fleet board.</div></section>
      ${fleetBoard(app)}`;
  }
  const vehicle = app.view.vehicle;
  const link = app.linkIndicator();
  const controls = app.controls();
  const buttons = controls.claimOnly
    ? '<div class="muted">claim required</div>'
    : controls.controls.map(controlButton).join("");
  const telemetry = vehicle
    ? `<div>state <code>${esc(vehicle.state)}</code> · ${linkDot(link)} link ${esc(link)}
         · speed ${vehicle.speed === null ? "—" : esc(vehicle.speed.toFixed(1))} m/s</div>
       <div class="strip"><div class="strip-fill" style="width:${Math.round(routeProgress(vehicle.lat) * 100)}%"></div></div>`
    : '<div class="muted">no telemetry yet</div>';
  return `
    <section class="panel">
      <h2>Session on ${esc(session.vehicle_id)}</h2>
      ${telemetry}
      <div class="controls">${buttons}</div>
      <button class="js-release">Release</button>
    </section>
    ${proposalCard(app)}
    ${drivePad(app)}`;
}

export function render(root: HTMLElement, app: ConsoleApp): void {
  const banner = app.banner
    ? `<div class="banner banner-${app.banner.tone}">${esc(app.banner.text)} <button class="js-dismiss">×</button></div>`
    : "";
  const roleTabs = (["fleet_manager", "remote_operator"] as const)
    .map(
      (role) =>
        `<button class="tab js-role ${app.view.role === role ? "tab-active" : ""}" data-role="${role}">
          ${role === "fleet_manager" ? "Fleet Manager" : "Remote Operator"}</button>`,
    )
    .join("");
  root.innerHTML = `
    <header>
      <h1>AV Control Center</h1>
      <nav>${roleTabs}</nav>
      <span class="muted">operator ${esc(app.operatorId)}</span>
    </header>
    ${banner}
    <main>${app.view.role === "fleet_manager" ? fleetBoard(app) : workspace(app)}</main>`;
}

function guardBusy<T>(button: HTMLButtonElement, work: () => Promise<T>, app: ConsoleApp): void {
  button.disabled = true;
  work()
    .catch((err) => app.setBanner("error", err instanceof Error ? err.message : String(err)))
    .finally(() => {
      button.disabled = false;
    });
}

export function bindHandlers(root: HTMLElement, app: ConsoleApp): void {
  root.addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement;
    const button = target.closest("button");
    if (!button) {
      return;
    }
    if (button.classList.contains("js-role")) {
      app.setRole(button.dataset["role"] as "fleet_manager" | "remote_operator");
    } else if (button.classList.contains("js-dismiss")) {
      app.clearBanner();
    } else if (button.classList.contains("js-claim-request")) {
      guardBusy(button, () => app.claimRequest(button.dataset["request"] ?? ""), app);
    } else if (button.classList.contains("js-claim-vehicle")) {
      guardBusy(button, () => app.claimVehicle(button.dataset["vehicle"] ?? ""), app);
    } else if (button.classList.contains("js-command")) {
      const mode = button.dataset["mode"] || null;
      guardBusy(button, () => app.command(button.dataset["kind"] ?? "", mode), app);
    } else if (button.classList.contains("js-release")) {
      guardBusy(button, () => app.release(), app);
    } else if (button.classList.contains("js-reject")) {
      guardBusy(button, () => app.rejectProposal(), app);
    } else if (button.classList.contains("js-approve")) {
      const needsConfirm = button.dataset["odd"] === "true";
      // leaving the design domain needs an explicit second yes
      if (needsConfirm && !window.confirm("This maneuver exits the operational design domain. Confirm?")) {
        return;
      }
      guardBusy(button, () => app.approveOption(Number(button.dataset["option"]), needsConfirm), app);
    } else if (button.classList.contains("js-classify")) {
      const input = root.querySelector<HTMLInputElement>(".js-label");
      const label = input?.value.trim();
      if (label) {
        guardBusy(button, () => app.answerClassification(button.dataset["query"] ?? "", label), app);
      }
    } else if (button.classList.contains("js-drive-toggle")) {
      if (app.drive.running) {
        app.stopDriving();
      } else {
        app.startDriving();
      }
      render(root, app);
    }
  });

  const keyMap: Record<string, Partial<{ steering: number; throttle: number; brake: number }>> = {
    w: { throttle: 1 },
    ArrowUp: { throttle: 1 },
    s: { throttle: -1 },
    ArrowDown: { throttle: -1 },
    a: { steering: -1 },
    ArrowLeft: { steering: -1 },
    d: { steering: 1 },
    ArrowRight: { steering: 1 },
    " ": { brake: 1 },
  };
  window.addEventListener("keydown", (ev) => {
    const held = keyMap[ev.key];
    if (held && app.drive.running) {
      app.drive.setInput(held);
      ev.preventDefault();
    }
  });
  window.addEventListener("keyup", (ev) => {
    const held = keyMap[ev.key];
    if (held && app.drive.running) {
      const zeroed = Object.fromEntries(Object.keys(held).map((k) => [k, 0]));
      app.drive.setInput(zeroed);
    }
  });

  // first connected gamepad, sampled at frame cadence: left stick steers,
  // right trigger drives, left trigger brakes
  setInterval(() => {
    if (!app.drive.running || typeof navigator.getGamepads !== "function") {
      return;
    }
    const pad = navigator.getGamepads()[0];
    if (!pad) {
      return;
    }
    app.drive.setInput({
      steering: pad.axes[0] ?? 0,
      throttle: pad.buttons[7]?.value ?? 0,
      brake: pad.buttons[6]?.value ?? 0,
    });
  }, 100);
}
