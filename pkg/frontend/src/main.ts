import { CenterClient } from "./api.js";
import { ConsoleApp } from "./app.js";
import { bindHandlers, render } from "./dom.js";
import { StreamClient } from "./stream.js";

const params = new URLSearchParams(window.location.search);
const operatorId = params.get("operator") ?? `op-${Math.random().toString(36).slice(2, 7)}`;

const wsScheme = window.location.protocol === "https:" ? "wss" : "ws";
const stream = new StreamClient(`${wsScheme}://${window.location.host}/stream`);
const app = new ConsoleApp(new CenterClient(""), stream, operatorId);

const root = document.getElementById("app");
if (!(root instanceof HTMLElement)) {
  throw new Error("missing #app root");
}

app.onRender(() => render(root, app));
bindHandlers(root, app);

stream.connect().catch(() => {
  app.setBanner("warning", "live stream unavailable; falling back to polling only");
});
stream.onClose(() => {
  app.setBanner("warning", "live stream closed; falling back to polling only");
});

void app.refresh();
setInterval(() => {
  app.refresh().catch((err) => {
    app.setBanner("error", err instanceof Error ? err.message : String(err));
  });
}, 1000);

render(root, app);
