// DOM wiring: connects the view model, overlay canvas, controls and the
// stream socket. Everything interesting lives in the imported modules.

import { Connection } from "./connection.js";
import { ControlChannel } from "./controls.js";
import { drawOverlay, letterbox } from "./overlay.js";
import type { Command } from "./protocol.js";
import { ConsoleViewModel } from "./viewmodel.js";

const $ = (id: string) => document.getElementById(id)!;

const model = new ConsoleViewModel();
const canvas = $("overlay") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;

const wsUrl = (() => {
  const params = new URLSearchParams(location.search);
  const override = params.get("server");
  if (override) return override;
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  return `${scheme}://${location.host}/ws`;
})();

const controls = new ControlChannel({
  send: (text) => {
    if (!connection.send(text)) toast("not connected");
  },
  onPendingChange: (pending) => updateButtons(pending),
  onToast: toast,
});

const connection = new Connection(wsUrl, {
  onMessage: (data) => {
    const message = model.ingest(data);
    if (message) controls.observe(message);
  },
  onStateChange: (state) => {
    model.setConnection(state);
    if (state !== "connected") controls.connectionLost();
  },
});

function toast(message: string): void {
  const el = $("toast");
  el.textContent = message;
  el.classList.add("visible");
  setTimeout(() => el.classList.remove("visible"), 4000);
}

function updateButtons(pending: boolean): void {
  const disabled = pending || model.connection !== "connected";
  for (const cmd of ["start", "stop", "record_on", "record_off"] as Command[]) {
    ($(`btn-${cmd}`) as HTMLButtonElement).disabled = disabled;
  }
}

function render(): void {
  $("status-badge").textContent = model.status;
  $("status-badge").dataset.status = model.status;
  $("connection-badge").textContent = model.connection;
  $("connection-badge").dataset.state = model.connection;
  $("fps").textContent = model.fpsDisplay();
  $("resolution").textContent = model.resolutionDisplay();
  $("recording-dot").classList.toggle("on", model.recording);
  $("dropped").textContent = String(model.droppedMessages);

  const counts = $("counts");
  counts.replaceChildren(
    ...model.countLines().map((line) => {
      const li = document.createElement("li");
      li.textContent = line;
      return li;
    }),
  );

  const banners = $("alerts");
  banners.replaceChildren(
    ...model.alerts.map((alert) => {
      const div = document.createElement("div");
      div.className = "alert-banner";
      div.textContent = `alert: ${alert.rule} (frame ${alert.frameId}) `;
      const dismiss = document.createElement("button");
      dismiss.textContent = "dismiss";
      dismiss.onclick = () => model.dismissAlert(alert.id);
      div.appendChild(dismiss);
      return div;
    }),
  );

  updateButtons(controls.isPending);
  scheduleDraw();
}

let drawQueued = false;
function scheduleDraw(): void {
  // coalesce to display refresh; always draw the newest message
  if (drawQueued) return;
  drawQueued = true;
  requestAnimationFrame(() => {
    drawQueued = false;
    const [streamW, streamH] = model.resolution;
    const frame = letterbox(streamW, streamH, canvas.width, canvas.height);
    drawOverlay(ctx, model.latestFrame?.detections ?? [], model.classNames, frame);
  });
}

for (const cmd of ["start", "stop", "record_on", "record_off"] as Command[]) {
  ($(`btn-${cmd}`) as HTMLButtonElement).onclick = () => controls.sendCommand(cmd);
}

model.onChange(render);
render();
connection.open();
