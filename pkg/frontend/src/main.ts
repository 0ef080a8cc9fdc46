// Dashboard wiring: connection form and status banner, live scope, register
// panel, and the guided alpha-protocol runner. Register writes happen only
// from explicit user actions in the panel.

import { StationConnection, ConnState, RemoteError } from "./connection.js";
import { HelloMsg, Message } from "./protocol.js";
import { ScopeState } from "./ring.js";
import {
  DATA_RATES, RegisterPanelState, RegisterValueError, VALID_GAINS,
} from "./registers.js";
import { ProtocolRunner, ProtocolStep, ProtocolReport } from "./runner.js";
import { SettingsStore } from "./persist.js";
import { drawScope } from "./scope.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

const settingsStore = new SettingsStore(window.localStorage);
let settings = settingsStore.load();

let connection: StationConnection | null = null;
let scope: ScopeState | null = null;
let panel: RegisterPanelState | null = null;
let runner: ProtocolRunner | null = null;
let scoredChannel = 0; // channel whose alpha power feeds the protocol report
let nextCmdId = 1;

const canvas = $<HTMLCanvasElement>("scope");
const banner = $("banner");
const helloInfo = $("hello-info");
const gapInfo = $("gap-info");
const metricsInfo = $("metrics-info");
const promptOverlay = $("prompt-overlay");
const promptLabel = $("prompt-label");
const promptCountdown = $("prompt-countdown");
const reportBox = $("protocol-report");

function setBanner(state: ConnState, detail?: string): void {
  banner.dataset.state = state;
  banner.textContent = detail ? `${state}: ${detail}` : state;
}

function showError(text: string): void {
  const errBox = $("error-box");
  errBox.textContent = text;
  errBox.classList.add("visible");
  window.setTimeout(() => errBox.classList.remove("visible"), 6000);
}

// -- connection ---------------------------------------------------------------

function handleHello(hello: HelloMsg): void {
  scope = new ScopeState(hello.fs, settings.windowSeconds, settings.uvPerDiv);
  panel = new RegisterPanelState(hello.gains, hello.fs);
  scoredChannel = Math.max(0, hello.channelLabels.indexOf("Fz"));
  helloInfo.textContent =
    `${hello.server} | fs ${hello.fs} SPS | vref ${hello.vref} V | ` +
    `channels ${hello.channelLabels.join(", ")}` +
    (hello.authRequired ? " | auth required" : "");
  buildRegisterPanel(hello.channelLabels);
}

function handleMessage(msg: Message): void {
  if (!scope) return;
  if (msg.kind === "data" && !msg.raw) {
    scope.pushBlock(msg);
    if (runner?.running) {
      const prompt = runner.advance(scope.streamTime);
      if (prompt === null) finishProtocol();
      else {
        promptLabel.textContent = prompt.label === "eyes_closed" ? "CLOSE EYES" : "OPEN EYES";
        promptCountdown.textContent = Math.ceil(prompt.remaining).toString();
      }
    }
    const dropped = scope.totalDropped;
    gapInfo.textContent = dropped > 0 ? `dropped ${dropped} samples (gaps marked red)` : "no gaps";
  } else if (msg.kind === "metrics") {
    metricsInfo.textContent =
      `t=${msg.streamTime.toFixed(1)} s | produced ${msg.produced} | dropped ${msg.dropped} | ` +
      `blinks ${msg.eventCounts.blinks ?? 0} | chews ${msg.eventCounts.chews ?? 0}`;
    runner?.recordAlphaPower(msg.streamTime, msg.alphaPowerUv2[scoredChannel] ?? 0);
  } else if (msg.kind === "err" && msg.id === null) {
    showError(`${msg.code}: ${msg.text}`);
  }
}

function connect(): void {
  connection?.close();
  settings = settingsStore.save({
    endpoint: ($<HTMLInputElement>("endpoint")).value,
    token: ($<HTMLInputElement>("token")).value,
  });
  connection = new StationConnection(
    settings.endpoint,
    { onState: setBanner, onHello: handleHello, onMessage: handleMessage },
    { token: settings.token || null },
  );
  connection.connect();
}

// -- register panel -------------------------------------------------------------

function buildRegisterPanel(labels: string[]): void {
  const rows = $("gain-rows");
  rows.innerHTML = "";
  labels.forEach((label, ch) => {
    const row = document.createElement("tr");
    const name = document.createElement("td");
    name.textContent = label;
    row.appendChild(name);
    const cell = document.createElement("td");
    const select = document.createElement("select");
    for (const gain of VALID_GAINS) {
      const opt = document.createElement("option");
      opt.value = String(gain);
      opt.textContent = `x${gain}`;
      if (panel && panel.gains[ch] === gain) opt.selected = true;
      select.appendChild(opt);
    }
    select.addEventListener("change", () => applyGain(ch, Number(select.value)));
    cell.appendChild(select);
    row.appendChild(cell);
    const status = document.createElement("td");
    status.id = `gain-status-${ch}`;
    row.appendChild(status);
    rows.appendChild(row);
  });

  const rateSelect = $<HTMLSelectElement>("rate-select");
  rateSelect.innerHTML = "";
  for (const rate of DATA_RATES) {
    const opt = document.createElement("option");
    opt.value = String(rate);
    opt.textContent = `${rate} SPS`;
    if (panel && panel.rate === rate) opt.selected = true;
    rateSelect.appendChild(opt);
  }
}

async function sendWrite(write: { addr: number; value: number; cmdId: number }, statusEl: HTMLElement): Promise<void> {
  statusEl.textContent = "pending";
  try {
    await connection!.cmd("WREG", { addr: write.addr, value: write.value });
    panel!.onAck(write.cmdId);
    statusEl.textContent = "acked";
  } catch (e) {
    panel!.onErr(write.cmdId, String(e));
    statusEl.textContent = "error";
    showError(e instanceof RemoteError ? e.message : String(e));
  }
}

function applyGain(channel: number, gain: number): void {
  if (!connection || !panel) return;
  const statusEl = $(`gain-status-${channel}`);
  let write;
  try {
    write = panel.prepareGainWrite(channel, gain, nextCmdId++);
  } catch (e) {
    if (e instanceof RegisterValueError) {
      showError(`rejected before sending: ${e.message}`);
      return;
    }
    throw e;
  }
  void sendWrite(write, statusEl);
}

function applyRate(): void {
  if (!connection || !panel) return;
  const rate = Number($<HTMLSelectElement>("rate-select").value);
  let write;
  try {
    write = panel.prepareRateWrite(rate, nextCmdId++);
  } catch (e) {
    showError(String(e));
    return;
  }
  void sendWrite(write, $("rate-status"));
}

function applyRawWrite(): void {
  if (!connection || !panel) return;
  const addr = parseInt($<HTMLInputElement>("raw-addr").value, 16);
  const value = parseInt($<HTMLInputElement>("raw-value").value, 16);
  let write;
  try {
    write = panel.prepareRawWrite(addr, value, nextCmdId++);
  } catch (e) {
    showError(String(e));
    return;
  }
  void sendWrite(write, $("raw-status"));
}

// -- protocol runner --------------------------------------------------------------

function parseSteps(): ProtocolStep[] {
  const text = $<HTMLTextAreaElement>("protocol-steps").value.trim();
  const steps: ProtocolStep[] = [];
  for (const line of text.split("\n")) {
    if (!line.trim()) continue;
    const [label, secondsText] = line.trim().split(/[\s,]+/);
    if (label !== "eyes_closed" && label !== "eyes_open") {
      throw new Error(`bad step label ${label}; use eyes_closed|eyes_open`);
    }
    steps.push({ label, seconds: Number(secondsText) });
  }
  return steps;
}

function startProtocol(): void {
  if (!connection || !scope) {
    showError("connect first");
    return;
  }
  let steps: ProtocolStep[];
  try {
    steps = parseSteps();
    runner = new ProtocolRunner(steps, (text, streamTime) => {
      void connection!.cmd("ANNOTATE", { text, time: streamTime }).catch(() => undefined);
    });
    runner.start(scope.streamTime);
  } catch (e) {
    showError(String(e));
    return;
  }
  settings = settingsStore.save({ protocolSteps: steps });
  reportBox.innerHTML = "";
  promptOverlay.classList.add("visible");
}

function finishProtocol(): void {
  promptOverlay.classList.remove("visible");
  if (runner) renderReport(runner.report());
}

function abortProtocol(): void {
  if (runner && scope) runner.abort(scope.streamTime);
  promptOverlay.classList.remove("visible");
  if (runner) renderReport(runner.report());
}

function renderReport(report: ProtocolReport): void {
  const rows = report.steps
    .map(
      (s) =>
        `<tr><td>${s.label}</td><td>${s.start.toFixed(1)}-${s.end.toFixed(1)} s</td>` +
        `<td>${s.meanAlphaPower === null ? "n/a" : s.meanAlphaPower.toFixed(2)}</td></tr>`,
    )
    .join("");
  const ratioText = report.ratio === null ? "n/a" : report.ratio.toFixed(2);
  reportBox.innerHTML =
    `<h3>alpha protocol report${report.aborted ? " (aborted)" : ""}</h3>` +
    `<table><tr><th>step</th><th>span</th><th>alpha power (uV^2)</th></tr>${rows}</table>` +
    `<p>closed/open ratio: <strong>${ratioText}</strong></p>`;
}

// -- wiring --------------------------------------------------------------------------

function wire(): void {
  ($<HTMLInputElement>("endpoint")).value = settings.endpoint;
  ($<HTMLInputElement>("token")).value = settings.token;
  ($<HTMLInputElement>("uv-per-div")).value = String(settings.uvPerDiv);
  ($<HTMLInputElement>("window-seconds")).value = String(settings.windowSeconds);
  ($<HTMLTextAreaElement>("protocol-steps")).value = settings.protocolSteps
    .map((s) => `${s.label} ${s.seconds}`)
    .join("\n");

  $("connect-btn").addEventListener("click", connect);
  $("start-btn").addEventListener("click", () =>
    connection?.cmd("START").catch((e) => showError(String(e))),
  );
  $("stop-btn").addEventListener("click", () =>
    connection?.cmd("STOP").catch((e) => showError(String(e))),
  );
  $("pause-btn").addEventListener("click", () => {
    if (scope) scope.paused = !scope.paused;
  });
  $("uv-per-div").addEventListener("change", () => {
    const uv = Number($<HTMLInputElement>("uv-per-div").value);
    if (scope && uv > 0) scope.uvPerDiv = uv;
    settings = settingsStore.save({ uvPerDiv: uv });
  });
  $("window-seconds").addEventListener("change", () => {
    const s = Number($<HTMLInputElement>("window-seconds").value);
    if (scope) scope.windowSeconds = s;
    settings = settingsStore.save({ windowSeconds: s });
  });
  $("rate-apply").addEventListener("click", applyRate);
  $("raw-apply").addEventListener("click", applyRawWrite);
  $("protocol-start").addEventListener("click", startProtocol);
  $("protocol-abort").addEventListener("click", abortProtocol);

  const labels = () => connection?.hello?.channelLabels ?? [];
  const frame = () => {
    if (scope && !scope.paused) drawScope(canvas, scope, labels());
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

wire();
