// Canvas renderer for the multi-channel scope: stacked traces drawn from
// min/max pixel bins, grid at one division per uvPerDiv, and red gap ticks
// where the stream reported dropped samples.

import { minMaxBins } from "./binning.js";
import { ScopeState } from "./ring.js";

const TRACE_COLORS = [
  "#4fc3f7", "#aed581", "#ffb74d", "#f06292",
  "#9575cd", "#4db6ac", "#fff176", "#e57373",
];

export function drawScope(
  canvas: HTMLCanvasElement,
  state: ScopeState,
  labels: string[],
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.fillStyle = "#11151c";
  ctx.fillRect(0, 0, width, height);

  const lanes = state.channels.length;
  const laneH = height / lanes;
  const divPx = laneH / 2; // one division above and below each baseline

  ctx.strokeStyle = "#222a35";
  ctx.lineWidth = 1;
  for (let g = 0; g <= 10; g++) {
    const x = Math.round((g / 10) * width) + 0.5;
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, height);
    ctx.stroke();
  }

  for (let ch = 0; ch < lanes; ch++) {
    const mid = laneH * ch + laneH / 2;
    ctx.strokeStyle = "#2c3644";
    ctx.beginPath();
    ctx.moveTo(0, mid + 0.5);
    ctx.lineTo(width, mid + 0.5);
    ctx.stroke();

    const samples = state.windowSamples(ch);
    const bins = minMaxBins(samples, width);
    const scale = divPx / state.uvPerDiv;
    ctx.strokeStyle = TRACE_COLORS[ch % TRACE_COLORS.length];
    ctx.beginPath();
    const offset = width - bins.length; // right-align a not-yet-full window
    for (let i = 0; i < bins.length; i++) {
      const yMin = mid - bins[i].max * scale;
      const yMax = mid - bins[i].min * scale;
      ctx.moveTo(offset + i + 0.5, yMin);
      ctx.lineTo(offset + i + 0.5, Math.max(yMax, yMin + 1));
    }
    ctx.stroke();

    ctx.fillStyle = "#8fa3b8";
    ctx.font = "12px system-ui, sans-serif";
    ctx.fillText(labels[ch] ?? `CH${ch + 1}`, 6, laneH * ch + 14);
  }

  for (const gap of state.visibleGaps()) {
    const x = Math.round(gap.x * width) + 0.5;
    ctx.strokeStyle = "#ff5252";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, height);
    ctx.stroke();
    ctx.fillStyle = "#ff5252";
    ctx.fillText(`-${gap.samples}`, Math.min(x + 3, width - 40), 12);
  }

  ctx.fillStyle = "#8fa3b8";
  ctx.fillText(
    `${state.windowSeconds
    } s window | ${state.uvPerDiv} uV/div | t=${state.streamTime.toFixed(1)} s` +
    (state.paused ? " | PAUSED" : ""),
    6,
    height - 6,
  );
}
