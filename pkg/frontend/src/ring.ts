// Scope-side sample storage: one bounded ring per channel plus gap markers
// taken from each block's dropped_before. Pausing freezes the view only;
// samples keep landing so nothing is lost while the operator inspects.

import { DataMsg, N_CHANNELS } from "./protocol.js";

export interface GapMarker {
  streamTime: number; // seconds since stream start, at the gap's end
  samples: number;
}

export class ChannelRing {
  private buf: Float32Array;
  private writeIdx = 0;
  private filled = 0;

  constructor(capacity: number) {
    this.buf = new Float32Array(capacity);
  }

  get capacity(): number {
    return this.buf.length;
  }

  get length(): number {
    return this.filled;
  }

  push(samples: ArrayLike<number>): void {
    for (let i = 0; i < samples.length; i++) {
      this.buf[this.writeIdx] = samples[i];
      this.writeIdx = (this.writeIdx + 1) % this.buf.length;
    }
    this.filled = Math.min(this.filled + samples.length, this.buf.length);
  }

  /** Latest n samples, oldest first (n capped to what is held). */
  window(n: number): Float32Array {
    const take = Math.min(n, this.filled);
    const out = new Float32Array(take);
    let idx = (this.writeIdx - take + this.buf.length * 2) % this.buf.length;
    for (let i = 0; i < take; i++) {
      out[i] = this.buf[idx];
      idx = (idx + 1) % this.buf.length;
    }
    return out;
  }

  resize(capacity: number): void {
    const keep = this.window(Math.min(capacity, this.filled));
    this.buf = new Float32Array(capacity);
    this.writeIdx = 0;
    this.filled = 0;
    this.push(keep);
  }
}

export const MIN_WINDOW_S = 2;
export const MAX_WINDOW_S = 30;
const MAX_GAPS = 256;

export class ScopeState {
  channels: ChannelRing[] = [];
  gaps: GapMarker[] = [];
  paused = false;
  uvPerDiv: number;
  private windowS: number;
  private fs: number;
  private samplesSeen = 0;
  private droppedSeen = 0;
  lastSeq = -1;
  lastEpoch = 0;

  constructor(fs: number, windowSeconds = 10, uvPerDiv = 50) {
    this.fs = fs;
    this.windowS = clampWindow(windowSeconds);
    this.uvPerDiv = uvPerDiv;
    for (let ch = 0; ch < N_CHANNELS; ch++) {
      this.channels.push(new ChannelRing(this.fs * MAX_WINDOW_S));
    }
  }

  get sampleRate(): number {
    return this.fs;
  }

  get windowSeconds(): number {
    return this.windowS;
  }

  set windowSeconds(value: number) {
    this.windowS = clampWindow(value);
  }

  /** Stream position in seconds: samples seen plus known gaps. */
  get streamTime(): number {
    return (this.samplesSeen + this.droppedSeen) / this.fs;
  }

  get totalDropped(): number {
    return this.droppedSeen;
  }

  reset(fs: number): void {
    this.fs = fs;
    this.channels = [];
    for (let ch = 0; ch < N_CHANNELS; ch++) {
      this.channels.push(new ChannelRing(this.fs * MAX_WINDOW_S));
    }
    this.gaps = [];
    this.samplesSeen = 0;
    this.droppedSeen = 0;
    this.lastSeq = -1;
    this.lastEpoch = 0;
  }

  pushBlock(block: DataMsg): void {
    if (block.droppedBefore > 0) {
      this.droppedSeen += block.droppedBefore;
      this.gaps.push({ streamTime: this.streamTime, samples: block.droppedBefore });
      if (this.gaps.length > MAX_GAPS) this.gaps.shift();
    }
    for (let ch = 0; ch < N_CHANNELS && ch < block.channels.length; ch++) {
      this.channels[ch].push(block.channels[ch]);
    }
    this.samplesSeen += block.samplesPerChannel;
    this.lastSeq = block.seq;
    this.lastEpoch = block.epoch;
  }

  /** Gap markers inside the current display window, as fractions [0,1] of its width. */
  visibleGaps(): { x: number; samples: number }[] {
    const windowStart = this.streamTime - this.windowS;
    return this.gaps
      .filter((g) => g.streamTime >= windowStart)
      .map((g) => ({ x: (g.streamTime - windowStart) / this.windowS, samples: g.samples }));
  }

  windowSamples(channel: number): Float32Array {
    return this.channels[channel].window(Math.round(this.windowS * this.fs));
  }
}

function clampWindow(seconds: number): number {
  return Math.min(MAX_WINDOW_S, Math.max(MIN_WINDOW_S, seconds));
}
