// Guided eyes-closed/eyes-open protocol: fullscreen prompts with a countdown,
// one ANNOTATE per step boundary, and a closing report built from the alpha
// power the server streams in METRICS (mean per step, closed/open ratio).

export type StepLabel = "eyes_closed" | "eyes_open";

export interface ProtocolStep {
  label: StepLabel;
  seconds: number;
}

export interface StepReport {
  label: StepLabel;
  start: number;
  end: number;
  meanAlphaPower: number | null;
  samples: number;
}

export interface ProtocolReport {
  steps: StepReport[];
  ratio: number | null; // mean closed alpha power / mean open
  aborted: boolean;
}

export function defaultProtocol(): ProtocolStep[] {
  const steps: ProtocolStep[] = [];
  for (let i = 0; i < 6; i++) {
    steps.push({ label: i % 2 === 0 ? "eyes_closed" : "eyes_open", seconds: 5 });
  }
  return steps;
}

export class ProtocolRunError extends Error {}

type Annotate = (text: string, streamTime: number) => void;

export class ProtocolRunner {
  readonly steps: ProtocolStep[];
  private annotate: Annotate;
  private startTime = 0;
  private boundaries: number[] = []; // stream time of each step start
  private announced = 0; // steps whose start annotation went out
  private power: { sum: number; count: number }[] = [];
  private _running = false;
  private _aborted = false;
  private _finished = false;

  constructor(steps: ProtocolStep[], annotate: Annotate) {
    if (steps.length === 0) throw new ProtocolRunError("protocol needs at least one step");
    for (const step of steps) {
      if (step.seconds <= 0) throw new ProtocolRunError("step seconds must be > 0");
    }
    this.steps = steps.map((s) => ({ ...s }));
    this.annotate = annotate;
  }

  get running(): boolean {
    return this._running;
  }

  get totalSeconds(): number {
    return this.steps.reduce((acc, s) => acc + s.seconds, 0);
  }

  start(streamTime: number): void {
    if (this._running) throw new ProtocolRunError("already running");
    this.startTime = streamTime;
    this.boundaries = [];
    let t = streamTime;
    for (const step of this.steps) {
      this.boundaries.push(t);
      t += step.seconds;
    }
    this.power = this.steps.map(() => ({ sum: 0, count: 0 }));
    this.announced = 0;
    this._running = true;
    this._aborted = false;
    this._finished = false;
    this.advance(streamTime);
  }

  /** Index of the step active at streamTime, or steps.length when past the end. */
  stepIndexAt(streamTime: number): number {
    let idx = 0;
    while (idx < this.steps.length && streamTime >= this.boundaries[idx] + this.steps[idx].seconds) {
      idx++;
    }
    return idx;
  }

  /**
   * Drive the run from the stream clock. Emits the boundary annotation for
   * every step entered since the last call (each exactly once) and returns
   * the current prompt, or null once the run is over.
   */
  advance(streamTime: number): { label: StepLabel; remaining: number } | null {
    if (!this._running) return null;
    const idx = this.stepIndexAt(streamTime);
    while (this.announced <= Math.min(idx, this.steps.length - 1) && this.announced < this.steps.length) {
      this.annotate(this.steps[this.announced].label, this.boundaries[this.announced]);
      this.announced++;
    }
    if (idx >= this.steps.length) {
      this._running = false;
      this._finished = true;
      return null;
    }
    const step = this.steps[idx];
    return { label: step.label, remaining: this.boundaries[idx] + step.seconds - streamTime };
  }

  /** Fold one METRICS alpha-power reading (for the scored channel) in. */
  recordAlphaPower(streamTime: number, alphaPowerUv2: number): void {
    if (!this._running && !this._finished) return;
    const idx = this.stepIndexAt(streamTime);
    if (idx >= this.steps.length || streamTime < this.startTime) return;
    this.power[idx].sum += alphaPowerUv2;
    this.power[idx].count += 1;
  }

  abort(streamTime: number): void {
    if (!this._running) return;
    this._running = false;
    this._aborted = true;
    this.annotate("protocol_aborted", streamTime);
  }

  report(): ProtocolReport {
    const steps: StepReport[] = this.steps.map((step, i) => ({
      label: step.label,
      start: this.boundaries[i] ?? 0,
      end: (this.boundaries[i] ?? 0) + step.seconds,
      meanAlphaPower: this.power[i]?.count ? this.power[i].sum / this.power[i].count : null,
      samples: this.power[i]?.count ?? 0,
    }));
    const closed = steps.filter((s) => s.label === "eyes_closed" && s.meanAlphaPower !== null);
    const open = steps.filter((s) => s.label === "eyes_open" && s.meanAlphaPower !== null);
    let ratio: number | null = null;
    if (closed.length && open.length) {
      const mean = (xs: StepReport[]) =>
        xs.reduce((acc, s) => acc + (s.meanAlphaPower as number), 0) / xs.length;
      const openMean = mean(open);
      ratio = openMean > 0 ? mean(closed) / openMean : null;
    }
    return { steps, ratio, aborted: this._aborted };
  }
}
