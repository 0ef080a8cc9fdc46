import { describe, expect, it } from "vitest";
import { minMaxBins } from "../src/binning.js";

describe("minMaxBins", () => {
  it("preserves a single-sample spike at any bin count", () => {
    const samples = new Float32Array(10_000);
    samples[6173] = 500; // a blink-like spike
    for (const bins of [50, 100, 333, 900]) {
      const out = minMaxBins(samples, bins);
      const peak = Math.max(...out.map((b) => b.max));
      expect(peak).toBe(500);
    }
  });

  it("covers every sample exactly once", () => {
    const samples = Float32Array.from({ length: 1000 }, (_, i) => i);
    const out = minMaxBins(samples, 64);
    expect(out).toHaveLength(64);
    expect(out[0].min).toBe(0);
    expect(out[63].max).toBe(999);
    for (let i = 1; i < out.length; i++) {
      expect(out[i].min).toBeGreaterThan(out[i - 1].max - 1e-9);
    }
  });

  it("short input maps one sample per bin", () => {
    const out = minMaxBins([5, -3, 7], 10);
    expect(out).toEqual([
      { min: 5, max: 5 },
      { min: -3, max: -3 },
      { min: 7, max: 7 },
    ]);
  });

  it("empty input and zero bins", () => {
    expect(minMaxBins([], 10)).toEqual([]);
    expect(minMaxBins([1, 2], 0)).toEqual([]);
  });

  it("min <= max in every bin", () => {
    const samples = Float32Array.from({ length: 997 }, (_, i) => Math.sin(i * 0.37) * 40);
    for (const bin of minMaxBins(samples, 120)) {
      expect(bin.min).toBeLessThanOrEqual(bin.max);
    }
  });
});
