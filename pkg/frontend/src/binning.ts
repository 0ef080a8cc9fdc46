// Display decimation that cannot alias a spike away: each horizontal pixel
// gets the min and max of the samples it covers, drawn as a vertical span.

export interface Bin {
  min: number;
  max: number;
}

export function minMaxBins(samples: ArrayLike<number>, bins: number): Bin[] {
  if (bins <= 0) return [];
  const out: Bin[] = [];
  const n = samples.length;
  if (n === 0) return out;
  if (n <= bins) {
    for (let i = 0; i < n; i++) out.push({ min: samples[i], max: samples[i] });
    return out;
  }
  for (let b = 0; b < bins; b++) {
    const start = Math.floor((b * n) / bins);
    const end = Math.max(start + 1, Math.floor(((b + 1) * n) / bins));
    let lo = samples[start];
    let hi = samples[start];
    for (let i = start + 1; i < end; i++) {
      const v = samples[i];
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
    out.push({ min: lo, max: hi });
  }
  return out;
}
