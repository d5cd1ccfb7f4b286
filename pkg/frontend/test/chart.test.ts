import { describe, expect, it } from "vitest";

import { StripBuffer } from "../src/chart.js";

function fill(buffer: StripBuffer, t0: number, t1: number, dt = 0.1): void {
  for (let t = t0; t <= t1 + 1e-9; t += dt) {
    buffer.push({ t, etaBar: Math.sin(t) ** 2, contact: false });
  }
}

describe("StripBuffer", () => {
  it("keeps only the sliding window", () => {
    const buffer = new StripBuffer(10);
    fill(buffer, 0, 25);
    const ts = buffer.points.map((p) => p.t);
    expect(Math.min(...ts)).toBeGreaterThanOrEqual(15);
    expect(Math.max(...ts)).toBeCloseTo(25, 9);
  });

  it("spans the stated window once full", () => {
    const buffer = new StripBuffer(10);
    fill(buffer, 0, 32);
    const [start, end] = buffer.span();
    expect(end).toBeCloseTo(32, 9);
    expect(start).toBeCloseTo(22, 9);
  });

  it("pads the span before the window fills", () => {
    const buffer = new StripBuffer(10);
    fill(buffer, 0, 3);
    expect(buffer.span()).toEqual([0, 10]);
  });

  it("drops history when time jumps backwards (run reset)", () => {
    const buffer = new StripBuffer(10);
    fill(buffer, 20, 28);
    buffer.push({ t: 0.0, etaBar: 0.5, contact: true });
    expect(buffer.points).toHaveLength(1);
    expect(buffer.points[0]!.t).toBe(0);
  });

  it("tracks the peak of the visible window only", () => {
    const buffer = new StripBuffer(5);
    buffer.push({ t: 0, etaBar: 40, contact: true });
    fill(buffer, 10, 14);
    expect(buffer.peak()).toBeLessThanOrEqual(1.0);
  });

  it("clear empties it", () => {
    const buffer = new StripBuffer(10);
    fill(buffer, 0, 2);
    buffer.clear();
    expect(buffer.points).toHaveLength(0);
  });
});
