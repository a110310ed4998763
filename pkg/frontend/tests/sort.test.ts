import { describe, expect, it } from "vitest";

import { depthOrder, needsResort, sceneExtent } from "../src/sort.js";

/** Deterministic positions without pulling in an RNG dependency. */
function scatter(n: number): Float32Array {
  const out = new Float32Array(3 * n);
  let s = 123456789 >>> 0;
  for (let i = 0; i < 3 * n; i++) {
    s = (1664525 * s + 1013904223) >>> 0;
    out[i] = (s / 2 ** 32) * 10 - 5;
  }
  return out;
}

function dist2(positions: Float32Array, i: number, cam: number[]): number {
  const dx = positions[3 * i] - cam[0];
  const dy = positions[3 * i + 1] - cam[1];
  const dz = positions[3 * i + 2] - cam[2];
  return dx * dx + dy * dy + dz * dz;
}

describe("depthOrder", () => {
  it("orders far to near within quantization tolerance", () => {
    const n = 800;
    const positions = scatter(n);
    const cam = [0.3, -0.2, 0.6];
    const order = depthOrder(positions, n, cam);
    expect(order.length).toBe(n);
    const seen = Array.from(order).sort((a, b) => a - b);
    expect(seen).toEqual(Array.from({ length: n }, (_, i) => i));
    let min = Infinity;
    let max = -Infinity;
    for (let i = 0; i < n; i++) {
      const v = dist2(positions, i, cam);
      if (v < min) min = v;
      if (v > max) max = v;
    }
    const bucket = (max - min) / (2 ** 16 - 1);
    for (let k = 1; k < n; k++) {
      const prev = dist2(positions, order[k - 1], cam);
      const here = dist2(positions, order[k], cam);
      expect(prev + bucket * 1.001).toBeGreaterThanOrEqual(here);
    }
  });

  it("puts an exactly farther splat strictly earlier", () => {
    // distances far apart, so quantization cannot merge them
    const positions = new Float32Array([
      0, 0, 1,
      0, 0, 9,
      0, 0, 5,
    ]);
    const order = depthOrder(positions, 3, [0, 0, 0]);
    expect(Array.from(order)).toEqual([1, 2, 0]);
  });

  it("handles empty, single, and degenerate scenes", () => {
    expect(depthOrder(new Float32Array(0), 0, [0, 0, 0]).length).toBe(0);
    expect(Array.from(depthOrder(new Float32Array([1, 2, 3]), 1, [0, 0, 0]))).toEqual([0]);
    const same = new Float32Array([2, 2, 2, 2, 2, 2, 2, 2, 2]);
    expect(Array.from(depthOrder(same, 3, [0, 0, 0]))).toEqual([0, 1, 2]);
  });

  it("sorts 50k splats well inside a frame budget", () => {
    const n = 50_000;
    const positions = scatter(n);
    depthOrder(positions, n, [0, 0, 0]); // warm up the JIT
    let best = Infinity;
    for (let run = 0; run < 5; run++) {
      const t0 = performance.now();
      depthOrder(positions, n, [run * 0.01, 0, 0]);
      const took = performance.now() - t0;
      if (took < best) best = took;
    }
    expect(best).toBeLessThan(33);
  });
});

describe("sceneExtent", () => {
  it("is the bounding box diagonal", () => {
    const positions = new Float32Array([0, 0, 0, 3, 4, 12, 1, 1, 1]);
    expect(sceneExtent(positions, 3)).toBeCloseTo(13, 12);
    expect(sceneExtent(new Float32Array(0), 0)).toBe(0);
  });
});

describe("needsResort", () => {
  it("triggers only beyond one percent of the extent", () => {
    expect(needsResort([0, 0, 0], [0.05, 0, 0], 10)).toBe(false);
    expect(needsResort([0, 0, 0], [0.1, 0, 0], 10)).toBe(false); // boundary stays put
    expect(needsResort([0, 0, 0], [0.2, 0, 0], 10)).toBe(true);
    expect(needsResort([1, 1, 1], [1, 1, 1], 10)).toBe(false);
  });

  it("treats zero-extent scenes as always stale once moved", () => {
    expect(needsResort([0, 0, 0], [1e-9, 0, 0], 0)).toBe(true);
    expect(needsResort([0, 0, 0], [0, 0, 0], 0)).toBe(false);
  });
});
