/**
 * Depth ordering for back-to-front compositing. Splats are ordered by
 * distance to the camera position (radial), so turning in place never
 * changes the order and a resort is only needed after translating.
 *
 * Counting sort on 16-bit quantized distances keeps a 50k-gaussian resort
 * comfortably inside a frame.
 */

const BUCKETS = 1 << 16;

/** Indices ordered far-to-near relative to the camera position. */
export function depthOrder(
  positions: Float32Array,
  count: number,
  camPos: readonly number[],
): Uint32Array {
  const order = new Uint32Array(count);
  if (count === 0) return order;
  const d2 = new Float64Array(count);
  let min = Infinity;
  let max = -Infinity;
  for (let i = 0; i < count; i++) {
    const dx = positions[3 * i] - camPos[0];
    const dy = positions[3 * i + 1] - camPos[1];
    const dz = positions[3 * i + 2] - camPos[2];
    const v = dx * dx + dy * dy + dz * dz;
    d2[i] = v;
    if (v < min) min = v;
    if (v > max) max = v;
  }
  if (!(max > min)) {
    for (let i = 0; i < count; i++) order[i] = i;
    return order;
  }
  const scale = (BUCKETS - 1) / (max - min);
  const keys = new Uint32Array(count);
  const counts = new Uint32Array(BUCKETS + 1);
  for (let i = 0; i < count; i++) {
    // invert so bucket 0 is the farthest: output runs far-to-near
    const key = BUCKETS - 1 - ((d2[i] - min) * scale | 0);
    keys[i] = key;
    counts[key + 1]++;
  }
  for (let b = 1; b <= BUCKETS; b++) counts[b] += counts[b - 1];
  for (let i = 0; i < count; i++) {
    order[counts[keys[i]]++] = i;
  }
  return order;
}

/** Bounding-box diagonal of the scene, the "extent" resorts measure against. */
export function sceneExtent(positions: Float32Array, count: number): number {
  if (count === 0) return 0;
  const lo = [Infinity, Infinity, Infinity];
  const hi = [-Infinity, -Infinity, -Infinity];
  for (let i = 0; i < count; i++) {
    for (let k = 0; k < 3; k++) {
      const v = positions[3 * i + k];
      if (v < lo[k]) lo[k] = v;
      if (v > hi[k]) hi[k] = v;
    }
  }
  return Math.hypot(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]);
}

/** True when the camera moved more than 1% of the scene extent since the
 * last sort. Degenerate (zero-extent) scenes resort on any movement. */
export function needsResort(
  lastSortPos: readonly number[],
  camPos: readonly number[],
  extent: number,
): boolean {
  const moved = Math.hypot(
    camPos[0] - lastSortPos[0],
    camPos[1] - lastSortPos[1],
    camPos[2] - lastSortPos[2],
  );
  return moved > 0.01 * extent;
}
