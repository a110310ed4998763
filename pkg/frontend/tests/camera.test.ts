import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";

import {
  PITCH_LIMIT_DEG,
  cameraBasis,
  createState,
  emptyInput,
  handleInput,
  rotationMatrix,
} from "../src/camera.js";

describe("createState", () => {
  it("fills defaults and applies overrides", () => {
    const state = createState({ speed: 2.5, yawDeg: 30 });
    expect(state.position).toEqual([0, 0, 0]);
    expect(state.speed).toBe(2.5);
    expect(state.yawDeg).toBe(30);
    expect(state.pitchDeg).toBe(0);
  });

  it("rejects a nonpositive speed", () => {
    expect(() => createState({ speed: 0 })).toThrow(/speed/);
  });
});

describe("handleInput", () => {
  it("moves one unit along the view azimuth per second at speed 1", () => {
    const state = createState({ yawDeg: 30 });
    const input = { ...emptyInput(), forward: true };
    const next = handleInput(state, input, 1.0);
    expect(next.position[0]).toBeCloseTo(Math.sin(Math.PI / 6), 12);
    expect(next.position[1]).toBe(0);
    expect(next.position[2]).toBeCloseTo(Math.cos(Math.PI / 6), 12);
  });

  it("keeps WASD horizontal even when pitched", () => {
    const state = createState({ pitchDeg: -45 });
    const next = handleInput(state, { ...emptyInput(), forward: true }, 1.0);
    expect(next.position[1]).toBe(0);
    expect(next.position[2]).toBeCloseTo(1, 12);
  });

  it("normalizes diagonal movement to the straight-line speed", () => {
    const state = createState({ speed: 2 });
    const input = { ...emptyInput(), forward: true, right: true };
    const next = handleInput(state, input, 0.5);
    const dist = Math.hypot(...next.position);
    expect(dist).toBeCloseTo(1.0, 12);
  });

  it("moves vertically along the world axis with E and Q", () => {
    const state = createState({ speed: 0.5, pitchDeg: -30 });
    const up = handleInput(state, { ...emptyInput(), up: true }, 2.0);
    expect(up.position).toEqual([0, 1, 0]);
    const down = handleInput(state, { ...emptyInput(), down: true }, 2.0);
    expect(down.position).toEqual([0, -1, 0]);
  });

  it("clamps pitch to the limit in both directions", () => {
    const state = createState({});
    const upper = handleInput(state, { ...emptyInput(), dpitchDeg: 200 }, 0.016);
    expect(upper.pitchDeg).toBe(PITCH_LIMIT_DEG);
    const lower = handleInput(state, { ...emptyInput(), dpitchDeg: -500 }, 0.016);
    expect(lower.pitchDeg).toBe(-PITCH_LIMIT_DEG);
  });

  it("applies the frame's rotation before its movement", () => {
    const state = createState({});
    const input = { ...emptyInput(), forward: true, dyawDeg: 90 };
    const next = handleInput(state, input, 1.0);
    expect(next.yawDeg).toBe(90);
    expect(next.position[0]).toBeCloseTo(1, 12);
    expect(next.position[2]).toBeCloseTo(0, 12);
  });

  it("leaves the state unchanged without input", () => {
    const state = createState({ position: [1, 2, 3], yawDeg: 40, pitchDeg: -10 });
    const next = handleInput(state, emptyInput(), 0.25);
    expect(next).toEqual(state);
  });

  it("is frame rate independent", () => {
    const input = { ...emptyInput(), forward: true, left: true };
    let many = createState({ yawDeg: 70, speed: 1.3 });
    for (let i = 0; i < 10; i++) many = handleInput(many, input, 0.1);
    const once = handleInput(createState({ yawDeg: 70, speed: 1.3 }), input, 1.0);
    for (let k = 0; k < 3; k++) {
      expect(many.position[k]).toBeCloseTo(once.position[k], 12);
    }
  });
});

describe("rotationMatrix", () => {
  it("matches the rendered fixture camera", () => {
    const camJson = JSON.parse(
      readFileSync(
        fileURLToPath(new URL("./fixtures/tri_camera.json", import.meta.url)),
        "utf8",
      ),
    );
    const R = rotationMatrix(
      createState({ yawDeg: camJson.yaw_deg, pitchDeg: camJson.pitch_deg }),
    );
    for (let k = 0; k < 9; k++) {
      expect(R[k]).toBeCloseTo(camJson.rotation[k], 12);
    }
  });

  it("is a proper rotation with right x down = forward", () => {
    const { right, down, forward } = cameraBasis(37, -12);
    const cross = [
      right[1] * down[2] - right[2] * down[1],
      right[2] * down[0] - right[0] * down[2],
      right[0] * down[1] - right[1] * down[0],
    ];
    for (let k = 0; k < 3; k++) {
      expect(cross[k]).toBeCloseTo(forward[k], 12);
    }
    expect(Math.hypot(...right)).toBeCloseTo(1, 12);
    expect(Math.hypot(...down)).toBeCloseTo(1, 12);
  });
});
