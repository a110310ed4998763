import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";

import { decodeBare, decodeScene, type Scene, type Sidecar } from "../src/format.js";
import { renderCpu, projectScene, type Camera } from "../src/cpuRaster.js";
import { createState, rotationMatrix } from "../src/camera.js";

function fixtureBytes(name: string): ArrayBuffer {
  const buf = readFileSync(fileURLToPath(new URL(`./fixtures/${name}`, import.meta.url)));
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

function fixtureJson(name: string) {
  return JSON.parse(
    readFileSync(fileURLToPath(new URL(`./fixtures/${name}`, import.meta.url)), "utf8"),
  );
}

function triScene(): Scene {
  return decodeScene(fixtureBytes("tri.bin"), fixtureJson("tri.json") as Sidecar);
}

function triCamera(): { cam: Camera; bg: number[] } {
  const meta = fixtureJson("tri_camera.json");
  return {
    cam: {
      width: meta.width,
      height: meta.height,
      focal: meta.focal,
      cx: meta.cx,
      cy: meta.cy,
      rotation: meta.rotation,
      position: meta.position,
    },
    bg: meta.background,
  };
}

/** One 32-byte record: handy for single-gaussian scenes. */
function oneGaussian(
  position: number[],
  scale: number,
  rgb: number[],
  opacityByte = 255,
): Scene {
  const payload = new ArrayBuffer(32);
  const view = new DataView(payload);
  for (let k = 0; k < 3; k++) {
    view.setFloat32(4 * k, position[k], true);
    view.setFloat32(12 + 4 * k, scale, true);
    view.setUint8(24 + k, rgb[k]);
  }
  view.setUint8(27, opacityByte);
  view.setUint8(28, 255); // identity quat after normalization
  view.setUint8(29, 128);
  view.setUint8(30, 128);
  view.setUint8(31, 128);
  return decodeBare(payload);
}

describe("renderCpu against the pipeline rasterizer", () => {
  it("reproduces the reference render of the decoded fixture scene", () => {
    const scene = triScene();
    const { cam, bg } = triCamera();
    const { image, alpha } = renderCpu(scene, cam, bg);
    const reference = new Float32Array(fixtureBytes("tri_reference.bin"));
    expect(reference.length).toBe(cam.width * cam.height * 3);

    let errSum = 0;
    let errMax = 0;
    for (let k = 0; k < reference.length; k++) {
      const e = Math.abs(image[k] - reference[k]);
      errSum += e;
      if (e > errMax) errMax = e;
    }
    const mae = errSum / reference.length;
    expect(mae).toBeLessThan(8 / 255);

    // guards so a blank or misplaced render cannot sneak under the gate:
    // the fixture covers a real fraction of the frame, and the error must
    // stay small on exactly those covered pixels
    let covered = 0;
    let coveredErr = 0;
    for (let p = 0; p < alpha.length; p++) {
      if (alpha[p] > 0.05) {
        covered += 1;
        for (let k = 0; k < 3; k++) {
          coveredErr += Math.abs(image[3 * p + k] - reference[3 * p + k]);
        }
      }
    }
    expect(covered / alpha.length).toBeGreaterThan(0.15);
    expect(coveredErr / (3 * covered)).toBeLessThan(8 / 255);

    // the two implementations share their arithmetic, so the real gap is
    // far below the contract gate (reference storage is f32)
    expect(mae).toBeLessThan(1e-5);
    expect(errMax).toBeLessThan(1e-4);
  });

  it("draws a frontal gaussian at the image center", () => {
    const scene = oneGaussian([0, 0, 2], 0.3, [255, 0, 0]);
    const cam: Camera = {
      width: 32,
      height: 32,
      focal: 30,
      cx: 16,
      cy: 16,
      rotation: [1, 0, 0, 0, 1, 0, 0, 0, 1],
      position: [0, 0, 0],
    };
    const { image, alpha } = renderCpu(scene, cam);
    const center = 16 * 32 + 16;
    expect(alpha[center]).toBeGreaterThan(0.9);
    expect(image[3 * center]).toBeGreaterThan(0.5);
    expect(image[3 * center]).toBeGreaterThan(image[3 * center + 1]);
    expect(image[3 * center]).toBeGreaterThan(image[3 * center + 2]);
    // corners stay background
    expect(alpha[0]).toBeLessThan(0.5);
  });

  it("culls the scene when the camera faces away", () => {
    const scene = oneGaussian([0, 0, 2], 0.3, [255, 0, 0]);
    const bg = [0.1, 0.2, 0.3];
    const cam: Camera = {
      width: 16,
      height: 16,
      focal: 20,
      cx: 8,
      cy: 8,
      rotation: rotationMatrix(createState({ yawDeg: 180 })),
      position: [0, 0, 0],
    };
    const proj = projectScene(scene, cam);
    expect(proj.valid[0]).toBe(0);
    const { image, alpha } = renderCpu(scene, cam, bg);
    for (let p = 0; p < 16 * 16; p++) {
      expect(alpha[p]).toBe(0);
      expect(image[3 * p]).toBe(bg[0]);
      expect(image[3 * p + 1]).toBe(bg[1]);
      expect(image[3 * p + 2]).toBe(bg[2]);
    }
  });

  it("culls a gaussian far outside the guard band", () => {
    const inside = oneGaussian([0.5, 0, 2], 0.1, [0, 255, 0]);
    const out = oneGaussian([30, 0, 2], 0.1, [0, 255, 0]);
    const cam: Camera = {
      width: 32,
      height: 32,
      focal: 30,
      cx: 16,
      cy: 16,
      rotation: [1, 0, 0, 0, 1, 0, 0, 0, 1],
      position: [0, 0, 0],
    };
    expect(projectScene(inside, cam).valid[0]).toBe(1);
    // u = 16 + 30*30/2 = 466, beyond width * (1 + 0.3)
    expect(projectScene(out, cam).valid[0]).toBe(0);
  });
});
