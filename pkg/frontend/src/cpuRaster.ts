/**
 * Software reference renderer. Projects gaussians with the same EWA math
 * and compositing rules as the pipeline's rasterizer (near plane 0.01,
 * off-image guard band 30%, covariance floor 0.3, alpha clamp 0.99, alpha
 * skip 1/255, 16px tile inclusion), so its output can be compared against
 * scene renders produced on the pipeline side. The WebGL renderer uses the
 * same projection in shader form; this path is the testable ground truth
 * and the fallback when WebGL2 is unavailable.
 */

import type { Scene } from "./format.js";

export const NEAR_PLANE = 0.01;
export const COV2D_FLOOR = 0.3;
export const GUARD_BAND = 0.3;
export const ALPHA_CLAMP = 0.99;
export const ALPHA_SKIP = 1 / 255;
const TILE = 16;

export interface Camera {
  width: number;
  height: number;
  focal: number;
  cx: number;
  cy: number;
  /** row-major world-from-camera rotation, columns (right, down, forward) */
  rotation: number[];
  position: number[];
}

export interface Projected {
  valid: Uint8Array;
  means2d: Float64Array; // 2n
  conics: Float64Array; // 3n: inverse covariance (a, b, c)
  depths: Float64Array; // n
  radii: Float64Array; // n
}

function quatToMatrix(w: number, x: number, y: number, z: number): number[] {
  const n = Math.hypot(w, x, y, z);
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  return [
    1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
    2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
    2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
  ];
}

export function projectScene(scene: Scene, cam: Camera): Projected {
  const n = scene.count;
  const valid = new Uint8Array(n);
  const means2d = new Float64Array(2 * n);
  const conics = new Float64Array(3 * n);
  const depths = new Float64Array(n);
  const radii = new Float64Array(n);
  const R = cam.rotation;
  const bandX = GUARD_BAND * cam.width;
  const bandY = GUARD_BAND * cam.height;
  for (let i = 0; i < n; i++) {
    const dx = scene.positions[3 * i] - cam.position[0];
    const dy = scene.positions[3 * i + 1] - cam.position[1];
    const dz = scene.positions[3 * i + 2] - cam.position[2];
    // x_cam = R^T d: dot with the matrix columns
    const px = R[0] * dx + R[3] * dy + R[6] * dz;
    const py = R[1] * dx + R[4] * dy + R[7] * dz;
    const pz = R[2] * dx + R[5] * dy + R[8] * dz;
    depths[i] = pz;
    if (pz <= NEAR_PLANE) continue;
    const f = cam.focal;
    const u = cam.cx + (f * px) / pz;
    const v = cam.cy + (f * py) / pz;
    if (u <= -bandX || u >= cam.width + bandX) continue;
    if (v <= -bandY || v >= cam.height + bandY) continue;
    means2d[2 * i] = u;
    means2d[2 * i + 1] = v;

    const Q = quatToMatrix(
      scene.quats[4 * i], scene.quats[4 * i + 1],
      scene.quats[4 * i + 2], scene.quats[4 * i + 3],
    );
    const s0 = scene.scales[3 * i] ** 2;
    const s1 = scene.scales[3 * i + 1] ** 2;
    const s2 = scene.scales[3 * i + 2] ** 2;
    // world covariance Q S^2 Q^T, then into camera frame via W = R^T
    const cov = new Float64Array(9);
    for (let r = 0; r < 3; r++) {
      for (let c = 0; c < 3; c++) {
        cov[3 * r + c] =
          Q[3 * r] * s0 * Q[3 * c] +
          Q[3 * r + 1] * s1 * Q[3 * c + 1] +
          Q[3 * r + 2] * s2 * Q[3 * c + 2];
      }
    }
    const M = new Float64Array(9);
    for (let r = 0; r < 3; r++) {
      // row r of W is column r of R
      const wr = [R[r], R[r + 3], R[r + 6]];
      for (let c = 0; c < 3; c++) {
        const wc = [R[c], R[c + 3], R[c + 6]];
        let acc = 0;
        for (let a = 0; a < 3; a++) {
          for (let b = 0; b < 3; b++) {
            acc += wr[a] * cov[3 * a + b] * wc[b];
          }
        }
        M[3 * r + c] = acc;
      }
    }
    // J rows: (f/z, 0, -f x/z^2), (0, f/z, -f y/z^2)
    const j00 = f / pz;
    const j02 = (-f * px) / (pz * pz);
    const j12 = (-f * py) / (pz * pz);
    const a =
      j00 * (M[0] * j00 + M[2] * j02) + j02 * (M[6] * j00 + M[8] * j02) +
      COV2D_FLOOR;
    const b =
      j00 * (M[1] * j00 + M[2] * j12) + j02 * (M[7] * j00 + M[8] * j12);
    const c =
      j00 * (M[4] * j00 + M[5] * j12) + j12 * (M[7] * j00 + M[8] * j12) +
      COV2D_FLOOR;
    const det = a * c - b * b;
    conics[3 * i] = c / det;
    conics[3 * i + 1] = -b / det;
    conics[3 * i + 2] = a / det;
    const mid = 0.5 * (a + c);
    const lamMax = mid + Math.sqrt(Math.max(mid * mid - det, 0));
    radii[i] = Math.ceil(3 * Math.sqrt(lamMax));
    valid[i] = 1;
  }
  return { valid, means2d, conics, depths, radii };
}

/** Front-to-back composite into a H*W*3 buffer; also returns coverage. */
export function renderCpu(
  scene: Scene,
  cam: Camera,
  bg: readonly number[] = [0, 0, 0],
): { image: Float64Array; alpha: Float64Array } {
  const { width, height } = cam;
  const proj = projectScene(scene, cam);
  const order: number[] = [];
  for (let i = 0; i < scene.count; i++) if (proj.valid[i]) order.push(i);
  order.sort((p, q) => proj.depths[p] - proj.depths[q]);

  const image = new Float64Array(width * height * 3);
  const alpha = new Float64Array(width * height);
  const ntx = Math.ceil(width / TILE);
  const nty = Math.ceil(height / TILE);
  const clampTile = (t: number, n: number) => Math.max(0, Math.min(n - 1, t));
  for (let py = 0; py < height; py++) {
    for (let px = 0; px < width; px++) {
      let T = 1;
      let r0 = 0;
      let g0 = 0;
      let b0 = 0;
      for (const g of order) {
        const rad = proj.radii[g];
        const mx = proj.means2d[2 * g];
        const my = proj.means2d[2 * g + 1];
        if (mx + rad < 0 || my + rad < 0 || mx - rad > width || my - rad > height) {
          continue;
        }
        const ax0 = clampTile(Math.floor((mx - rad) / TILE), ntx);
        const ax1 = clampTile(Math.floor((mx + rad) / TILE), ntx);
        const ay0 = clampTile(Math.floor((my - rad) / TILE), nty);
        const ay1 = clampTile(Math.floor((my + rad) / TILE), nty);
        const tx = Math.floor(px / TILE);
        const ty = Math.floor(py / TILE);
        if (tx < ax0 || tx > ax1 || ty < ay0 || ty > ay1) continue;
        const dx = px + 0.5 - mx;
        const dy = py + 0.5 - my;
        const power = -0.5 * (
          proj.conics[3 * g] * dx * dx +
          2 * proj.conics[3 * g + 1] * dx * dy +
          proj.conics[3 * g + 2] * dy * dy
        );
        if (power > 0) continue;
        let a = scene.opacities[g] * Math.exp(power);
        if (a > ALPHA_CLAMP) a = ALPHA_CLAMP;
        if (a < ALPHA_SKIP) continue;
        const w = a * T;
        r0 += scene.colors[3 * g] * w;
        g0 += scene.colors[3 * g + 1] * w;
        b0 += scene.colors[3 * g + 2] * w;
        T *= 1 - a;
      }
      const at = py * width + px;
      image[3 * at] = r0 + bg[0] * T;
      image[3 * at + 1] = g0 + bg[1] * T;
      image[3 * at + 2] = b0 + bg[2] * T;
      alpha[at] = 1 - T;
    }
  }
  return { image, alpha };
}
