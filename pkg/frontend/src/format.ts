/**
 * Scene binary codec. 32 bytes per gaussian, little-endian:
 *
 *   offset  0  position  3 x f32
 *   offset 12  scale     3 x f32   (linear, not log)
 *   offset 24  rgba      4 x u8    (color and opacity as x/255)
 *   offset 28  quat      4 x u8    (wxyz, bias-128 fixed point: q = (b-128)/128)
 *
 * Decode then encode reproduces the original bytes exactly.
 */

export const RECORD_BYTES = 32;
export const FORMAT_VERSION = 1;

export interface Sidecar {
  count: number;
  scene_scale: number;
  version: number;
}

export interface Scene {
  count: number;
  sceneScale: number;
  positions: Float32Array; // 3n
  scales: Float32Array; // 3n
  colors: Float32Array; // 3n in [0, 1]
  opacities: Float32Array; // n in [0, 1]
  quats: Float32Array; // 4n wxyz, as stored (not renormalized)
}

export class SceneFormatError extends Error {}

export function decodeScene(payload: ArrayBuffer, sidecar: Sidecar): Scene {
  if (sidecar.version !== FORMAT_VERSION) {
    throw new SceneFormatError(
      `unsupported scene version ${sidecar.version}, expected ${FORMAT_VERSION}`,
    );
  }
  if (payload.byteLength % RECORD_BYTES !== 0) {
    throw new SceneFormatError(
      `payload of ${payload.byteLength} bytes is not a multiple of ${RECORD_BYTES}`,
    );
  }
  const count = payload.byteLength / RECORD_BYTES;
  if (count !== sidecar.count) {
    throw new SceneFormatError(
      `payload holds ${count} gaussians, sidecar says ${sidecar.count}`,
    );
  }
  const view = new DataView(payload);
  const positions = new Float32Array(3 * count);
  const scales = new Float32Array(3 * count);
  const colors = new Float32Array(3 * count);
  const opacities = new Float32Array(count);
  const quats = new Float32Array(4 * count);
  for (let i = 0; i < count; i++) {
    const base = i * RECORD_BYTES;
    for (let k = 0; k < 3; k++) {
      positions[3 * i + k] = view.getFloat32(base + 4 * k, true);
      scales[3 * i + k] = view.getFloat32(base + 12 + 4 * k, true);
      colors[3 * i + k] = view.getUint8(base + 24 + k) / 255;
    }
    opacities[i] = view.getUint8(base + 27) / 255;
    for (let k = 0; k < 4; k++) {
      quats[4 * i + k] = (view.getUint8(base + 28 + k) - 128) / 128;
    }
  }
  return {
    count,
    sceneScale: sidecar.scene_scale,
    positions,
    scales,
    colors,
    opacities,
    quats,
  };
}

export function encodeScene(scene: Scene): ArrayBuffer {
  const payload = new ArrayBuffer(scene.count * RECORD_BYTES);
  const view = new DataView(payload);
  const byteOf = (x: number) => Math.min(255, Math.max(0, Math.round(x * 255)));
  for (let i = 0; i < scene.count; i++) {
    const base = i * RECORD_BYTES;
    for (let k = 0; k < 3; k++) {
      view.setFloat32(base + 4 * k, scene.positions[3 * i + k], true);
      view.setFloat32(base + 12 + 4 * k, scene.scales[3 * i + k], true);
      view.setUint8(base + 24 + k, byteOf(scene.colors[3 * i + k]));
    }
    view.setUint8(base + 27, byteOf(scene.opacities[i]));
    for (let k = 0; k < 4; k++) {
      const q = Math.round(scene.quats[4 * i + k] * 128) + 128;
      view.setUint8(base + 28 + k, Math.min(255, Math.max(0, q)));
    }
  }
  return payload;
}

/** Fetch a scene binary and its JSON sidecar from the pipeline server. */
export async function loadScene(url: string): Promise<Scene> {
  const binResp = await fetch(url);
  if (!binResp.ok) {
    throw new SceneFormatError(`fetching ${url} failed: ${binResp.status}`);
  }
  const payload = await binResp.arrayBuffer();
  const sidecarUrl = url.replace(/\.bin$/, ".json");
  const metaResp = await fetch(sidecarUrl);
  if (!metaResp.ok) {
    throw new SceneFormatError(
      `fetching sidecar ${sidecarUrl} failed: ${metaResp.status}`,
    );
  }
  const sidecar = (await metaResp.json()) as Sidecar;
  return decodeScene(payload, sidecar);
}

/** Decode a drag-and-dropped file with no sidecar available. */
export function decodeBare(payload: ArrayBuffer, sceneScale = 1.0): Scene {
  if (payload.byteLength % RECORD_BYTES !== 0) {
    throw new SceneFormatError(
      `payload of ${payload.byteLength} bytes is not a multiple of ${RECORD_BYTES}`,
    );
  }
  return decodeScene(payload, {
    count: payload.byteLength / RECORD_BYTES,
    scene_scale: sceneScale,
    version: FORMAT_VERSION,
  });
}
