/**
 * First-person camera state and input handling. Pure functions: the render
 * loop feeds per-frame input and the elapsed time, movement is expressed in
 * units per second so frame rate never changes the walk speed.
 *
 * The world is y-up; image rows point down. The camera matrix columns are
 * (right, down, forward), a proper rotation in this scene handedness.
 */

export interface ViewerState {
  position: [number, number, number];
  yawDeg: number;
  pitchDeg: number;
  speed: number; // units per second
}

export interface InputFrame {
  forward: boolean;
  back: boolean;
  left: boolean;
  right: boolean;
  up: boolean; // E
  down: boolean; // Q
  dyawDeg: number; // mouse drag this frame
  dpitchDeg: number;
}

export const PITCH_LIMIT_DEG = 89;

export function createState(init?: Partial<ViewerState>): ViewerState {
  const state: ViewerState = {
    position: [0, 0, 0],
    yawDeg: 0,
    pitchDeg: 0,
    speed: 1.0,
    ...init,
  };
  if (!(state.speed > 0)) {
    throw new Error(`speed must be positive, got ${state.speed}`);
  }
  return state;
}

export function emptyInput(): InputFrame {
  return {
    forward: false,
    back: false,
    left: false,
    right: false,
    up: false,
    down: false,
    dyawDeg: 0,
    dpitchDeg: 0,
  };
}

const rad = (deg: number) => (deg * Math.PI) / 180;

/** Camera basis vectors in world space for a yaw/pitch pair. */
export function cameraBasis(yawDeg: number, pitchDeg: number) {
  const yaw = rad(yawDeg);
  const pitch = rad(pitchDeg);
  const forward: [number, number, number] = [
    Math.sin(yaw) * Math.cos(pitch),
    Math.sin(pitch),
    Math.cos(yaw) * Math.cos(pitch),
  ];
  const right: [number, number, number] = [-Math.cos(yaw), 0, Math.sin(yaw)];
  const down: [number, number, number] = [
    forward[1] * right[2] - forward[2] * right[1],
    forward[2] * right[0] - forward[0] * right[2],
    forward[0] * right[1] - forward[1] * right[0],
  ];
  return { right, down, forward };
}

/** Row-major world-from-camera matrix, columns (right, down, forward). */
export function rotationMatrix(state: ViewerState): number[] {
  const { right, down, forward } = cameraBasis(state.yawDeg, state.pitchDeg);
  return [
    right[0], down[0], forward[0],
    right[1], down[1], forward[1],
    right[2], down[2], forward[2],
  ];
}

export function handleInput(
  state: ViewerState,
  input: InputFrame,
  dtSeconds: number,
): ViewerState {
  const yawDeg = state.yawDeg + input.dyawDeg;
  const pitchDeg = Math.max(
    -PITCH_LIMIT_DEG,
    Math.min(PITCH_LIMIT_DEG, state.pitchDeg + input.dpitchDeg),
  );
  // WASD moves in the horizontal plane of the CURRENT heading; Q/E along
  // the world vertical
  const yaw = rad(yawDeg);
  const ahead = [Math.sin(yaw), 0, Math.cos(yaw)];
  const right = [-Math.cos(yaw), 0, Math.sin(yaw)];
  let mx = 0;
  if (input.forward) mx += 1;
  if (input.back) mx -= 1;
  let ms = 0;
  if (input.right) ms += 1;
  if (input.left) ms -= 1;
  let my = 0;
  if (input.up) my += 1;
  if (input.down) my -= 1;
  const norm = Math.hypot(mx, ms) || 1; // diagonal no faster than straight
  const step = state.speed * dtSeconds;
  const position: [number, number, number] = [
    state.position[0] + ((ahead[0] * mx + right[0] * ms) / norm) * step,
    state.position[1] + my * step,
    state.position[2] + ((ahead[2] * mx + right[2] * ms) / norm) * step,
  ];
  return { ...state, position, yawDeg, pitchDeg };
}
