/**
 * WebGL2 splat renderer: one instanced quad per gaussian, EWA projection in
 * the vertex shader, alpha compositing back-to-front with premultiplied
 * blending. Instance buffers are uploaded in depth order, so a resort means
 * a repack and re-upload but drawing stays a single instanced call.
 *
 * Projection and compositing constants mirror cpuRaster.ts; the fragment
 * shader applies the same 0.99 alpha clamp and 1/255 skip.
 */

import type { Scene } from "./format.js";
import type { Camera } from "./cpuRaster.js";

const VERT = `#version 300 es
precision highp float;
layout(location=0) in vec2 corner;     // quad corner in {-1,1}^2
layout(location=1) in vec3 center;     // instance: world position
layout(location=2) in vec3 covA;       // instance: cov3d (xx, xy, xz)
layout(location=3) in vec3 covB;       // instance: cov3d (yy, yz, zz)
layout(location=4) in vec4 colorOp;    // instance: rgb + opacity

uniform mat3 worldToCam;   // rows (right, down, forward) dotted with d
uniform vec3 camPos;
uniform float focal;
uniform vec2 principal;    // cx, cy
uniform vec2 viewport;     // width, height in pixels

out vec2 vOffset;          // pixel offset from the splat center
flat out vec3 vConic;
flat out vec4 vColorOp;

const float NEAR = 0.01;
const float GUARD = 0.3;
const float FLOOR3 = 0.3;

void main() {
  vec3 p = worldToCam * (center - camPos);
  if (p.z <= NEAR) { gl_Position = vec4(0.0, 0.0, 2.0, 1.0); return; }
  vec2 mean = principal + focal * p.xy / p.z;
  vec2 band = GUARD * viewport;
  if (mean.x <= -band.x || mean.x >= viewport.x + band.x ||
      mean.y <= -band.y || mean.y >= viewport.y + band.y) {
    gl_Position = vec4(0.0, 0.0, 2.0, 1.0); return;
  }
  mat3 V = mat3(covA.x, covA.y, covA.z,
                covA.y, covB.x, covB.y,
                covA.z, covB.y, covB.z);
  mat3 M = worldToCam * V * transpose(worldToCam);
  float iz = 1.0 / p.z;
  float iz2 = iz * iz;
  // J rows (f/z, 0, -f x/z^2), (0, f/z, -f y/z^2)
  vec3 j0 = vec3(focal * iz, 0.0, -focal * p.x * iz2);
  vec3 j1 = vec3(0.0, focal * iz, -focal * p.y * iz2);
  float a = dot(j0, M * j0) + FLOOR3;
  float b = dot(j0, M * j1);
  float c = dot(j1, M * j1) + FLOOR3;
  float det = a * c - b * b;
  vConic = vec3(c, -b, a) / det;
  float mid = 0.5 * (a + c);
  float radius = ceil(3.0 * sqrt(mid + sqrt(max(mid * mid - det, 0.0))));
  vColorOp = colorOp;
  vOffset = corner * radius;
  vec2 screen = mean + vOffset;
  vec2 clip = vec2(screen.x / viewport.x, 1.0 - screen.y / viewport.y) * 2.0 - 1.0;
  gl_Position = vec4(clip, 0.0, 1.0);
}`;

const FRAG = `#version 300 es
precision highp float;
in vec2 vOffset;
flat in vec3 vConic;
flat in vec4 vColorOp;
out vec4 outColor;

void main() {
  float power = -0.5 * (vConic.x * vOffset.x * vOffset.x
                        + 2.0 * vConic.y * vOffset.x * vOffset.y
                        + vConic.z * vOffset.y * vOffset.y);
  if (power > 0.0) discard;
  float alpha = min(vColorOp.w * exp(power), 0.99);
  if (alpha < 1.0 / 255.0) discard;
  outColor = vec4(vColorOp.rgb * alpha, alpha);
}`;

function compile(gl: WebGL2RenderingContext, kind: number, src: string) {
  const shader = gl.createShader(kind);
  if (!shader) throw new Error("shader allocation failed");
  gl.shaderSource(shader, src);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new Error(`shader compile failed: ${gl.getShaderInfoLog(shader)}`);
  }
  return shader;
}

export class SplatRenderer {
  private canvas: HTMLCanvasElement;
  private gl: WebGL2RenderingContext | null = null;
  private program: WebGLProgram | null = null;
  private quad: WebGLBuffer | null = null;
  private instances: WebGLBuffer | null = null;
  private vao: WebGLVertexArrayObject | null = null;
  private scene: Scene | null = null;
  private packed: Float32Array | null = null; // 13 floats per instance
  private contextLost = false;

  constructor(canvas: HTMLCanvasElement) {
    this.canvas = canvas;
    canvas.addEventListener("webglcontextlost", (ev) => {
      ev.preventDefault();
      this.contextLost = true;
    });
    canvas.addEventListener("webglcontextrestored", () => {
      this.contextLost = false;
      this.initGl();
      if (this.scene) this.uploadPacked();
    });
    this.initGl();
  }

  get lost(): boolean {
    return this.contextLost;
  }

  private initGl() {
    const gl = this.canvas.getContext("webgl2", {
      antialias: false,
      alpha: false,
    });
    if (!gl) throw new Error("WebGL2 is not available");
    this.gl = gl;
    const program = gl.createProgram()!;
    gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VERT));
    gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, FRAG));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(`program link failed: ${gl.getProgramInfoLog(program)}`);
    }
    this.program = program;
    this.quad = gl.createBuffer();
    gl.bindBuffer(gl.ARRAY_BUFFER, this.quad);
    gl.bufferData(
      gl.ARRAY_BUFFER,
      new Float32Array([-1, -1, 1, -1, -1, 1, 1, 1]),
      gl.STATIC_DRAW,
    );
    this.instances = gl.createBuffer();
    this.vao = gl.createVertexArray();
    gl.bindVertexArray(this.vao);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.quad);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.instances);
    const stride = 13 * 4;
    const layout: Array<[number, number, number]> = [
      [1, 3, 0], // center
      [2, 3, 12], // covA
      [3, 3, 24], // covB
      [4, 4, 36], // colorOp
    ];
    for (const [loc, size, offset] of layout) {
      gl.enableVertexAttribArray(loc);
      gl.vertexAttribPointer(loc, size, gl.FLOAT, false, stride, offset);
      gl.vertexAttribDivisor(loc, 1);
    }
    gl.bindVertexArray(null);
    gl.disable(gl.DEPTH_TEST);
    gl.enable(gl.BLEND);
    gl.blendFunc(gl.ONE, gl.ONE_MINUS_SRC_ALPHA);
  }

  /** Covariances are computed once per scene; order comes from setOrder. */
  setScene(scene: Scene) {
    this.scene = scene;
    const n = scene.count;
    this.packed = new Float32Array(13 * n);
    const cov = new Float64Array(6 * n);
    for (let i = 0; i < n; i++) {
      let w = scene.quats[4 * i];
      let x = scene.quats[4 * i + 1];
      let y = scene.quats[4 * i + 2];
      let z = scene.quats[4 * i + 3];
      const qn = Math.hypot(w, x, y, z) || 1;
      w /= qn;
      x /= qn;
      y /= qn;
      z /= qn;
      const R = [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
      ];
      const s = [
        scene.scales[3 * i] ** 2,
        scene.scales[3 * i + 1] ** 2,
        scene.scales[3 * i + 2] ** 2,
      ];
      const at = (r: number, c: number) =>
        R[3 * r] * s[0] * R[3 * c] +
        R[3 * r + 1] * s[1] * R[3 * c + 1] +
        R[3 * r + 2] * s[2] * R[3 * c + 2];
      cov[6 * i] = at(0, 0);
      cov[6 * i + 1] = at(0, 1);
      cov[6 * i + 2] = at(0, 2);
      cov[6 * i + 3] = at(1, 1);
      cov[6 * i + 4] = at(1, 2);
      cov[6 * i + 5] = at(2, 2);
    }
    this.cov6 = cov;
    this.setOrder(null);
  }

  private cov6: Float64Array | null = null;
  private drawCount = 0;

  /** Repack instances in the given back-to-front order and upload. */
  setOrder(order: Uint32Array | null) {
    const scene = this.scene;
    const cov = this.cov6;
    if (!scene || !cov || !this.packed || !this.gl) return;
    const n = scene.count;
    const out = this.packed;
    for (let slot = 0; slot < n; slot++) {
      const i = order ? order[slot] : slot;
      const at = 13 * slot;
      out[at] = scene.positions[3 * i];
      out[at + 1] = scene.positions[3 * i + 1];
      out[at + 2] = scene.positions[3 * i + 2];
      out[at + 3] = cov[6 * i];
      out[at + 4] = cov[6 * i + 1];
      out[at + 5] = cov[6 * i + 2];
      out[at + 6] = cov[6 * i + 3];
      out[at + 7] = cov[6 * i + 4];
      out[at + 8] = cov[6 * i + 5];
      out[at + 9] = scene.colors[3 * i];
      out[at + 10] = scene.colors[3 * i + 1];
      out[at + 11] = scene.colors[3 * i + 2];
      out[at + 12] = scene.opacities[i];
    }
    this.drawCount = n;
    this.uploadPacked();
  }

  private uploadPacked() {
    const gl = this.gl;
    if (!gl || !this.packed) return;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.instances);
    gl.bufferData(gl.ARRAY_BUFFER, this.packed, gl.DYNAMIC_DRAW);
  }

  draw(cam: Camera, bg: readonly number[] = [0, 0, 0]) {
    const gl = this.gl;
    if (!gl || !this.program || this.contextLost) return;
    const w = this.canvas.width;
    const h = this.canvas.height;
    gl.viewport(0, 0, w, h);
    gl.clearColor(bg[0], bg[1], bg[2], 1);
    gl.clear(gl.COLOR_BUFFER_BIT);
    if (this.drawCount === 0) return;
    gl.useProgram(this.program);
    const R = cam.rotation;
    // uniform mat3 is column-major; worldToCam rows are R's columns, so
    // the column-major upload of W is R itself read row-major
    gl.uniformMatrix3fv(
      gl.getUniformLocation(this.program, "worldToCam"),
      false,
      new Float32Array([R[0], R[1], R[2], R[3], R[4], R[5], R[6], R[7], R[8]]),
    );
    gl.uniform3f(
      gl.getUniformLocation(this.program, "camPos"),
      cam.position[0], cam.position[1], cam.position[2],
    );
    gl.uniform1f(gl.getUniformLocation(this.program, "focal"), cam.focal);
    gl.uniform2f(gl.getUniformLocation(this.program, "principal"), cam.cx, cam.cy);
    gl.uniform2f(gl.getUniformLocation(this.program, "viewport"), w, h);
    gl.bindVertexArray(this.vao);
    gl.drawArraysInstanced(gl.TRIANGLE_STRIP, 0, 4, this.drawCount);
    gl.bindVertexArray(null);
  }
}
