/**
 * Viewer shell: scene list, input handling, and the frame loop.
 *
 * Scenes come from the pipeline's serve endpoint (same origin by default,
 * overridable for a viewer served elsewhere), or from a dropped .bin file.
 */

import { loadScene, decodeBare, SceneFormatError, type Scene } from "./format.js";
import {
  createState,
  emptyInput,
  handleInput,
  rotationMatrix,
  type InputFrame,
  type ViewerState,
} from "./camera.js";
import { depthOrder, needsResort, sceneExtent } from "./sort.js";
import { SplatRenderer } from "./renderer.js";
import type { Camera } from "./cpuRaster.js";

const MOUSE_DEG_PER_PX = 0.25;
const FOV_Y_DEG = 60;

interface SceneEntry {
  name: string;
  url: string;
  count: number;
}

function el<K extends keyof HTMLElementTagNameMap>(tag: K, cls?: string) {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  return node;
}

class App {
  private canvas: HTMLCanvasElement;
  private renderer: SplatRenderer;
  private state: ViewerState;
  private input: InputFrame;
  private scene: Scene | null = null;
  private extent = 1;
  private lastSortPos: [number, number, number] | null = null;
  private lastTime = 0;
  private frames = 0;
  private fpsSince = 0;
  private hud: HTMLElement;
  private message: HTMLElement;
  private listBox: HTMLElement;
  private baseInput: HTMLInputElement;

  constructor(root: HTMLElement) {
    this.canvas = root.querySelector("canvas")!;
    this.hud = root.querySelector("#hud")!;
    this.message = root.querySelector("#message")!;
    this.listBox = root.querySelector("#scene-list")!;
    this.baseInput = root.querySelector("#base-url")!;
    this.renderer = new SplatRenderer(this.canvas);
    this.state = createState({ speed: 1.5 });
    this.input = emptyInput();
    this.bindInput();
    this.resize();
    window.addEventListener("resize", () => this.resize());
    this.baseInput.addEventListener("change", () => {
      void this.refreshList();
    });
    void this.refreshList();
    requestAnimationFrame((t) => this.tick(t));
  }

  private baseUrl(): string {
    const typed = this.baseInput.value.trim();
    return typed === "" ? "" : typed.replace(/\/+$/, "");
  }

  private async refreshList() {
    this.listBox.textContent = "";
    let entries: SceneEntry[];
    try {
      const resp = await fetch(`${this.baseUrl()}/scenes`);
      if (!resp.ok) throw new Error(`HTTP ${resp.status}`);
      entries = (await resp.json()) as SceneEntry[];
    } catch (err) {
      const note = el("div", "note");
      note.textContent =
        `Scene list unavailable (${String(err)}). Start the pipeline's serve ` +
        "command, set its URL above, or drop a scene .bin file here.";
      this.listBox.appendChild(note);
      return;
    }
    if (entries.length === 0) {
      const note = el("div", "note");
      note.textContent = "The server has no reconstructed scenes yet.";
      this.listBox.appendChild(note);
      return;
    }
    for (const entry of entries) {
      const btn = el("button");
      btn.textContent = `${entry.name} (${entry.count} gaussians)`;
      btn.addEventListener("click", () => {
        void this.openRemote(entry);
      });
      this.listBox.appendChild(btn);
    }
  }

  private async openRemote(entry: SceneEntry) {
    this.showMessage(`loading ${entry.name}...`);
    try {
      const scene = await loadScene(`${this.baseUrl()}${entry.url}`);
      this.adopt(scene, entry.name);
    } catch (err) {
      this.showMessage(`failed to load ${entry.name}: ${String(err)}`);
    }
  }

  private adopt(scene: Scene, name: string) {
    if (scene.count === 0) {
      this.showMessage(`${name} is empty: no gaussians to draw.`);
      this.scene = null;
      return;
    }
    this.scene = scene;
    this.extent = sceneExtent(scene.positions, scene.count);
    this.renderer.setScene(scene);
    this.state = createState({ speed: Math.max(0.25 * this.extent, 0.1) });
    this.lastSortPos = null;
    this.showMessage("");
  }

  private showMessage(text: string) {
    this.message.textContent = text;
    this.message.style.display = text === "" ? "none" : "block";
  }

  private bindInput() {
    type MoveKey = "forward" | "back" | "left" | "right" | "up" | "down";
    const keyMap: Record<string, MoveKey> = {
      KeyW: "forward",
      KeyS: "back",
      KeyA: "left",
      KeyD: "right",
      KeyE: "up",
      KeyQ: "down",
    };
    window.addEventListener("keydown", (ev) => {
      const slot = keyMap[ev.code];
      if (slot) this.input[slot] = true;
    });
    window.addEventListener("keyup", (ev) => {
      const slot = keyMap[ev.code];
      if (slot) this.input[slot] = false;
    });
    this.canvas.addEventListener("mousedown", () => {
      this.canvas.requestPointerLock();
    });
    window.addEventListener("mousemove", (ev) => {
      if (document.pointerLockElement !== this.canvas) return;
      this.input.dyawDeg += ev.movementX * MOUSE_DEG_PER_PX;
      this.input.dpitchDeg -= ev.movementY * MOUSE_DEG_PER_PX;
    });
    window.addEventListener("dragover", (ev) => ev.preventDefault());
    window.addEventListener("drop", (ev) => {
      ev.preventDefault();
      const file = ev.dataTransfer?.files?.[0];
      if (!file) return;
      void file.arrayBuffer().then((buf) => {
        try {
          this.adopt(decodeBare(buf), file.name);
        } catch (err) {
          if (err instanceof SceneFormatError) {
            this.showMessage(`not a scene file: ${err.message}`);
          } else {
            throw err;
          }
        }
      });
    });
  }

  private resize() {
    const dpr = window.devicePixelRatio || 1;
    this.canvas.width = Math.round(this.canvas.clientWidth * dpr);
    this.canvas.height = Math.round(this.canvas.clientHeight * dpr);
  }

  private camera(): Camera {
    const h = this.canvas.height;
    const focal = 0.5 * h / Math.tan((FOV_Y_DEG * Math.PI) / 360);
    return {
      width: this.canvas.width,
      height: h,
      focal,
      cx: 0.5 * this.canvas.width,
      cy: 0.5 * h,
      rotation: rotationMatrix(this.state),
      position: [...this.state.position],
    };
  }

  private tick(timeMs: number) {
    const dt = this.lastTime === 0 ? 0 : Math.min((timeMs - this.lastTime) / 1000, 0.1);
    this.lastTime = timeMs;
    this.state = handleInput(this.state, this.input, dt);
    this.input.dyawDeg = 0;
    this.input.dpitchDeg = 0;

    if (this.scene) {
      const pos = this.state.position;
      if (
        this.lastSortPos === null ||
        needsResort(this.lastSortPos, pos, this.extent)
      ) {
        const order = depthOrder(this.scene.positions, this.scene.count, pos);
        this.renderer.setOrder(order);
        this.lastSortPos = [pos[0], pos[1], pos[2]];
      }
      this.renderer.draw(this.camera(), [0, 0, 0]);
    } else {
      this.renderer.draw(this.camera(), [0.05, 0.05, 0.08]);
    }

    this.frames += 1;
    if (timeMs - this.fpsSince >= 500) {
      const fps = (this.frames * 1000) / (timeMs - this.fpsSince);
      const n = this.scene ? this.scene.count : 0;
      this.hud.textContent = `${fps.toFixed(0)} fps | ${n} gaussians`;
      this.frames = 0;
      this.fpsSince = timeMs;
    }
    requestAnimationFrame((t) => this.tick(t));
  }
}

new App(document.body);
