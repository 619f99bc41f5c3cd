// Slider panel wiring: upload an image, drag attribute sliders, optionally
// paint a mask, and compare the returned edit against the original with a
// swipe control.

import { ApiClient, RequestPump, type EditResponse } from "./api.js";
import { debounce } from "./debounce.js";
import { MaskLayer } from "./mask.js";
import { EditorState } from "./state.js";

const DEBOUNCE_MS = 250;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export class App {
  private api = new ApiClient("");
  private state = new EditorState();
  private mask: MaskLayer | null = null;
  private imageB64: string | null = null;
  private resolution = 32;
  private objectClass = "";
  private brushRadius = 3;
  private erasing = false;
  private pump: RequestPump;
  private scheduleEdit: (() => void) & { cancel: () => void };

  constructor() {
    this.pump = new RequestPump(
      (p) => this.api.edit(p),
      (r) => this.showResult(r),
      (e) => this.showError(e),
    );
    this.scheduleEdit = debounce(() => this.requestEdit(), DEBOUNCE_MS);
  }

  async start(): Promise<void> {
    const info = await this.api.attributes();
    this.resolution = info.resolution;
    this.state.setRanges(info.attributes);
    const classSelect = el<HTMLSelectElement>("object-class");
    for (const cls of ["", ...info.object_classes]) {
      const opt = document.createElement("option");
      opt.value = cls;
      opt.textContent = cls || "(no prompt)";
      classSelect.appendChild(opt);
    }
    classSelect.addEventListener("change", () => {
      this.objectClass = classSelect.value;
      this.scheduleEdit();
    });
    this.buildSliders();
    this.wireUpload();
    this.wireMaskTools();
    this.wireSeedAndSwipe();
    el<HTMLButtonElement>("export-log").addEventListener("click", () =>
      this.exportLog());
  }

  private buildSliders(): void {
    const panel = el<HTMLDivElement>("sliders");
    panel.innerHTML = "";
    for (const attr of this.state.attributes) {
      const row = document.createElement("div");
      row.className = "slider-row";
      const label = document.createElement("label");
      label.textContent = attr.name;
      const input = document.createElement("input");
      input.type = "range";
      input.step = "0.01";
      input.id = `slider-${attr.name}`;
      const value = document.createElement("span");
      value.id = `value-${attr.name}`;
      value.textContent = "0.00";
      const sync = () => {
        const { min, max } = this.state.range(attr.name);
        input.min = String(min);
        input.max = String(max);
        input.value = String(this.state.values[attr.name]);
        value.textContent = Number(input.value).toFixed(2);
      };
      sync();
      input.addEventListener("input", () => {
        const v = this.state.setValue(attr.name, Number(input.value));
        value.textContent = v.toFixed(2);
        this.updateControlBadge();
        this.scheduleEdit();
      });
      row.append(label, input, value);
      panel.appendChild(row);
      (input as HTMLInputElement & { syncRange?: () => void }).syncRange = sync;
    }
  }

  private refreshSliderRanges(): void {
    for (const attr of this.state.attributes) {
      const input = el<HTMLInputElement & { syncRange?: () => void }>(
        `slider-${attr.name}`);
      const { min, max } = this.state.range(attr.name);
      input.min = String(min);
      input.max = String(max);
      input.value = String(this.state.values[attr.name]);
      el<HTMLSpanElement>(`value-${attr.name}`).textContent =
        Number(input.value).toFixed(2);
    }
  }

  private wireUpload(): void {
    const picker = el<HTMLInputElement>("file");
    picker.addEventListener("change", () => {
      const file = picker.files?.[0];
      if (!file) return;
      const img = new Image();
      img.onload = () => {
        const canvas = el<HTMLCanvasElement>("source");
        canvas.width = img.width;
        canvas.height = img.height;
        canvas.getContext("2d")!.drawImage(img, 0, 0);
        this.imageB64 = canvas.toDataURL("image/png").split(",")[1];
        this.mask = new MaskLayer(img.width, img.height);
        const overlay = el<HTMLCanvasElement>("mask-overlay");
        overlay.width = img.width;
        overlay.height = img.height;
        el<HTMLDivElement>("workspace").style.display = "";
        this.scheduleEdit();
      };
      img.src = URL.createObjectURL(file);
    });
  }

  private wireMaskTools(): void {
    const toggle = el<HTMLInputElement>("mask-mode");
    const overlay = el<HTMLCanvasElement>("mask-overlay");
    toggle.addEventListener("change", () => {
      this.state.setMaskActive(toggle.checked);
      overlay.style.pointerEvents = toggle.checked ? "auto" : "none";
      overlay.style.opacity = toggle.checked ? "1" : "0.4";
      this.refreshSliderRanges();
      this.scheduleEdit();
    });
    el<HTMLInputElement>("brush-size").addEventListener("input", (e) => {
      this.brushRadius = Number((e.target as HTMLInputElement).value);
    });
    el<HTMLInputElement>("erase-mode").addEventListener("change", (e) => {
      this.erasing = (e.target as HTMLInputElement).checked;
    });
    el<HTMLButtonElement>("clear-mask").addEventListener("click", () => {
      this.mask?.clear();
      this.drawMaskOverlay();
      this.scheduleEdit();
    });
    let last: [number, number] | null = null;
    const pos = (ev: PointerEvent): [number, number] => {
      const rect = overlay.getBoundingClientRect();
      return [
        ((ev.clientX - rect.left) / rect.width) * overlay.width,
        ((ev.clientY - rect.top) / rect.height) * overlay.height,
      ];
    };
    overlay.addEventListener("pointerdown", (ev) => {
      if (!this.mask || !this.state.maskActive) return;
      overlay.setPointerCapture(ev.pointerId);
      last = pos(ev);
      this.mask.paint(last[0], last[1], this.brushRadius, this.erasing ? 0 : 1);
      this.drawMaskOverlay();
    });
    overlay.addEventListener("pointermove", (ev) => {
      if (!this.mask || !last) return;
      const p = pos(ev);
      this.mask.stroke(last[0], last[1], p[0], p[1], this.brushRadius,
        this.erasing ? 0 : 1);
      last = p;
      this.drawMaskOverlay();
    });
    overlay.addEventListener("pointerup", () => {
      last = null;
      this.scheduleEdit();
    });
  }

  private wireSeedAndSwipe(): void {
    const lock = el<HTMLInputElement>("seed-lock");
    lock.checked = this.state.seedLocked;
    lock.addEventListener("change", () => {
      this.state.seedLocked = lock.checked;
    });
    const seed = el<HTMLInputElement>("seed");
    seed.value = String(this.state.seed);
    seed.addEventListener("change", () => {
      this.state.seed = Number(seed.value) | 0;
      this.scheduleEdit();
    });
    const swipe = el<HTMLInputElement>("swipe");
    swipe.addEventListener("input", () => {
      el<HTMLDivElement>("result-pane").style.clipPath =
        `inset(0 0 0 ${swipe.value}%)`;
    });
  }

  private drawMaskOverlay(): void {
    if (!this.mask) return;
    const overlay = el<HTMLCanvasElement>("mask-overlay");
    const ctx = overlay.getContext("2d")!;
    const image = new ImageData(this.mask.toOverlayRGBA(), this.mask.width,
      this.mask.height);
    ctx.putImageData(image, 0, 0);
  }

  private maskB64(): string | null {
    if (!this.mask || this.mask.isEmpty()) return null;
    const canvas = document.createElement("canvas");
    canvas.width = this.mask.width;
    canvas.height = this.mask.height;
    canvas.getContext("2d")!.putImageData(
      new ImageData(this.mask.toBinaryRGBA(), this.mask.width, this.mask.height),
      0, 0);
    return canvas.toDataURL("image/png").split(",")[1];
  }

  private updateControlBadge(): void {
    el<HTMLSpanElement>("control-badge").style.display =
      this.state.allZero() ? "" : "none";
  }

  private requestEdit(): void {
    if (!this.imageB64) return;
    const payload = this.state.buildPayload(
      this.imageB64, this.maskB64(), this.objectClass, 20);
    el<HTMLSpanElement>("status").textContent = "editing…";
    this.pump.push(payload);
  }

  private showResult(res: EditResponse): void {
    const img = el<HTMLImageElement>("result");
    img.src = `data:image/png;base64,${res.image}`;
    el<HTMLSpanElement>("status").textContent =
      `done in ${res.elapsed_ms.toFixed(0)} ms (seed ${res.seed})`;
    this.updateControlBadge();
  }

  private showError(err: unknown): void {
    const message = err instanceof Error ? err.message : String(err);
    const status = el<HTMLSpanElement>("status");
    status.textContent = `error: ${message}`;
    const retry = document.createElement("button");
    retry.textContent = "retry";
    retry.addEventListener("click", () => {
      retry.remove();
      this.requestEdit();
    });
    status.appendChild(retry);
  }

  private exportLog(): void {
    const blob = new Blob([this.state.exportLog()],
      { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "matedit-session-log.json";
    a.click();
  }
}

if (typeof document !== "undefined" && document.getElementById("sliders")) {
  new App().start().catch((err) => {
    document.getElementById("status")!.textContent =
      `service unreachable: ${err}`;
  });
}
