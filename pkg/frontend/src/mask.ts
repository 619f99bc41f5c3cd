// Binary mask layer with circular brush/erase, independent of the canvas so
// it can be unit-tested.

export class MaskLayer {
  data: Uint8Array;

  constructor(public width: number, public height: number) {
    this.data = new Uint8Array(width * height);
  }

  at(x: number, y: number): number {
    return this.data[y * this.width + x];
  }

  paint(cx: number, cy: number, radius: number, value: 0 | 1): void {
    const r2 = radius * radius;
    const x0 = Math.max(0, Math.floor(cx - radius));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + radius));
    const y0 = Math.max(0, Math.floor(cy - radius));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) this.data[y * this.width + x] = value;
      }
    }
  }

  stroke(x0: number, y0: number, x1: number, y1: number, radius: number,
         value: 0 | 1): void {
    const steps = Math.max(1, Math.ceil(Math.hypot(x1 - x0, y1 - y0)));
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      this.paint(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, radius, value);
    }
  }

  clear(): void {
    this.data.fill(0);
  }

  isEmpty(): boolean {
    return !this.data.some((v) => v !== 0);
  }

  coverage(): number {
    let on = 0;
    for (const v of this.data) on += v;
    return on / this.data.length;
  }

  /** RGBA bytes for canvas putImageData: white-in-mask, transparent outside. */
  toOverlayRGBA(tint: [number, number, number, number] = [255, 64, 64, 110]): Uint8ClampedArray<ArrayBuffer> {
    const out = new Uint8ClampedArray(new ArrayBuffer(this.width * this.height * 4));
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i]) {
        out.set(tint, i * 4);
      }
    }
    return out;
  }

  /** Strict black/white RGBA, used to export the binary mask PNG. */
  toBinaryRGBA(): Uint8ClampedArray<ArrayBuffer> {
    const out = new Uint8ClampedArray(new ArrayBuffer(this.width * this.height * 4));
    for (let i = 0; i < this.data.length; i++) {
      const v = this.data[i] ? 255 : 0;
      out[i * 4] = v;
      out[i * 4 + 1] = v;
      out[i * 4 + 2] = v;
      out[i * 4 + 3] = 255;
    }
    return out;
  }
}
