// Editor state: slider values clamped to service-advertised ranges, mask mode
// unlocking the over-drive extent, seed locking and a replayable request log.

import type { AttributeRange, EditPayload } from "./api.js";

export interface LoggedRequest {
  at: string;
  payload: EditPayload;
}

export class EditorState {
  attributes: AttributeRange[] = [];
  values: Record<string, number> = {};
  maskActive = false;
  seedLocked = true;
  seed = 7;
  requestLog: LoggedRequest[] = [];

  setRanges(attributes: AttributeRange[]): void {
    this.attributes = attributes;
    for (const attr of attributes) {
      if (!(attr.name in this.values)) this.values[attr.name] = 0;
    }
  }

  /** Active range for one slider; over-drive only while a mask is active. */
  range(name: string): { min: number; max: number } {
    const attr = this.attributes.find((a) => a.name === name);
    if (!attr) throw new Error(`unknown attribute ${name}`);
    return this.maskActive
      ? { min: attr.overdrive_min, max: attr.overdrive_max }
      : { min: attr.min, max: attr.max };
  }

  setValue(name: string, value: number): number {
    const { min, max } = this.range(name);
    const clamped = Math.min(max, Math.max(min, value));
    this.values[name] = clamped;
    return clamped;
  }

  setMaskActive(active: boolean): void {
    this.maskActive = active;
    if (!active) {
      // leaving mask mode re-clamps everything to the standard ranges
      for (const attr of this.attributes) {
        this.values[attr.name] = Math.min(
          attr.max,
          Math.max(attr.min, this.values[attr.name] ?? 0),
        );
      }
    }
  }

  allZero(): boolean {
    return this.attributes.every((a) => (this.values[a.name] ?? 0) === 0);
  }

  buildPayload(
    imageB64: string,
    maskB64: string | null,
    objectClass: string,
    steps: number,
  ): EditPayload {
    const payload: EditPayload = {
      image: imageB64,
      strengths: { ...this.values },
      steps,
    };
    if (objectClass) payload.object_class = objectClass;
    if (this.maskActive && maskB64) payload.mask = maskB64;
    if (this.seedLocked) payload.seed = this.seed;
    this.requestLog.push({
      at: new Date().toISOString(),
      payload: { ...payload, image: `<${imageB64.length} b64 bytes>` },
    });
    return payload;
  }

  exportLog(): string {
    return JSON.stringify(this.requestLog, null, 1);
  }
}
