// Typed client for the edit service plus a single-flight request pump that
// discards superseded responses.

export interface AttributeRange {
  name: string;
  min: number;
  max: number;
  overdrive_min: number;
  overdrive_max: number;
}

export interface AttributesInfo {
  attributes: AttributeRange[];
  object_classes: string[];
  resolution: number;
  default_steps: number;
}

export interface EditPayload {
  image: string;
  strengths: Record<string, number>;
  mask?: string;
  object_class?: string;
  steps?: number;
  guidance?: { image: number; text: number };
  seed?: number;
}

export interface EditResponse {
  image: string;
  elapsed_ms: number;
  seed: number;
  original_size: [number, number];
  letterbox: [number, number, number, number];
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(private base = "", private fetchFn: FetchLike = fetch.bind(globalThis)) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.base + path, init);
    const body = await res.json().catch(() => ({}));
    if (!res.ok) {
      const detail = typeof body?.detail === "string"
        ? body.detail
        : JSON.stringify(body?.detail ?? res.statusText);
      throw new ApiError(res.status, detail);
    }
    return body as T;
  }

  attributes(): Promise<AttributesInfo> {
    return this.request<AttributesInfo>("/v1/attributes");
  }

  health(): Promise<{ status: string; version: string; model_hash: string }> {
    return this.request("/v1/health");
  }

  edit(payload: EditPayload): Promise<EditResponse> {
    return this.request<EditResponse>("/v1/edit", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }
}

export interface PumpResult {
  seq: number;
  applied: boolean;
}

/**
 * Keeps at most one edit request in flight.  New payloads replace any queued
 * one; a response is applied only when nothing newer is pending, so stale
 * results (superseded slider values) never reach the screen.
 */
export class RequestPump {
  private pending: EditPayload | null = null;
  private inFlight = false;
  private seq = 0;
  private appliedSeq = 0;
  sent = 0;
  discarded = 0;

  constructor(
    private send: (p: EditPayload) => Promise<EditResponse>,
    private apply: (r: EditResponse, seq: number) => void,
    private onError: (e: unknown) => void = () => {},
  ) {}

  get busy(): boolean {
    return this.inFlight;
  }

  push(payload: EditPayload): number {
    this.pending = payload;
    const seq = ++this.seq;
    void this.drain();
    return seq;
  }

  private async drain(): Promise<void> {
    if (this.inFlight || this.pending === null) return;
    const payload = this.pending;
    const mySeq = this.seq;
    this.pending = null;
    this.inFlight = true;
    this.sent += 1;
    try {
      const res = await this.send(payload);
      if (this.pending !== null || mySeq < this.seq) {
        this.discarded += 1; // superseded while in flight
      } else if (mySeq > this.appliedSeq) {
        this.appliedSeq = mySeq;
        this.apply(res, mySeq);
      }
    } catch (err) {
      this.onError(err);
    } finally {
      this.inFlight = false;
      void this.drain();
    }
  }
}
