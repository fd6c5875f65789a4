/** Thin typed client for the annotation server; fetch is injectable for tests. */

import type { AnnotationRequest, HitView } from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface PostResult {
  ok: boolean;
  status: number;
  detail?: string;
}

export class ApiClient {
  constructor(
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
    private readonly baseUrl: string = "",
  ) {}

  /** Next unfinished HIT for the worker, or null when everything is done. */
  async fetchHit(workerId: string): Promise<HitView | null> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/api/hit?worker=${encodeURIComponent(workerId)}`,
    );
    if (!resp.ok) {
      throw new Error(`hit fetch failed with HTTP ${resp.status}`);
    }
    const body = await resp.json();
    if (body.done) {
      return null;
    }
    return body as HitView;
  }

  async postAnnotation(request: AnnotationRequest): Promise<PostResult> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/annotation`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (resp.ok) {
      return { ok: true, status: resp.status };
    }
    let detail = "";
    try {
      const body = await resp.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    } catch {
      detail = resp.statusText;
    }
    return { ok: false, status: resp.status, detail };
  }
}
